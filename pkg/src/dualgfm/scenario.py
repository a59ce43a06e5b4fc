"""Case-file format, built-in WSCC 9-bus cases and disturbance schedules.

File format (``dualgfm-case v1``)::

    dualgfm-case v1
    # comment
    [system]
    base_mva = 100
    base_freq_hz = 50
    omega_ref = 1

    [bus]
    id=1 kind=slack v=1.04 theta=0
    [branch]
    from=1 to=4 r=0 x=0.0576
    [dualgfm]
    bus=1 rating=425 K=0.1
    [pll]
    bus=1 T_pll=0.02
    [pss]
    bus=1 K_pss=0.5 T_w=5 T1=0.2 T2=0.05
    [event]
    t=1 kind=load_scale bus=5 factor=0.8

The first non-blank line is the version header. ``[system]`` holds
``key = value`` lines; every other section holds one row per line made of
whitespace-separated ``key=value`` tokens. Angles in the file are degrees;
``theta_rad`` may be given instead of ``theta`` where an exact radian value
must survive a round trip. ``[pll]`` and ``[pss]`` rows attach to the
dual-GFM at the same bus. Section order is free; sections may repeat.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .dae import Event
from .devices import DualGfmDevice, MachineDevice, PllState, PssState
from .errors import CaseValidationError
from .network import Branch, Bus, NetworkCase

HEADER = "dualgfm-case v1"


@dataclass
class CaseData:
    """A parsed case: network, dynamic devices and an optional event schedule."""

    network: NetworkCase
    devices: list = field(default_factory=list)
    events: list[Event] = field(default_factory=list)


# key -> (attribute, converter); "mandatory" keys listed separately
def _int(text):
    return int(text)


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SYSTEM_KEYS = {"base_mva": float, "base_freq_hz": float, "omega_ref": float, "omega_b": float}

_BUS_KEYS = {"id": _int, "kind": str, "v": float, "theta": float, "theta_rad": float,
             "p_load": float, "q_load": float, "shunt_g": float, "shunt_b": float,
             "p_gen": float, "q_gen": float}
_BRANCH_KEYS = {"from": _int, "to": _int, "r": float, "x": float, "b": float, "tap": float}
_MACHINE_KEYS = {"bus": _int, "rating": float, "M": float, "D": float, "r_a": float, "x_d": float,
                 "x_d_t": float, "T_d0_t": float, "T_m": float, "R": float, "T_r": float, "K_r": float,
                 "governor": _bool, "avr": _bool}
_DUAL_KEYS = {"bus": _int, "rating": float, "K": float, "M_t": float, "D_t": float, "T_m_t": float,
              "R_t": float, "K_q": float, "T_q": float, "K_r_t": float, "T_r_t": float,
              "perfect_tracking": _bool}
_PLL_KEYS = {"bus": _int, "T_pll": float}
_PSS_KEYS = {"bus": _int, "K_pss": float, "T_w": float, "T1": float, "T2": float, "T3": float,
             "T4": float, "lo": float, "hi": float}
_EVENT_KEYS = {"t": float, "kind": str, "bus": _int, "factor": float, "g_fault": float,
               "b_fault": float, "device": _int}

_TABLES = {"bus": (_BUS_KEYS, ("id",)), "branch": (_BRANCH_KEYS, ("from", "to", "x")),
           "machine": (_MACHINE_KEYS, ("bus",)), "dualgfm": (_DUAL_KEYS, ("bus",)),
           "pll": (_PLL_KEYS, ("bus",)), "pss": (_PSS_KEYS, ("bus",)),
           "event": (_EVENT_KEYS, ("t", "kind"))}


def _tokens(line: str):
    """Yield (column, token) for whitespace-separated tokens of ``line``."""
    col = 0
    for part in line.split():
        col = line.index(part, col)
        yield col + 1, part
        col += len(part)


def _row(line: str, lineno: int, keys: dict, mandatory: tuple[str, ...]) -> dict:
    values: dict = {}
    for col, tok in _tokens(line):
        if "=" not in tok:
            raise CaseValidationError(f"expected key=value, got {tok!r}", lineno, col)
        key, _, text = tok.partition("=")
        if key not in keys:
            raise CaseValidationError(f"unknown key {key!r}", lineno, col)
        if key in values:
            raise CaseValidationError(f"duplicate key {key!r}", lineno, col)
        try:
            values[key] = keys[key](text)
        except ValueError as exc:
            raise CaseValidationError(f"bad value for {key!r}: {exc}", lineno, col + len(key) + 1) from None
    for key in mandatory:
        if key not in values:
            raise CaseValidationError(f"missing mandatory field {key!r}", lineno, 1)
    values["_line"] = lineno
    return values


def parse_case(text: str) -> CaseData:
    """Parse and validate case text; errors carry line and column."""
    lines = text.splitlines()
    system: dict = {}
    rows: dict[str, list[dict]] = {name: [] for name in _TABLES}
    section = None
    seen_header = False
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if not seen_header:
            if line.strip() != HEADER:
                raise CaseValidationError(f"expected header {HEADER!r}", lineno, 1)
            seen_header = True
            continue
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise CaseValidationError("unterminated section header", lineno, len(raw.rstrip()) + 1)
            section = stripped[1:-1].strip()
            if section != "system" and section not in _TABLES:
                raise CaseValidationError(f"unknown section [{section}]", lineno, raw.index("[") + 2)
            continue
        if section is None:
            raise CaseValidationError("data before any section header", lineno, 1)
        if section == "system":
            if "=" not in line:
                raise CaseValidationError("expected key = value", lineno, 1)
            key, _, text_val = line.partition("=")
            key = key.strip()
            col = raw.index(key) + 1 if key else 1
            if key not in _SYSTEM_KEYS:
                raise CaseValidationError(f"unknown key {key!r}", lineno, col)
            try:
                system[key] = _SYSTEM_KEYS[key](text_val.strip())
            except ValueError as exc:
                raise CaseValidationError(f"bad value for {key!r}: {exc}", lineno, raw.index("=") + 2) from None
            continue
        keys, mandatory = _TABLES[section]
        rows[section].append(_row(line, lineno, keys, mandatory))
    if not seen_header:
        raise CaseValidationError(f"missing header {HEADER!r}", 1, 1)
    return _build(system, rows)


def _build(system: dict, rows: dict[str, list[dict]]) -> CaseData:
    omega_ref = system.get("omega_ref", 1.0)
    # angles in rad, speeds in pu: the angle rate of 1 pu speed deviation
    omega_b = system.get("omega_b", 2.0 * math.pi * system.get("base_freq_hz", 50.0))
    if not omega_b > 0:
        raise CaseValidationError("omega_b must be positive")
    buses = []
    for r in rows["bus"]:
        if "theta" in r and "theta_rad" in r:
            raise CaseValidationError("give either theta or theta_rad, not both", r["_line"], 1)
        theta = r.get("theta_rad", math.radians(r["theta"]) if "theta" in r else 0.0)
        kw = {k: v for k, v in r.items() if k not in ("_line", "theta", "theta_rad")}
        buses.append(Bus(theta=theta, **kw))
    branches = [Branch(from_bus=r["from"], to_bus=r["to"], r=r.get("r", 0.0), x=r["x"],
                       b=r.get("b", 0.0), tap=r.get("tap", 1.0)) for r in rows["branch"]]
    network = NetworkCase(buses, branches, base_mva=system.get("base_mva", 100.0),
                          base_freq_hz=system.get("base_freq_hz", 50.0), omega_ref=omega_ref)
    try:
        network.validate()
    except CaseValidationError as exc:
        raise CaseValidationError(str(exc), _locate(rows, exc), 1) from None
    known = set(network.bus_index)

    def check_bus(r, key="bus"):
        if r[key] not in known:
            raise CaseValidationError(f"reference to unknown bus {r[key]}", r["_line"], 1)

    devices = []
    used: dict[int, int] = {}
    for r in rows["machine"]:
        check_bus(r)
        kw = {k: v for k, v in r.items() if k != "_line"}
        devices.append(MachineDevice(omega_ref=omega_ref, omega_b=omega_b, **kw))
    for r in rows["dualgfm"]:
        check_bus(r)
        kw = {k: v for k, v in r.items() if k != "_line"}
        devices.append(DualGfmDevice(omega_ref=omega_ref, pll=PllState(omega_ref=omega_ref, omega_b=omega_b), **kw))
    for dev, r in zip(devices, rows["machine"] + rows["dualgfm"]):
        if dev.bus in used:
            raise CaseValidationError(f"second device at bus {dev.bus}", r["_line"], 1)
        used[dev.bus] = len(used)
        if dev.rating <= 0:
            raise CaseValidationError("device rating must be positive", r["_line"], 1)
    duals = {d.bus: d for d in devices if isinstance(d, DualGfmDevice)}
    for name in ("pll", "pss"):
        attached = set()
        for r in rows[name]:
            check_bus(r)
            if r["bus"] not in duals:
                raise CaseValidationError(f"[{name}] row at bus {r['bus']} has no dual-GFM", r["_line"], 1)
            if r["bus"] in attached:
                raise CaseValidationError(f"second [{name}] row for bus {r['bus']}", r["_line"], 1)
            attached.add(r["bus"])
            kw = {k: v for k, v in r.items() if k not in ("_line", "bus")}
            if name == "pll":
                duals[r["bus"]].pll = PllState(omega_ref=omega_ref, omega_b=omega_b, **kw)
            else:
                duals[r["bus"]].pss = PssState(omega_ref=omega_ref, **kw)
    for dev, r in zip(devices, rows["machine"] + rows["dualgfm"]):
        try:
            dev.validate()
        except ValueError as exc:
            raise CaseValidationError(str(exc), r["_line"], 1) from None
    events = []
    for r in rows["event"]:
        kw = {k: v for k, v in r.items() if k not in ("_line", "t")}
        ev = Event(t_event=r["t"], **kw)
        try:
            ev.validate()
        except CaseValidationError as exc:
            raise CaseValidationError(str(exc), r["_line"], 1) from None
        if ev.bus is not None:
            check_bus(r)
        if ev.device is not None and not 1 <= ev.device <= len(devices):
            raise CaseValidationError(f"event references unknown device {ev.device}", r["_line"], 1)
        events.append(ev)
    return CaseData(network, devices, events)


def _locate(rows, exc) -> int | None:
    msg = str(exc)
    for r in rows["branch"]:
        if f"branch {r['from']}-{r['to']}" in msg:
            return r["_line"]
    for r in rows["bus"]:
        if f"bus {r['id']}" in msg:
            return r["_line"]
    return None


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _changed(obj, defaults, names):
    out = []
    for name in names:
        val = getattr(obj, name)
        if name in ("bus",) or val != getattr(defaults, name):
            out.append(f"{name}={_fmt(val)}")
    return out


def serialize_case(data: CaseData) -> str:
    """Text form of ``data``; ``parse_case`` of the result reproduces ``data``."""
    net = data.network
    out = [HEADER, "", "[system]", f"base_mva = {_fmt(float(net.base_mva))}",
           f"base_freq_hz = {_fmt(float(net.base_freq_hz))}", f"omega_ref = {_fmt(float(net.omega_ref))}",
           ]
    omegas = {d.omega_b for d in data.devices if isinstance(d, MachineDevice)}
    omegas |= {d.pll.omega_b for d in data.devices if isinstance(d, DualGfmDevice)}
    if omegas:
        out.append(f"omega_b = {_fmt(float(omegas.pop()))}")
    out += ["", "[bus]"]
    for b in net.buses:
        parts = [f"id={b.id}", f"kind={b.kind}", f"v={_fmt(float(b.v))}"]
        deg = math.degrees(b.theta)
        parts.append(f"theta={_fmt(deg)}" if math.radians(deg) == b.theta else f"theta_rad={_fmt(b.theta)}")
        for name in ("p_load", "q_load", "shunt_g", "shunt_b", "p_gen", "q_gen"):
            val = float(getattr(b, name))
            if val != 0.0:
                parts.append(f"{name}={_fmt(val)}")
        out.append(" ".join(parts))
    out += ["", "[branch]"]
    for br in net.branches:
        out.append(f"from={br.from_bus} to={br.to_bus} r={_fmt(float(br.r))} x={_fmt(float(br.x))} "
                   f"b={_fmt(float(br.b))} tap={_fmt(float(br.tap))}")
    machines = [d for d in data.devices if isinstance(d, MachineDevice)]
    duals = [d for d in data.devices if isinstance(d, DualGfmDevice)]
    if machines:
        out += ["", "[machine]"]
        names = [k for k in _MACHINE_KEYS]
        for d in machines:
            out.append(" ".join(f"{k}={_fmt(getattr(d, k))}" for k in names))
    if duals:
        out += ["", "[dualgfm]"]
        for d in duals:
            out.append(" ".join(f"{k}={_fmt(getattr(d, k))}" for k in _DUAL_KEYS))
        out += ["", "[pll]"]
        for d in duals:
            out.append(f"bus={d.bus} T_pll={_fmt(float(d.pll.T_pll))}")
        with_pss = [d for d in duals if d.pss is not None]
        if with_pss:
            out += ["", "[pss]"]
            for d in with_pss:
                out.append(f"bus={d.bus} " + " ".join(f"{k}={_fmt(float(getattr(d.pss, k)))}"
                                                      for k in _PSS_KEYS if k != "bus"))
    if data.events:
        out += ["", "[event]"]
        for ev in data.events:
            parts = [f"t={_fmt(float(ev.t_event))}", f"kind={ev.kind}"]
            if ev.bus is not None:
                parts.append(f"bus={ev.bus}")
            if ev.device is not None:
                parts.append(f"device={ev.device}")
            if ev.kind == "load_scale":
                parts.append(f"factor={_fmt(float(ev.factor))}")
            if ev.kind == "fault_apply":
                parts += [f"g_fault={_fmt(float(ev.g_fault))}", f"b_fault={_fmt(float(ev.b_fault))}"]
            out.append(" ".join(parts))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# built-in cases
# --------------------------------------------------------------------------

VARIANTS = ("machines", "dualgfm", "mixed", "irish")
_CASE_FILES = {"dualgfm": "wscc9_dualgfm.case", "machines": "wscc9_machines.case",
               "mixed": "wscc9_mixed.case", "irish": "wscc9_irish.case"}


def builtin_wscc9(variant: str = "dualgfm") -> CaseData:
    """WSCC 9-bus case with the requested generator technology."""
    if variant not in _CASE_FILES:
        raise CaseValidationError(f"unknown WSCC variant {variant!r}; choose from {', '.join(VARIANTS)}")
    text = resources.files("dualgfm").joinpath("cases", _CASE_FILES[variant]).read_text(encoding="utf-8")
    return parse_case(text)


BUILTIN_NAMES = {f"wscc9-{v}": v for v in VARIANTS}


def load_case(name_or_path: str) -> CaseData:
    """Built-in name (``wscc9-dualgfm`` etc.) or path to a case file."""
    if name_or_path in BUILTIN_NAMES:
        return builtin_wscc9(BUILTIN_NAMES[name_or_path])
    path = Path(name_or_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CaseValidationError(f"cannot read case file {name_or_path!r}: {exc.strerror}") from None
    except UnicodeDecodeError as exc:
        raise CaseValidationError(f"case file is not UTF-8: {exc}") from None
    return parse_case(text)


def paper_events(scenario: str, base_freq_hz: float = 50.0) -> list[Event]:
    """Disturbance schedules: ``fig3`` load outage, ``fig4`` three-cycle fault."""
    if scenario == "fig3":
        return [Event(1.0, "load_scale", bus=5, factor=0.8)]
    if scenario == "fig4":
        clear = 1.0 + 3.0 / base_freq_hz
        return [Event(1.0, "fault_apply", bus=7), Event(clear, "fault_clear", bus=7)]
    raise CaseValidationError(f"unknown scenario {scenario!r}; choose fig3 or fig4")


def with_events(data: CaseData, events: list[Event]) -> CaseData:
    return dataclasses.replace(data, events=list(events))

"""Differential-algebraic system assembly, equilibrium and time integration.

Differential states ``x`` are all device states concatenated; algebraic
variables ``y`` are ``[v_1..v_n, theta_1..theta_n]``. Residual functions accept
either a vector or a 2-D array whose columns are independent points, which
is how finite-difference Jacobians are evaluated in a single call.
"""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .devices import DualGfmDevice, InfiniteBus, wrap_angle
from .errors import (AssemblyError, CaseValidationError, ConvergenceError, DomainError,
                     EventError, ParameterError, StepFailure)
from .network import (AdmittanceMatrix, NetworkCase, PowerFlowResult, apply_admittance_delta,
                      assemble_ybus, load_admittances, power_injections, solve_powerflow)

logger = logging.getLogger(__name__)

EVENT_KINDS = ("load_scale", "fault_apply", "fault_clear", "device_trip")


@dataclass
class SolverConfig:
    dt: float = 0.005
    t_stop: float = 10.0
    newton_tol: float = 1e-8
    max_newton: int = 15
    jac_refresh: str = "iteration"
    fd_step: float = 1e-7
    max_halvings: int = 4

    def validate(self) -> None:
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if not self.t_stop >= self.dt:
            raise ParameterError("t_stop must be at least dt")
        if not self.newton_tol > 0:
            raise ParameterError("newton_tol must be positive")
        if self.jac_refresh not in ("iteration", "step"):
            raise ParameterError("jac_refresh must be 'iteration' or 'step'")


@dataclass
class SystemState:
    x: np.ndarray
    y: np.ndarray
    t: float = 0.0
    freq_dev: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.x.copy(), self.y.copy(), self.t, self.freq_dev)


@dataclass
class Event:
    t_event: float
    kind: str
    bus: int | None = None
    factor: float = 1.0
    g_fault: float = 1e4
    b_fault: float = 0.0
    device: int | None = None

    def validate(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise CaseValidationError(f"unknown event kind {self.kind!r}")
        if not self.t_event >= 0:
            raise CaseValidationError("event time must be non-negative")
        if self.kind == "device_trip":
            if self.device is None:
                raise CaseValidationError("device_trip needs a device number")
        elif self.bus is None:
            raise CaseValidationError(f"{self.kind} needs a bus")

    def describe(self) -> str:
        if self.kind == "load_scale":
            return f"load_scale bus={self.bus} factor={self.factor!r}"
        if self.kind == "fault_apply":
            return f"fault_apply bus={self.bus} g={self.g_fault!r} b={self.b_fault!r}"
        if self.kind == "fault_clear":
            return f"fault_clear bus={self.bus}"
        return f"device_trip device={self.device}"


def validate_events(events: Sequence[Event]) -> None:
    open_faults: set[int] = set()
    for ev in sorted(events, key=lambda e: e.t_event):
        ev.validate()
        if ev.kind == "fault_apply":
            open_faults.add(ev.bus)
        elif ev.kind == "fault_clear":
            if ev.bus not in open_faults:
                raise CaseValidationError(f"fault_clear at bus {ev.bus} without a preceding fault_apply")
            open_faults.discard(ev.bus)


def _angle_base(dev) -> float | None:
    if hasattr(dev, "omega_b"):
        return float(dev.omega_b)
    pll = getattr(dev, "pll", None)
    return float(pll.omega_b) if pll is not None else None


class DaeSystem:
    """Device dynamics coupled through the network current balance."""

    def __init__(self, case: NetworkCase, devices: Sequence, Y: AdmittanceMatrix, load_y: np.ndarray):
        self.case = case
        self.devices = list(devices)
        self.n_bus = case.n_bus
        index = case.bus_index
        seen = set()
        for dev in self.devices:
            if dev.bus not in index:
                raise CaseValidationError(f"device at unknown bus {dev.bus}")
            if dev.bus in seen:
                raise CaseValidationError(f"more than one device at bus {dev.bus}")
            seen.add(dev.bus)
            dev.validate()
        self.bus_pos = [index[dev.bus] for dev in self.devices]
        self.scale = [getattr(dev, "rating", case.base_mva) / case.base_mva for dev in self.devices]
        self.slices: list[slice] = []
        names: list[str] = []
        angle = []
        start = 0
        for k, dev in enumerate(self.devices):
            m = len(dev.state_names)
            self.slices.append(slice(start, start + m))
            names += [f"dev{k + 1}.{n}" for n in dev.state_names]
            angle += [n in dev.angle_states for n in dev.state_names]
            start += m
        self.nx = start
        self.ny = 2 * self.n_bus
        self.state_names = names
        self.algebraic_names = ([f"bus{b.id}.v" for b in case.buses]
                                + [f"bus{b.id}.theta" for b in case.buses])
        self.angle_mask = np.array(angle, dtype=bool)
        self.infinite = [(k, self.bus_pos[k]) for k, d in enumerate(self.devices) if isinstance(d, InfiniteBus)]
        self.rotation_pinned = any(d.breaks_rotation for d in self.devices)
        bases = {_angle_base(d) for d in self.devices} - {None}
        if len(bases) > 1:
            raise ParameterError(f"devices disagree on omega_b: {sorted(bases)}")
        self.omega_b = bases.pop() if bases else 1.0
        self.Y0 = Y
        self.load_y0 = np.asarray(load_y, dtype=complex)
        self.reset()

    # -- mutable network state (events) -----------------------------------
    def reset(self) -> None:
        self.Y = self.Y0
        self._Ydense = self.Y.toarray()
        self.load_y = self.load_y0.copy()
        self.faults: dict[int, complex] = {}
        self.in_service = np.ones(len(self.devices), dtype=bool)

    def fresh(self) -> "DaeSystem":
        new = copy.copy(self)
        new.reset()
        return new

    def set_admittance(self, Y: AdmittanceMatrix) -> None:
        self.Y = Y
        self._Ydense = Y.toarray()

    # -- residuals -----------------------------------------------------------
    def _check(self, x, y):
        if x.shape[0] != self.nx or y.shape[0] != self.ny:
            raise AssemblyError(f"expected {self.nx} states and {self.ny} algebraic variables, "
                                f"got {x.shape[0]} and {y.shape[0]}")

    def f(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self._check(x, y)
        n = self.n_bus
        v, th = y[:n], y[n:]
        out = np.zeros(x.shape)
        for k, dev in enumerate(self.devices):
            sl = self.slices[k]
            if sl.start == sl.stop or not self.in_service[k]:
                continue
            b = self.bus_pos[k]
            derivs = dev.bind(x[sl]).derivatives(v[b], th[b])
            out[sl] = np.broadcast_arrays(*derivs)
        return out

    def device_power(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Complex device injections per bus on the system base."""
        n = self.n_bus
        v, th = y[:n], y[n:]
        s = np.zeros(y[:n].shape, dtype=complex)
        for k, dev in enumerate(self.devices):
            if isinstance(dev, InfiniteBus) or not self.in_service[k]:
                continue
            b = self.bus_pos[k]
            p, q = dev.bind(x[self.slices[k]]).injection(v[b], th[b])
            s[b] = s[b] + (p + 1j * q) * self.scale[k]
        return s

    def network_power(self, y: np.ndarray) -> np.ndarray:
        n = self.n_bus
        vc = y[:n] * np.exp(1j * y[n:])
        return vc * np.conj(self._Ydense @ vc)

    def g(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        self._check(x, y)
        n = self.n_bus
        mis = self.network_power(y) - self.device_power(x, y)
        out = np.concatenate([mis.real, mis.imag])
        for k, b in self.infinite:
            if self.in_service[k]:
                dev = self.devices[k]
                out[b] = y[b] - dev.v
                out[n + b] = y[n + b] - dev.theta
        return out

    def g_current(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Current-balance form ``Y V - conj(S_dev / V)`` of :meth:`g`.

        It has the same roots as the power form except the spurious ``V_i = 0``
        ones, where the power mismatch vanishes trivially; all Newton solves use it.
        """
        self._check(x, y)
        n = self.n_bus
        vc = y[:n] * np.exp(1j * y[n:])
        mis = self._Ydense @ vc - np.conj(self.device_power(x, y) / vc)
        out = np.concatenate([mis.real, mis.imag])
        for k, b in self.infinite:
            if self.in_service[k]:
                dev = self.devices[k]
                out[b] = y[b] - dev.v
                out[n + b] = y[n + b] - dev.theta
        return out

    def residuals(self, state: SystemState) -> tuple[np.ndarray, np.ndarray]:
        return self.f(state.x, state.y), self.g(state.x, state.y)

    def state_index(self, device: int, name: str) -> int:
        """Slot of state ``name`` of the 1-based ``device`` in ``x``."""
        dev = self.devices[device - 1]
        return self.slices[device - 1].start + dev.state_names.index(name)

    def bound_devices(self, x: np.ndarray) -> list:
        return [dev.bind(x[self.slices[k]]) for k, dev in enumerate(self.devices)]


def assemble_residuals(system: DaeSystem, state: SystemState) -> tuple[np.ndarray, np.ndarray]:
    x, y = np.asarray(state.x, dtype=float), np.asarray(state.y, dtype=float)
    return system.f(x, y), system.g(x, y)


# --------------------------------------------------------------------------
# Newton machinery
# --------------------------------------------------------------------------

def fd_jacobian(resid: Callable[[np.ndarray], np.ndarray], z: np.ndarray, r0: np.ndarray,
                step: float = 1e-7) -> np.ndarray:
    """Forward-difference Jacobian, all columns evaluated in one batched call."""
    h = step * np.maximum(1.0, np.abs(z))
    Z = z[:, None] + np.diag(h)
    return (resid(Z) - r0[:, None]) / h


def _inf(r: np.ndarray) -> float:
    return float(np.max(np.abs(r), initial=0.0))


def newton(resid, z0, tol, max_iter, fd_step=1e-7, jac=None, refresh="iteration"):
    """Plain Newton iteration; returns (z, iterations, jacobian)."""
    z = np.array(z0, dtype=float)
    r = resid(z)
    norm = _inf(r)
    history = [norm]
    it = 0
    J = jac
    while not norm < tol:
        if it >= max_iter or not math.isfinite(norm):
            raise ConvergenceError(f"Newton did not converge in {it} iterations", norm, history)
        if J is None or refresh == "iteration":
            J = fd_jacobian(resid, z, r, fd_step)
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Jacobian ({exc})", norm, history) from None
        z = z + dz
        try:
            r = resid(z)
        except DomainError:
            raise ConvergenceError("Newton iterate left the model domain", norm, history) from None
        norm = _inf(r)
        history.append(norm)
        it += 1
    return z, it, J


def _damped_newton(resid, z0, tol, max_iter=60, fd_step=1e-7, target=1e-13):
    """Newton with backtracking; keeps iterating past ``tol`` down to ``target``."""
    z = np.array(z0, dtype=float)
    r = resid(z)
    norm = _inf(r)
    history = [norm]
    for _ in range(max_iter):
        if norm < target:
            break
        J = fd_jacobian(resid, z, r, fd_step)
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-4:
            trial = z + lam * dz
            try:
                rt = resid(trial)
                nt = _inf(rt)
            except DomainError:
                nt = math.inf
            if nt < norm:
                break
            lam *= 0.5
        else:
            break
        stalled = norm < tol and nt > 0.5 * norm
        z, r, norm = trial, rt, nt
        history.append(norm)
        if stalled:
            break
    if not norm < tol:
        raise ConvergenceError("equilibrium Newton did not converge", norm, history)
    return z, history


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------

def build_system(case: NetworkCase, devices: Sequence, pf: PowerFlowResult | None = None
                 ) -> tuple[DaeSystem, SystemState]:
    """Power flow, load conversion and per-device initialization.

    Returns the system and an initial guess whose devices reproduce the
    power-flow injections; pass it to :func:`solve_equilibrium`.
    """
    if pf is None:
        pf = solve_powerflow(case)
    load_y = load_admittances(case, pf.v)
    Y = assemble_ybus(case, load_voltages=pf.v)
    s_bus = power_injections(Y.toarray(), pf.v, pf.theta)
    index = case.bus_index
    init = []
    for dev in devices:
        if dev.bus not in index:
            raise CaseValidationError(f"device at unknown bus {dev.bus}")
        b = index[dev.bus]
        scale = getattr(dev, "rating", case.base_mva) / case.base_mva
        s = s_bus[b] / scale
        init.append(dev.initialize(float(pf.v[b]), float(pf.theta[b]), s.real, s.imag))
    system = DaeSystem(case, init, Y, load_y)
    x = np.concatenate([d.get_states() for d in init]) if init else np.zeros(0)
    y = np.concatenate([pf.v, pf.theta])
    state = SystemState(x, y)
    _align_angles(system, state)
    return system, state


def _align_angles(system: DaeSystem, state: SystemState) -> None:
    """Rotate the whole angle frame so dual-GFM reactive loops start near balance."""
    duals = [k for k, d in enumerate(system.devices) if isinstance(d, DualGfmDevice)]
    if not duals or system.infinite:
        return
    x, n = state.x, system.n_bus
    ref = None
    gaps = []
    for k in duals:
        i = system.state_index(k + 1, "delta")
        if ref is None:
            ref = x[i]
        else:
            x[i] = ref + math.remainder(x[i] - ref, 2 * math.pi)
        dev = system.devices[k]
        b = system.bus_pos[k]
        _, q = dev.bind(x[system.slices[k]]).injection(state.y[b], state.y[n + b])
        gaps.append(-dev.K_q * q - x[i])
    alpha = float(np.mean(gaps))
    state.x[system.angle_mask] += alpha
    state.y[n:] += alpha


def solve_equilibrium(system: DaeSystem, guess: SystemState, tol: float = 1e-8,
                      closure: str = "auto") -> SystemState:
    """Newton solve of ``f = dw * angle_mask``, ``g = 0`` plus one closure row.

    ``dw`` is a common per-unit frequency deviation; every angle state then
    advances at ``omega_b * dw``. With
    ``closure="auto"`` it is forced to zero when some device pins absolute
    angles (dual-GFM reactive loop, infinite bus); otherwise, and with
    ``closure="angle"``, the slack-bus angle is held at its guess value and
    ``dw`` is free. The latter gives the quasi-steady rotating state of a
    system whose absolute angles drift slowly.
    """
    if closure not in ("auto", "angle"):
        raise ParameterError("closure must be 'auto' or 'angle'")
    nx, ny, n = system.nx, system.ny, system.n_bus
    a = system.omega_b * system.angle_mask.astype(float)
    kinds = [b.kind for b in system.case.buses]
    slack = kinds.index("slack") if "slack" in kinds else 0
    theta_ref = float(guess.y[n + slack])
    pin_rotation = closure == "auto" and system.rotation_pinned

    def resid(z):
        x, y, dw = z[:nx], z[nx:nx + ny], z[nx + ny]
        fx = system.f(x, y) - np.multiply.outer(a, dw)
        last = dw if pin_rotation else y[n + slack] - theta_ref
        return np.concatenate([fx, system.g_current(x, y), np.asarray(last)[None]])

    z0 = np.concatenate([guess.x, guess.y, [guess.freq_dev]])
    z, history = _damped_newton(resid, z0, tol)
    logger.debug("equilibrium residual history %s", history)
    x = z[:nx].copy()
    # de/dt = rho * e with e > 0 leaves rho = 0 as the only stationary value
    for k, dev in enumerate(system.devices):
        if isinstance(dev, DualGfmDevice):
            x[system.state_index(k + 1, "rho")] = 0.0
    return SystemState(x, z[nx:nx + ny].copy(), guess.t, float(z[-1]))


def initialize(case: NetworkCase, devices: Sequence, tol: float = 1e-8) -> tuple[DaeSystem, SystemState]:
    system, guess = build_system(case, devices)
    return system, solve_equilibrium(system, guess, tol)


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------

def trapezoid_solve(f, g, x, y, dt, tol=1e-8, max_iter=15, fd_step=1e-7, jac=None, refresh="iteration"):
    """One implicit-trapezoidal step of ``x' = f(x, y)``, ``0 = g(x, y)``.

    ``g`` may be ``None`` for a pure ODE. Returns ``(x_new, y_new, jacobian)``.
    """
    nx = x.shape[0]
    f0 = f(x, y)
    half = 0.5 * dt

    def resid(z):
        xn, yn = z[:nx], z[nx:]
        fx = f(xn, yn)
        if z.ndim > 1:
            rx = xn - x[:, None] - half * (fx + f0[:, None])
        else:
            rx = xn - x - half * (fx + f0)
        if g is None:
            return rx
        return np.concatenate([rx, g(xn, yn)])

    z0 = np.concatenate([x, y])
    z, _, J = newton(resid, z0, tol, max_iter, fd_step, jac, refresh)
    return z[:nx], z[nx:], J


def integrate_ode(f: Callable[[np.ndarray], np.ndarray], x0, dt: float, n_steps: int,
                  tol: float = 1e-12, max_iter: int = 20) -> np.ndarray:
    """Fixed-step trapezoidal integration of ``x' = f(x)``; returns all states (n_steps+1, n)."""
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    empty = np.zeros(0)
    out = [x]
    for _ in range(n_steps):
        x, _, _ = trapezoid_solve(lambda xx, yy: f(xx), None, x, empty, dt, tol, max_iter)
        out.append(x)
    return np.array(out)


def canonical_algebraic(y: np.ndarray, y_prev: np.ndarray) -> np.ndarray:
    """Representation of ``y`` with ``v > 0`` and angles unwrapped next to ``y_prev``.

    Device equations see bus angles only through periodic functions and a
    wrapped PLL phase error, so this changes no residual.
    """
    n = len(y) // 2
    v, th = y[:n].copy(), y[n:].copy()
    neg = v < 0
    v[neg] = -v[neg]
    th[neg] += math.pi
    th = y_prev[n:] + wrap_angle(th - y_prev[n:])
    return np.concatenate([v, th])


def trapezoidal_step(system: DaeSystem, state: SystemState, dt: float,
                     config: SolverConfig | None = None) -> SystemState:
    """Advance ``state`` by ``dt``, halving the step on Newton failure."""
    cfg = config or SolverConfig(dt=dt, t_stop=max(dt, 1.0))
    x, y = state.x, state.y
    sub = 1
    last: ConvergenceError | None = None
    for _ in range(cfg.max_halvings + 1):
        h = dt / sub
        try:
            xi, yi = x, y
            for _ in range(sub):
                xi, yi, _ = trapezoid_solve(system.f, system.g_current, xi, yi, h, cfg.newton_tol,
                                            cfg.max_newton, cfg.fd_step, None, cfg.jac_refresh)
            return SystemState(xi, canonical_algebraic(yi, y), state.t + dt, state.freq_dev)
        except ConvergenceError as exc:
            last = exc
            logger.debug("step at t=%.4f failed with dt=%.3g, halving", state.t, h)
            sub *= 2
    raise StepFailure(f"step at t={state.t:.6g} failed after {cfg.max_halvings} halvings",
                      last.mismatch if last else math.nan, last.history if last else None)


def _resolve_algebraic(system: DaeSystem, state: SystemState, tol: float, max_iter: int = 30) -> SystemState:
    x = state.x
    try:
        y, _, _ = newton(lambda yy: system.g_current(x if yy.ndim == 1 else np.repeat(x[:, None], yy.shape[1], 1), yy),
                         state.y, tol, max_iter)
    except ConvergenceError as exc:
        raise EventError("algebraic re-solve after event diverged", exc.mismatch, exc.history) from None
    return SystemState(x.copy(), canonical_algebraic(y, state.y), state.t, state.freq_dev)


def handle_event(system: DaeSystem, state: SystemState, event: Event, tol: float = 1e-8) -> SystemState:
    """Apply ``event`` to the network, keep differential states, re-solve ``y``."""
    event.validate()
    index = system.case.bus_index
    if event.kind != "device_trip" and event.bus not in index:
        raise CaseValidationError(f"event at unknown bus {event.bus}")
    if event.kind == "load_scale":
        b = index[event.bus]
        delta = (event.factor - 1.0) * system.load_y[b]
        system.set_admittance(apply_admittance_delta(system.Y, event.bus, delta.real, delta.imag))
        system.load_y[b] = event.factor * system.load_y[b]
    elif event.kind == "fault_apply":
        if event.bus in system.faults:
            raise CaseValidationError(f"bus {event.bus} is already faulted")
        delta = complex(event.g_fault, event.b_fault)
        system.faults[event.bus] = delta
        system.set_admittance(apply_admittance_delta(system.Y, event.bus, delta.real, delta.imag))
    elif event.kind == "fault_clear":
        if event.bus not in system.faults:
            raise CaseValidationError(f"no fault to clear at bus {event.bus}")
        delta = system.faults.pop(event.bus)
        system.set_admittance(apply_admittance_delta(system.Y, event.bus, -delta.real, -delta.imag))
    else:
        if not 1 <= event.device <= len(system.devices):
            raise CaseValidationError(f"unknown device {event.device}")
        system.in_service[event.device - 1] = False
    return _resolve_algebraic(system, state, tol)


@dataclass
class SimResult:
    system: DaeSystem
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    in_service: np.ndarray
    events: list[tuple[float, str]] = field(default_factory=list)
    complete: bool = True
    message: str = ""

    @property
    def n_records(self) -> int:
        return len(self.t)

    def state(self, k: int) -> SystemState:
        return SystemState(self.x[k].copy(), self.y[k].copy(), float(self.t[k]))

    def series(self, name: str) -> np.ndarray:
        """Column by name, e.g. ``dev1.rho`` or ``bus5.v``."""
        if name in self.system.state_names:
            return self.x[:, self.system.state_names.index(name)]
        if name in self.system.algebraic_names:
            return self.y[:, self.system.algebraic_names.index(name)]
        raise KeyError(name)

    def device_outputs(self) -> list[dict[str, np.ndarray]]:
        """Per device: e, rho, delta, omega_est, p, q over time (p, q on system base)."""
        sysm = self.system
        n = sysm.n_bus
        X, Yt = self.x.T, self.y.T
        derivs = sysm.f(X, Yt)
        out = []
        for k, dev in enumerate(sysm.devices):
            b = sysm.bus_pos[k]
            v, th = Yt[b], Yt[n + b]
            bound = dev.bind(X[sysm.slices[k]])
            zeros = np.zeros(len(self.t))
            live = self.in_service[:, k]
            if isinstance(dev, InfiniteBus):
                s = sysm.network_power(Yt)[b]
                rec = dict(e=v, rho=zeros, delta=th, omega_est=zeros + 1.0, p=s.real, q=s.imag)
            elif isinstance(dev, DualGfmDevice):
                p, q = bound.injection(v, th)
                omega_est, _ = bound.omega_measured(v, th)
                rec = dict(e=bound.e + zeros, rho=bound.rho + zeros, delta=bound.delta + zeros,
                           omega_est=omega_est + zeros, p=p * sysm.scale[k] * live, q=q * sysm.scale[k] * live)
            else:
                p, q = bound.injection(v, th)
                if dev.avr:
                    rho = derivs[sysm.state_index(k + 1, "eq_t")] / bound.eq_t
                else:
                    rho = zeros
                rec = dict(e=bound.eq_t + zeros, rho=rho, delta=bound.delta + zeros,
                           omega_est=bound.omega + zeros, p=p * sysm.scale[k] * live, q=q * sysm.scale[k] * live)
            out.append(rec)
        return out


def run_simulation(system: DaeSystem, initial: SystemState, events: Sequence[Event] = (),
                   config: SolverConfig | None = None) -> SimResult:
    """Fixed-step march from ``initial.t`` to ``config.t_stop``.

    Events are snapped to the nearest step. At an event step two records share
    the same time: the state just before and just after the event.
    """
    cfg = config or SolverConfig()
    cfg.validate()
    validate_events(events)
    system = system.fresh()
    n_steps = int(round(cfg.t_stop / cfg.dt))
    schedule: dict[int, list[Event]] = {}
    for ev in sorted(events, key=lambda e: e.t_event):
        schedule.setdefault(int(round(ev.t_event / cfg.dt)), []).append(ev)

    ts, xs, ys, live = [], [], [], []
    log: list[tuple[float, str]] = []

    def record(st):
        ts.append(st.t)
        xs.append(st.x)
        ys.append(st.y)
        live.append(system.in_service.copy())

    state = initial.copy()
    state.t = 0.0
    record(state)
    complete, message = True, ""
    try:
        for k in range(n_steps + 1):
            if k > 0:
                state = trapezoidal_step(system, state, cfg.dt, cfg)
                state.t = k * cfg.dt
                record(state)
            for ev in schedule.get(k, ()):
                state = handle_event(system, state, ev, cfg.newton_tol)
                log.append((state.t, ev.describe()))
                record(state)
    except ConvergenceError as exc:
        complete, message = False, str(exc)
        logger.warning("simulation aborted at t=%.4f: %s", state.t, exc)
    return SimResult(system, np.array(ts), np.array(xs), np.array(ys), np.array(live), log, complete, message)

"""Command-line front end.

Subcommands: ``pf`` (power flow), ``eq`` (dynamic equilibrium), ``run``
(time-domain simulation) and ``eig`` (small-signal spectrum). Every result is
CSV written atomically to ``--out`` or printed to stdout.

Exit codes: 0 success, 1 usage error, 2 convergence failure or incomplete
run, 3 invalid case data.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
import tempfile
from typing import Sequence

import numpy as np

from . import analysis, dae, scenario
from .errors import CaseValidationError, ConvergenceError, DualGfmError, IncompleteResultError, ParameterError
from .network import solve_powerflow

EXIT_OK, EXIT_USAGE, EXIT_CONVERGENCE, EXIT_VALIDATION = 0, 1, 2, 3
OUTPUT_FIELDS = ("e", "rho", "delta", "omega_est", "p", "q")

log = logging.getLogger("dualgfm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _positive(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not val > 0 or not np.isfinite(val):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualgfm", description="Phasor-domain simulator for dual grid-forming converters.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--case", default="wscc9-dualgfm",
                       help="built-in case name (%s) or path to a case file" % ", ".join(scenario.BUILTIN_NAMES))
        p.add_argument("--out", help="output CSV path (default: stdout)")
        p.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")

    common(sub.add_parser("pf", help="solve the power flow"))
    common(sub.add_parser("eq", help="initialize devices and solve the dynamic equilibrium"))
    common(sub.add_parser("eig", help="eigenvalues of the linearized system at equilibrium"))
    run = sub.add_parser("run", help="time-domain simulation")
    common(run)
    run.add_argument("--scenario", choices=("fig3", "fig4", "none"), default="none",
                     help="fig3: 20%% load loss at bus 5; fig4: 3-cycle fault at bus 7; "
                          "none: events listed in the case file")
    run.add_argument("--tstop", type=_positive, default=20.0, help="end time in seconds")
    run.add_argument("--dt", type=_positive, default=0.005, help="step size in seconds")
    run.add_argument("--outputs", choices=("devices", "buses", "all"), default="all",
                     help="columns to export")
    return parser


def _fmt(val: float) -> str:
    return f"{float(val):.17g}"


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def write_atomic(path: str | None, text: str) -> None:
    """Write ``text`` via a sibling temp file and rename; stdout when ``path`` is None."""
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    target = os.path.abspath(path)
    fd, tmp = tempfile.mkstemp(prefix=".dualgfm-", suffix=".tmp", dir=os.path.dirname(target))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def trajectory_csv(result: dae.SimResult, outputs: str = "all") -> str:
    sysm = result.system
    header, cols = ["t"], [result.t]
    if outputs in ("devices", "all"):
        for k, rec in enumerate(result.device_outputs(), start=1):
            for name in OUTPUT_FIELDS:
                header.append(f"dev{k}.{name}")
                cols.append(rec[name])
    if outputs in ("buses", "all"):
        n = sysm.n_bus
        for j, bus in enumerate(sysm.case.buses):
            header += [f"bus{bus.id}.v", f"bus{bus.id}.theta"]
            cols += [result.y[:, j], result.y[:, n + j]]
    return _csv(header, np.column_stack(cols))


def _cmd_pf(args, data) -> int:
    pf = solve_powerflow(data.network)
    log.info("power flow converged in %d iterations, mismatch %.3e", pf.iterations, pf.mismatch)
    rows = [(b, v, th, p, q) for b, v, th, p, q in zip(pf.bus_ids, pf.v, pf.theta, pf.p, pf.q)]
    write_atomic(args.out, _csv(("bus", "v", "theta", "p", "q"), rows))
    return EXIT_OK


def _cmd_eq(args, data) -> int:
    system, state = dae.initialize(data.network, data.devices)
    f, g = system.residuals(state)
    log.info("equilibrium residual %.3e", max(np.max(np.abs(f), initial=0.0), np.max(np.abs(g), initial=0.0)))
    names = list(system.state_names) + list(system.algebraic_names) + ["freq_dev"]
    values = list(state.x) + list(state.y) + [state.freq_dev]
    text = "name,value\n" + "".join(f"{n},{_fmt(v)}\n" for n, v in zip(names, values))
    write_atomic(args.out, text)
    return EXIT_OK


def _cmd_eig(args, data) -> int:
    system, state = dae.initialize(data.network, data.devices)
    spectrum = analysis.eigenvalues(analysis.linearize(system, state))
    dom = spectrum.dominant_pair()
    if dom is not None:
        log.info("dominant pair %.6g%+.6gj, damping %.4f", dom[0].real, dom[0].imag, dom[1])
    write_atomic(args.out, spectrum.to_csv())
    return EXIT_OK


def _cmd_run(args, data) -> int:
    events = data.events if args.scenario == "none" else scenario.paper_events(args.scenario, data.network.base_freq_hz)
    system, state = dae.initialize(data.network, data.devices)
    result = dae.run_simulation(system, state, events, dae.SolverConfig(dt=args.dt, t_stop=args.tstop))
    for t, text in result.events:
        log.info("t=%.4f %s", t, text)
    if not result.complete:
        raise IncompleteResultError(f"simulation stopped at t={result.t[-1]:.4f}: {result.message}")
    write_atomic(args.out, trajectory_csv(result, args.outputs))
    if args.verbose:
        sys.stderr.write(analysis.compute_metrics(result).to_report())
    return EXIT_OK


_COMMANDS = {"pf": _cmd_pf, "eq": _cmd_eq, "eig": _cmd_eig, "run": _cmd_run}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s: %(message)s")
    try:
        data = scenario.load_case(args.case)
        return _COMMANDS[args.command](args, data)
    except (CaseValidationError, ParameterError) as exc:
        sys.stderr.write(f"invalid case: {exc}\n")
        return EXIT_VALIDATION
    except (ConvergenceError, IncompleteResultError) as exc:
        sys.stderr.write(f"no convergence: {exc}\n")
        return EXIT_CONVERGENCE
    except DualGfmError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONVERGENCE
    except OSError as exc:
        sys.stderr.write(f"cannot write output: {exc}\n")
        return EXIT_USAGE

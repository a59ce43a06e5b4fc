"""Static grid model: buses, branches, admittance matrix and power flow."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CaseValidationError, ConvergenceError, SingularBranchError

logger = logging.getLogger(__name__)

BUS_KINDS = ("slack", "PV", "PQ")


@dataclass
class Bus:
    """A network node.

    ``v``/``theta`` are the power-flow start values (magnitude setpoint at
    slack and PV buses). ``p_gen``/``q_gen`` are scheduled generation; loads and
    shunts are on the system base.
    """

    id: int
    kind: str = "PQ"
    v: float = 1.0
    theta: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    p_gen: float = 0.0
    q_gen: float = 0.0


@dataclass
class Branch:
    """Pi-model line or transformer; ``tap`` sits on the ``from_bus`` side."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass
class NetworkCase:
    buses: list[Bus]
    branches: list[Branch] = field(default_factory=list)
    base_mva: float = 100.0
    base_freq_hz: float = 50.0
    omega_ref: float = 1.0

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_index(self) -> dict[int, int]:
        return {bus.id: k for k, bus in enumerate(self.buses)}

    def bus(self, bus_id: int) -> Bus:
        for bus in self.buses:
            if bus.id == bus_id:
                return bus
        raise CaseValidationError(f"unknown bus {bus_id}")

    def validate(self, require_slack: bool = True) -> None:
        ids = [bus.id for bus in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseValidationError("duplicate bus id")
        for bus in self.buses:
            if bus.kind not in BUS_KINDS:
                raise CaseValidationError(f"bus {bus.id}: unknown kind {bus.kind!r}")
            if not bus.v > 0:
                raise CaseValidationError(f"bus {bus.id}: voltage magnitude must be positive")
        known = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise CaseValidationError(f"branch {br.from_bus}-{br.to_bus}: dangling endpoint {end}")
            if br.r == 0.0 and br.x == 0.0:
                raise SingularBranchError(f"branch {br.from_bus}-{br.to_bus}: zero series impedance")
            if not br.tap > 0:
                raise CaseValidationError(f"branch {br.from_bus}-{br.to_bus}: tap must be positive")
        n_slack = sum(bus.kind == "slack" for bus in self.buses)
        if require_slack and n_slack != 1:
            raise CaseValidationError(f"expected exactly one slack bus, found {n_slack}")


class AdmittanceMatrix:
    """Bus admittance matrix with reversible diagonal edits.

    Edits are kept as an ordered list of increments per diagonal slot on top of
    an immutable base matrix, so that an edit followed by its exact negation
    restores the base bit for bit.
    """

    def __init__(self, base: sp.csr_matrix, bus_ids: Sequence[int],
                 deltas: Mapping[int, tuple[complex, ...]] | None = None):
        self.base = base
        self.bus_ids = tuple(bus_ids)
        self.index = {bus_id: k for k, bus_id in enumerate(self.bus_ids)}
        self.deltas = dict(deltas or {})

    @property
    def n(self) -> int:
        return len(self.bus_ids)

    def diagonal_delta(self, k: int) -> complex:
        total = 0j
        for d in self.deltas.get(k, ()):
            total += d
        return total

    def tocsr(self) -> sp.csr_matrix:
        if not self.deltas:
            return self.base.copy()
        extra = np.zeros(self.n, dtype=complex)
        for k in self.deltas:
            extra[k] = self.diagonal_delta(k)
        return (self.base + sp.diags(extra, format="csr")).tocsr()

    def toarray(self) -> np.ndarray:
        dense = self.base.toarray()
        for k in self.deltas:
            dense[k, k] = dense[k, k] + self.diagonal_delta(k)
        return dense

    def __getitem__(self, ids: tuple[int, int]) -> complex:
        i, j = (self.index[b] for b in ids)
        value = complex(self.base[i, j])
        if i == j and i in self.deltas:
            value = value + self.diagonal_delta(i)
        return value

    def __repr__(self) -> str:
        return f"AdmittanceMatrix(n={self.n}, nnz={self.base.nnz}, edits={sum(map(len, self.deltas.values()))})"


def _ybus_entries(case: NetworkCase, extra_shunts: np.ndarray | None = None) -> sp.csr_matrix:
    n = case.n_bus
    index = case.bus_index
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for br in case.branches:
        i, j = index[br.from_bus], index[br.to_bus]
        y = br.series_admittance
        half = 0.5j * br.b
        t = br.tap
        rows += [i, j, i, j]
        cols += [i, j, j, i]
        vals += [(y + half) / (t * t), y + half, -y / t, -y / t]
    for k, bus in enumerate(case.buses):
        rows.append(k)
        cols.append(k)
        vals.append(complex(bus.shunt_g, bus.shunt_b))
    if extra_shunts is not None:
        rows += list(range(n))
        cols += list(range(n))
        vals += list(extra_shunts)
    # coo -> csr sums duplicates in a fixed order, so rebuilds are bit-identical
    mat = sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def load_admittances(case: NetworkCase, v: np.ndarray) -> np.ndarray:
    """Constant-impedance equivalent ``(p - jq) / v**2`` of every bus load."""
    p = np.array([bus.p_load for bus in case.buses])
    q = np.array([bus.q_load for bus in case.buses])
    v = np.asarray(v, dtype=float)
    return (p - 1j * q) / v**2


def assemble_ybus(case: NetworkCase, load_voltages: np.ndarray | None = None) -> AdmittanceMatrix:
    """Build the bus admittance matrix.

    If ``load_voltages`` is given, bus loads are folded in as constant shunt
    admittances evaluated at those voltage magnitudes.
    """
    case.validate(require_slack=False)
    extra = None if load_voltages is None else load_admittances(case, load_voltages)
    return AdmittanceMatrix(_ybus_entries(case, extra), [b.id for b in case.buses])


def apply_admittance_delta(Y: AdmittanceMatrix, bus: int, dg: float, db: float) -> AdmittanceMatrix:
    """Return a copy of ``Y`` with ``dg + j*db`` added to the diagonal of ``bus``."""
    if bus not in Y.index:
        raise CaseValidationError(f"unknown bus {bus}")
    delta = complex(dg, db)
    deltas = dict(Y.deltas)
    if delta == 0:
        return AdmittanceMatrix(Y.base, Y.bus_ids, deltas)
    k = Y.index[bus]
    entries = list(deltas.get(k, ()))
    for pos in range(len(entries) - 1, -1, -1):
        if entries[pos] == -delta:
            del entries[pos]
            break
    else:
        entries.append(delta)
    if entries:
        deltas[k] = tuple(entries)
    else:
        deltas.pop(k, None)
    return AdmittanceMatrix(Y.base, Y.bus_ids, deltas)


@dataclass
class PowerFlowResult:
    bus_ids: tuple[int, ...]
    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    iterations: int
    mismatch: float

    def voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


def power_injections(Y: np.ndarray, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Complex injections ``S_i = V_i * conj(sum_j Y_ij V_j)``."""
    vc = v * np.exp(1j * theta)
    return vc * np.conj(Y @ vc)


def solve_powerflow(case: NetworkCase, injections: Mapping[int, complex] | None = None,
                    tol: float = 1e-10, max_iter: int = 20) -> PowerFlowResult:
    """Newton-Raphson power flow in polar coordinates from a flat start.

    ``injections`` maps bus id to the scheduled net injection ``p + jq``; by
    default it is ``(p_gen - p_load) + j(q_gen - q_load)`` from the case.
    """
    case.validate()
    Y = assemble_ybus(case).toarray()
    n = case.n_bus
    kinds = [bus.kind for bus in case.buses]
    if injections is None:
        s_spec = np.array([complex(b.p_gen - b.p_load, b.q_gen - b.q_load) for b in case.buses])
    else:
        index = case.bus_index
        s_spec = np.zeros(n, dtype=complex)
        for bus_id, s in injections.items():
            if bus_id not in index:
                raise CaseValidationError(f"injection at unknown bus {bus_id}")
            s_spec[index[bus_id]] = s

    v = np.array([b.v if b.kind != "PQ" else 1.0 for b in case.buses])
    theta = np.zeros(n)
    ang = np.array([k for k in range(n) if kinds[k] != "slack"], dtype=int)
    mag = np.array([k for k in range(n) if kinds[k] == "PQ"], dtype=int)

    def mismatch(v, theta):
        s = power_injections(Y, v, theta)
        return np.concatenate([(s_spec.real - s.real)[ang], (s_spec.imag - s.imag)[mag]])

    dm = mismatch(v, theta)
    norm = float(np.max(np.abs(dm), initial=0.0))
    history = [norm]
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise ConvergenceError(f"power flow did not converge in {max_iter} iterations", norm, history)
        J = _pf_jacobian(Y, v, theta, ang, mag)
        dx = np.linalg.solve(J, dm)
        theta[ang] += dx[: len(ang)]
        v[mag] += dx[len(ang):]
        it += 1
        dm = mismatch(v, theta)
        norm = float(np.max(np.abs(dm), initial=0.0))
        history.append(norm)
        if not np.isfinite(norm):
            raise ConvergenceError("power flow diverged", norm, history)
    logger.debug("power flow converged in %d iterations, mismatch %.2e", it, norm)
    s = power_injections(Y, v, theta)
    return PowerFlowResult(tuple(b.id for b in case.buses), v, theta, s.real, s.imag, it, norm)


def _pf_jacobian(Y, v, theta, ang, mag):
    vc = v * np.exp(1j * theta)
    current = Y @ vc
    diag_v = np.diag(vc)
    # dS/dtheta and dS/d|V| in the usual complex form
    dS_dth = 1j * diag_v @ np.conj(np.diag(current) - Y @ diag_v)
    dS_dv = diag_v @ np.conj(Y @ np.diag(vc / v)) + np.diag(np.conj(current) * vc / v)
    top = np.hstack([dS_dth.real[np.ix_(ang, ang)], dS_dv.real[np.ix_(ang, mag)]])
    bottom = np.hstack([dS_dth.imag[np.ix_(mag, ang)], dS_dv.imag[np.ix_(mag, mag)]])
    return np.vstack([top, bottom])


def with_solution(case: NetworkCase, pf: PowerFlowResult) -> NetworkCase:
    """Copy of ``case`` whose bus ``v``/``theta`` hold the solved profile."""
    buses = [dataclasses.replace(b, v=float(pf.v[k]), theta=float(pf.theta[k])) for k, b in enumerate(case.buses)]
    return dataclasses.replace(case, buses=buses)

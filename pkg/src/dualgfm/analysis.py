"""Trajectory metrics and small-signal analysis."""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dae import DaeSystem, SimResult, SystemState
from .devices import DualGfmDevice, InfiniteBus
from .errors import AlgebraicSingularityError, DualGfmError, IncompleteResultError


@dataclass
class Bands:
    freq: float = 1e-3
    voltage: float = 0.01


@dataclass
class Metrics:
    freq_extremum: float
    settling_time: float
    settled: bool
    steady_state_freq_dev: float
    max_voltage_dev: float
    rho_final_max: float

    def to_report(self) -> str:
        """Flat ``key=value`` lines, floats with 17 significant digits."""
        lines = []
        for key, val in asdict(self).items():
            text = str(val).lower() if isinstance(val, bool) else f"{val:.17g}"
            lines.append(f"{key}={text}")
        return "\n".join(lines) + "\n"


def _settling(t: np.ndarray, signals: np.ndarray, band: float) -> float:
    """Earliest time after which every column stays within ``band`` of its final value."""
    if signals.size == 0:
        return 0.0
    outside = np.any(np.abs(signals - signals[-1]) > band, axis=1)
    hits = np.flatnonzero(outside)
    if hits.size == 0:
        return 0.0
    last = hits[-1]
    return float(t[min(last + 1, len(t) - 1)])


def metrics_from_signals(t, freq, volt, omega_ref: float = 1.0, rho_final=(), bands: Bands | None = None) -> Metrics:
    """Metrics from raw series: ``freq`` is (T, m) frequency estimates, ``volt`` is (T, n) magnitudes."""
    bands = bands or Bands()
    t = np.asarray(t, dtype=float)
    freq = np.asarray(freq, dtype=float).reshape(len(t), -1)
    volt = np.asarray(volt, dtype=float).reshape(len(t), -1)
    dev = freq - omega_ref
    if dev.size:
        flat = np.argmax(np.abs(dev))
        extremum = float(freq.flat[flat])
        ss = float(np.mean(dev[-1]))
    else:
        extremum, ss = omega_ref, 0.0
    settle = max(_settling(t, freq, bands.freq), _settling(t, volt, bands.voltage))
    vdev = float(np.max(np.abs(volt - volt[0]))) if volt.size else 0.0
    rho = float(np.max(np.abs(rho_final))) if len(rho_final) else 0.0
    return Metrics(extremum, settle, bool(settle < t[-1]) or settle == 0.0, ss, vdev, rho)


def compute_metrics(result: SimResult, bands: Bands | None = None) -> Metrics:
    """Frequency metrics use the PLL estimates at dual-GFM buses and rotor speeds of machines."""
    if not result.complete:
        raise IncompleteResultError(f"simulation did not complete: {result.message}")
    outputs = result.device_outputs()
    devs = result.system.devices
    keep = [k for k, d in enumerate(devs) if not isinstance(d, InfiniteBus)]
    freq = np.column_stack([outputs[k]["omega_est"] for k in keep]) if keep else np.zeros((len(result.t), 0))
    volt = result.y[:, :result.system.n_bus]
    rho = [outputs[k]["rho"][-1] for k, d in enumerate(devs) if isinstance(d, DualGfmDevice)]
    return metrics_from_signals(result.t, freq, volt, result.system.case.omega_ref, rho, bands)


# --------------------------------------------------------------------------
# small signal
# --------------------------------------------------------------------------

def jacobians(system: DaeSystem, state: SystemState, rel_step: float = 1e-6):
    """Central-difference blocks ``(f_x, f_y, g_x, g_y)`` at ``state``."""
    nx = system.nx
    z = np.concatenate([state.x, state.y])
    h = rel_step * np.maximum(1.0, np.abs(z))
    P = np.diag(h)
    Z = np.hstack([z[:, None] + P, z[:, None] - P])
    X, Y = Z[:nx], Z[nx:]
    F = np.vstack([system.f(X, Y), system.g(X, Y)])
    N = len(z)
    J = (F[:, :N] - F[:, N:]) / (2.0 * h)
    return J[:nx, :nx], J[:nx, nx:], J[nx:, :nx], J[nx:, nx:]


def linearize(system: DaeSystem, state: SystemState, rel_step: float = 1e-6) -> np.ndarray:
    """Reduced state matrix ``A = f_x - f_y g_y^-1 g_x``."""
    fx, fy, gx, gy = jacobians(system, state, rel_step)
    if gy.size == 0:
        return fx
    if not np.all(np.isfinite(gy)) or np.linalg.cond(gy) > 1e14:
        raise AlgebraicSingularityError("algebraic Jacobian g_y is singular at this point")
    return fx - fy @ np.linalg.solve(gy, gx)


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    damping: np.ndarray

    @property
    def frequency_hz(self) -> np.ndarray:
        return np.abs(self.eigenvalues.imag) / (2.0 * math.pi)

    def oscillatory(self, tol: float = 1e-6) -> np.ndarray:
        return np.flatnonzero(np.abs(self.eigenvalues.imag) > tol)

    def dominant_pair(self, tol: float = 1e-6):
        """Oscillatory eigenvalue (positive imaginary part) with the largest real part, or None."""
        idx = [k for k in self.oscillatory(tol) if self.eigenvalues[k].imag > 0]
        if not idx:
            return None
        k = max(idx, key=lambda i: self.eigenvalues[i].real)
        return self.eigenvalues[k], float(self.damping[k])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("re,im,freq_hz,damping\n")
        for lam, f, z in zip(self.eigenvalues, self.frequency_hz, self.damping):
            buf.write(f"{lam.real:.17g},{lam.imag:.17g},{f:.17g},{z:.17g}\n")
        return buf.getvalue()


def eigenvalues(A) -> Spectrum:
    """Full spectrum of a square matrix, sorted by descending real part."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("state matrix must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("state matrix has non-finite entries")
    try:
        lam = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise DualGfmError(f"eigenvalue computation did not converge: {exc}") from None
    lam = lam.astype(complex)
    order = np.lexsort((-lam.imag, -lam.real))
    lam = lam[order]
    mag = np.abs(lam)
    with np.errstate(invalid="ignore", divide="ignore"):
        zeta = np.where(mag > 0, -lam.real / np.where(mag > 0, mag, 1.0), 0.0)
    return Spectrum(lam, zeta)


def power_balance(system: DaeSystem, x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Active-power bookkeeping at one point: (device output, load + fault consumption, network losses).

    Losses are whatever the branches and line charging absorb; a consistent
    point has ``output - consumption - losses == 0``.
    """
    n = system.n_bus
    v = y[:n]
    s_net = system.network_power(y)
    s_dev = system.device_power(x, y)
    for _, b in system.infinite:
        s_dev[b] = s_net[b]
    shunt = system.load_y.copy()
    for bus, d in system.faults.items():
        shunt[system.case.bus_index[bus]] += d
    consumption = float(np.sum(shunt.real * v**2))
    losses = float(np.sum(s_net.real)) - consumption
    return float(np.sum(s_dev.real)), consumption, losses

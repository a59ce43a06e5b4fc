"""Dynamic device models.

Every formula here is a pure function of its arguments and accepts numpy
arrays, so the DAE engine can evaluate a whole batch of perturbed states in
one call. Device dataclasses carry parameters plus the current value of their
states; :meth:`bind` returns a shallow copy with states replaced.

Angles are radians in the frame rotating at ``omega_ref``; speeds and
frequencies are per unit. ``omega_b`` (rad/s per pu of speed) links the two:
an angle advances at ``omega_b * (omega - omega_ref)``. Its default of 1 gives
the unit-free form in which time and angle share one scale. Device quantities
are per unit on the device rating; the engine converts to system base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ParameterError


# --------------------------------------------------------------------------
# electrical interfaces
# --------------------------------------------------------------------------

def machine_power_lossy(e, v, delta, theta, r_a, x_d_t):
    """Active/reactive injection of a machine behind ``r_a + j x'_d``.

    The ``r_a == 0`` and ``x_d_t == 0`` limits are evaluated with the
    simplified expressions so that they coincide bit for bit with
    :func:`machine_power_lossless` and :func:`dual_power_resistive`.
    """
    r_a = np.asarray(r_a, dtype=float)
    x_d_t = np.asarray(x_d_t, dtype=float)
    den = r_a * r_a + x_d_t * x_d_t
    if np.any(den == 0):
        raise ParameterError("singular machine impedance: r_a = x'_d = 0")
    ang = np.subtract(delta, theta)
    ev = np.multiply(e, v)
    c = ev * np.cos(ang) - np.multiply(v, v)
    s = ev * np.sin(ang)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = (c * r_a + s * x_d_t) / den
        q = (c * x_d_t - s * r_a) / den
        p = np.where(r_a == 0, s / x_d_t, np.where(x_d_t == 0, c / r_a, p))
        q = np.where(r_a == 0, c / x_d_t, np.where(x_d_t == 0, -s / r_a, q))
    return _scalarize(p), _scalarize(q)


def machine_power_lossless(e, v, delta, theta, x_d_t):
    if np.any(np.asarray(x_d_t) <= 0):
        raise ParameterError("x'_d must be positive")
    ang = np.subtract(delta, theta)
    ev = np.multiply(e, v)
    p = ev * np.sin(ang) / x_d_t
    q = (ev * np.cos(ang) - np.multiply(v, v)) / x_d_t
    return _scalarize(p), _scalarize(q)


def dual_power_resistive(e, v, delta, theta, r_a):
    """The resistance-only part of the lossy machine injections."""
    if np.any(np.asarray(r_a) == 0):
        raise ParameterError("r_a must be nonzero")
    ang = np.subtract(delta, theta)
    ev = np.multiply(e, v)
    p = (ev * np.cos(ang) - np.multiply(v, v)) / r_a
    q = -(ev * np.sin(ang)) / r_a
    return _scalarize(p), _scalarize(q)


def dual_gfm_power(e, v, delta, theta, K):
    """Dual-GFM injections with virtual conductance ``K = -1/r_a``."""
    ang = np.subtract(delta, theta)
    ev = np.multiply(e, v)
    p = K * np.multiply(v, v) - K * ev * np.cos(ang)
    q = K * ev * np.sin(ang)
    return _scalarize(p), _scalarize(q)


def machine_d_current(e, v, delta, theta, x_d_t):
    """Stator d-axis current of the third-order model, armature resistance neglected."""
    return (e - v * np.cos(np.subtract(delta, theta))) / x_d_t


def _scalarize(a):
    return float(a) if np.ndim(a) == 0 else a


# --------------------------------------------------------------------------
# state containers
# --------------------------------------------------------------------------

class ComplexFrequency(NamedTuple):
    rho: float
    omega: float

    def __complex__(self) -> complex:
        return complex(self.rho, self.omega)


@dataclass
class PllState:
    """First-order filtered-derivative PLL on the bus angle."""

    theta_f: float = 0.0
    T_pll: float = 0.02
    omega_ref: float = 1.0
    omega_b: float = 1.0


@dataclass
class PssState:
    """Gain, washout and two lead-lag stages with output saturation.

    Input is the estimated frequency deviation; ``x_w``, ``x_1``, ``x_2`` are
    the washout and lead-lag states.
    """

    K_pss: float = 0.0
    T_w: float = 5.0
    T1: float = 1.0
    T2: float = 1.0
    T3: float = 1.0
    T4: float = 1.0
    lo: float = -0.05
    hi: float = 0.05
    omega_ref: float = 1.0
    x_w: float = 0.0
    x_1: float = 0.0
    x_2: float = 0.0


def _bind(obj, **states):
    new = object.__new__(type(obj))
    new.__dict__ = {**obj.__dict__, **states}
    return new


@dataclass
class MachineDevice:
    """Third-order synchronous machine with first-order governor and AVR.

    With ``avr=False`` the transient emf ``eq_t`` and field voltage are held
    constant; with ``governor=False`` so is ``p_m``.
    """

    bus: int
    rating: float = 100.0
    M: float = 10.0
    D: float = 0.0
    r_a: float = 0.0
    x_d: float = 1.0
    x_d_t: float = 0.3
    T_d0_t: float = 6.0
    T_m: float = 0.5
    R: float = 0.05
    T_r: float = 0.2
    K_r: float = 20.0
    omega_ref: float = 1.0
    omega_b: float = 1.0
    p_m_o: float = 0.0
    v_ref: float = 1.0
    governor: bool = True
    avr: bool = True
    delta: float = 0.0
    omega: float = 1.0
    eq_t: float = 1.0
    p_m: float = 0.0
    v_f: float = 0.0

    kind = "machine"
    breaks_rotation = False

    def validate(self) -> None:
        if not self.M > 0:
            raise ParameterError("M must be positive")
        if not self.omega_b > 0:
            raise ParameterError("omega_b must be positive")
        if not self.x_d_t > 0:
            raise ParameterError("x'_d must be positive")
        if self.r_a < 0:
            raise ParameterError("r_a must be non-negative")
        for name in ("T_d0_t", "T_r", "T_m", "rating"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.governor and not self.R > 0:
            raise ParameterError("R must be positive")

    @property
    def state_names(self) -> tuple[str, ...]:
        names = ["delta", "omega"]
        if self.avr:
            names += ["eq_t", "v_f"]
        if self.governor:
            names.append("p_m")
        return tuple(names)

    @property
    def angle_states(self) -> tuple[str, ...]:
        return ("delta",)

    def get_states(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.state_names], dtype=float)

    def bind(self, xs) -> "MachineDevice":
        return _bind(self, **dict(zip(self.state_names, xs)))

    def injection(self, v, theta):
        """(p, q) on the device base."""
        return machine_power_lossy(self.eq_t, v, self.delta, theta, self.r_a, self.x_d_t)

    def derivatives(self, v, theta) -> list:
        p, _ = self.injection(v, theta)
        d_delta, d_omega = swing_derivatives(self, p)
        out = [d_delta, d_omega]
        if self.avr:
            out += list(avr_derivatives(self, v, theta))
        if self.governor:
            out.append(governor_derivative(self))
        return out

    def initialize(self, v: float, theta: float, p: float, q: float) -> "MachineDevice":
        """Classical initialization from a solved bus voltage and device-base (p, q)."""
        vc = v * complex(math.cos(theta), math.sin(theta))
        current = complex(p, -q) / vc.conjugate()
        emf = vc + complex(self.r_a, self.x_d_t) * current
        e = abs(emf)
        delta = math.atan2(emf.imag, emf.real)
        states = dict(delta=delta, omega=self.omega_ref, eq_t=e, p_m=p)
        extra = dict(p_m_o=p)
        i_d = float(machine_d_current(e, v, delta, theta, self.x_d_t))
        v_f = e + (self.x_d - self.x_d_t) * i_d
        states["v_f"] = v_f
        if self.avr:
            extra["v_ref"] = v + v_f / self.K_r
        return _bind(self, **states, **extra)


@dataclass
class DualGfmDevice:
    """Dual grid-forming converter: active power through the emf magnitude,
    synchronization through the reactive power and the internal angle."""

    bus: int
    rating: float = 100.0
    K: float = 0.1
    M_t: float = 30.0
    D_t: float = 20.0
    T_m_t: float = 2.0
    R_t: float = 0.05
    K_q: float = 10.0
    T_q: float = 5.0
    K_r_t: float = 40.0
    T_r_t: float = 1.0
    omega_ref: float = 1.0
    p_ref_o: float = 0.0
    perfect_tracking: bool = False
    pll: PllState = field(default_factory=PllState)
    pss: PssState | None = None
    e: float = 1.0
    rho: float = 0.0
    delta: float = 0.0
    p_ref: float = 0.0
    q_ref: float = 0.0

    kind = "dualgfm"
    breaks_rotation = True
    R_T_FLOOR = 1e-4

    @property
    def rho_ref(self) -> float:
        return 0.0

    @property
    def u(self):
        if np.any(np.asarray(self.e) <= 0):
            raise DomainError("ln(e) undefined for e <= 0")
        return np.log(self.e)

    @property
    def delta_r(self):
        return self.K_q * self.q_ref

    @property
    def K_r_t_prime(self) -> float:
        """Frequency gain of the loop written in ``delta_r = K_q q_ref``.

        Scaling ``q_ref`` by ``K_q`` scales its input gain by ``K_q`` too.
        """
        return self.K_r_t * self.K_q

    def validate(self) -> None:
        for name in ("K", "M_t", "T_q", "T_r_t", "T_m_t", "rating"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not self.perfect_tracking and not self.R_t > 0:
            raise ParameterError("R_t must be positive unless perfect_tracking is set")
        if not self.pll.T_pll > 0:
            raise ParameterError("T_pll must be positive")
        if not self.pll.omega_b > 0:
            raise ParameterError("omega_b must be positive")
        if self.pss is not None:
            if not self.pss.T_w > 0 or not self.pss.T2 > 0 or not self.pss.T4 > 0:
                raise ParameterError("PSS time constants must be positive")
            if self.pss.lo > self.pss.hi:
                raise ParameterError("PSS limits must satisfy lo <= hi")

    @property
    def state_names(self) -> tuple[str, ...]:
        names = ("e", "rho", "delta", "p_ref", "q_ref", "theta_f")
        if self.pss is not None:
            names += ("x_w", "x_1", "x_2")
        return names

    @property
    def angle_states(self) -> tuple[str, ...]:
        return ("delta", "theta_f")

    def get_states(self) -> np.ndarray:
        vals = [self.e, self.rho, self.delta, self.p_ref, self.q_ref, self.pll.theta_f]
        if self.pss is not None:
            vals += [self.pss.x_w, self.pss.x_1, self.pss.x_2]
        return np.array(vals, dtype=float)

    def bind(self, xs) -> "DualGfmDevice":
        e, rho, delta, p_ref, q_ref, theta_f = xs[:6]
        new = _bind(self, e=e, rho=rho, delta=delta, p_ref=p_ref, q_ref=q_ref)
        new.pll = _bind(self.pll, theta_f=theta_f)
        if self.pss is not None:
            new.pss = _bind(self.pss, x_w=xs[6], x_1=xs[7], x_2=xs[8])
        return new

    def injection(self, v, theta):
        return dual_gfm_power(self.e, v, self.delta, theta, self.K)

    def omega_measured(self, v, theta):
        """PLL frequency estimate and the PSS-corrected signal fed to the reactive loop."""
        _, omega_est = pll_derivatives(self.pll, phasor_angle(v, theta))
        if self.pss is None:
            return omega_est, omega_est
        return omega_est, omega_est - pss_output(self.pss, omega_est)

    def derivatives(self, v, theta) -> list:
        p, q = self.injection(v, theta)
        d_theta_f, omega_est = pll_derivatives(self.pll, phasor_angle(v, theta))
        omega_meas = omega_est
        if self.pss is not None:
            omega_meas = omega_est - pss_output(self.pss, omega_est)
        de, drho = dual_swing_derivatives(self, p)
        dp_ref = dual_governor_derivative(self)
        ddelta, dq_ref = dual_reactive_derivatives(self, q, omega_meas)
        out = [de, drho, ddelta, dp_ref, dq_ref, d_theta_f]
        if self.pss is not None:
            out += list(pss_derivatives(self.pss, omega_est))
        return out

    def initialize(self, v: float, theta: float, p: float, q: float) -> "DualGfmDevice":
        """Closed-form inversion of the dual-GFM injections for a device-base (p, q).

        The returned angle still needs a common rotation and a Newton polish at
        system level (the reactive loop pins absolute angles).
        """
        a = self.K * v * v - p
        e = math.hypot(a, q) / (self.K * v)
        phi = math.atan2(q, a)
        new = _bind(self, e=e, rho=0.0, delta=theta + phi, p_ref=p, q_ref=0.0, p_ref_o=p)
        new.pll = _bind(self.pll, theta_f=theta, omega_ref=self.omega_ref)
        if self.pss is not None:
            new.pss = _bind(self.pss, x_w=0.0, x_1=0.0, x_2=0.0, omega_ref=self.omega_ref)
        return new


@dataclass
class InfiniteBus:
    """Ideal voltage source pinning magnitude and angle of its bus."""

    bus: int
    v: float = 1.0
    theta: float = 0.0

    kind = "infinite"
    breaks_rotation = True
    state_names = ()
    angle_states = ()

    def validate(self) -> None:
        if not self.v > 0:
            raise ParameterError("infinite-bus voltage must be positive")

    def get_states(self) -> np.ndarray:
        return np.zeros(0)

    def bind(self, xs) -> "InfiniteBus":
        return self

    def initialize(self, v: float, theta: float, p: float, q: float) -> "InfiniteBus":
        return _bind(self, v=v, theta=theta)


# --------------------------------------------------------------------------
# dynamics
# --------------------------------------------------------------------------

def swing_derivatives(dev: MachineDevice, p):
    slip = dev.omega - dev.omega_ref
    return dev.omega_b * slip, (dev.p_m - p - dev.D * slip) / dev.M


def dual_swing_derivatives(dev: DualGfmDevice, p_t):
    """(de/dt, drho/dt) of the dual swing equation in emf-magnitude form."""
    if np.any(np.asarray(dev.e) <= 0):
        raise DomainError("emf magnitude must be positive")
    return dev.rho * dev.e, (dev.p_ref - p_t - dev.D_t * dev.rho) / dev.M_t


def dual_swing_log_derivatives(u, rho, p_ref, p_t, M_t, D_t):
    """Same dynamics written in ``u = ln(e)``: ``du/dt = rho``."""
    return rho, (p_ref - p_t - D_t * rho) / M_t


def governor_derivative(dev: MachineDevice):
    return ((dev.omega_ref - dev.omega) / dev.R + dev.p_m_o - dev.p_m) / dev.T_m


def dual_governor_derivative(dev: DualGfmDevice):
    if dev.perfect_tracking:
        r_eff = max(dev.R_t, DualGfmDevice.R_T_FLOOR)
        return -(dev.rho - dev.rho_ref) / (r_eff * dev.T_m_t)
    return ((dev.rho_ref - dev.rho) / dev.R_t + dev.p_ref_o - dev.p_ref) / dev.T_m_t


def avr_derivatives(dev: MachineDevice, v, theta):
    i_d = machine_d_current(dev.eq_t, v, dev.delta, theta, dev.x_d_t)
    de = (dev.v_f - (dev.x_d - dev.x_d_t) * i_d - dev.eq_t) / dev.T_d0_t
    # |v| keeps the (-v, theta + pi) representation equivalent
    dv_f = (dev.K_r * (dev.v_ref - np.abs(v)) - dev.v_f) / dev.T_r
    return de, dv_f


def dual_reactive_derivatives(dev: DualGfmDevice, q_t, omega_meas):
    # written through delta_r so that the rewritten form gives bit-identical rates
    d_delta = (dev.delta_r - dev.K_q * q_t - dev.delta) / dev.T_q
    d_q_ref = (dev.K_r_t * (dev.omega_ref - omega_meas) - dev.q_ref) / dev.T_r_t
    return d_delta, d_q_ref


def dual_reactive_equiv_form(dev: DualGfmDevice, q_t, omega_meas, delta_r=None):
    """The reactive loop rewritten in ``delta_r = K_q q_ref``.

    ``delta_r`` defaults to ``dev.delta_r``; returns ``(d delta/dt, d delta_r/dt)``.
    """
    k_prime = dev.K_r_t_prime
    if delta_r is None:
        delta_r = dev.delta_r
    d_delta = (delta_r - dev.K_q * q_t - dev.delta) / dev.T_q
    d_delta_r = (k_prime * (dev.omega_ref - omega_meas) - delta_r) / dev.T_r_t
    return d_delta, d_delta_r


def wrap_angle(a):
    """Map an angle difference into [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def phasor_angle(v, theta):
    """Angle of the phasor ``v * exp(j theta)``; a negative ``v`` adds half a turn."""
    return theta + math.pi * (np.asarray(v) < 0)


def pll_derivatives(pll: PllState, theta_bus):
    """Filter derivative and frequency estimate ``omega_ref + (d theta_f/dt) / omega_b``.

    The phase error is wrapped, so whole turns of ``theta_bus`` are invisible.
    """
    d_theta_f = wrap_angle(theta_bus - pll.theta_f) / pll.T_pll
    return d_theta_f, pll.omega_ref + d_theta_f / pll.omega_b


def _pss_stages(pss: PssState, omega_est):
    w = pss.K_pss * (omega_est - pss.omega_ref) - pss.x_w
    y1 = pss.x_1 + (pss.T1 / pss.T2) * (w - pss.x_1)
    y2 = pss.x_2 + (pss.T3 / pss.T4) * (y1 - pss.x_2)
    return w, y1, y2


def pss_output(pss: PssState, omega_est):
    *_, y2 = _pss_stages(pss, omega_est)
    return np.clip(y2, pss.lo, pss.hi) if np.ndim(y2) else min(max(y2, pss.lo), pss.hi)


def pss_derivatives(pss: PssState, omega_est):
    w, y1, _ = _pss_stages(pss, omega_est)
    return w / pss.T_w, (w - pss.x_1) / pss.T2, (y1 - pss.x_2) / pss.T4


def complex_frequency(e, rho, omega, delta=0.0):
    """Complex frequency ``rho + j omega`` and the phasor derivative ``(rho + j omega) e^{u + j delta}``."""
    if e <= 0:
        raise DomainError("emf magnitude must be positive")
    eta = ComplexFrequency(rho, omega)
    phasor = e * complex(math.cos(delta), math.sin(delta))
    return eta, complex(eta) * phasor

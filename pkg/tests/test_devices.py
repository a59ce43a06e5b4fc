import dataclasses
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualgfm import dae, devices as dv
from dualgfm.errors import DomainError, ParameterError

mag = st.floats(0.5, 1.5)
ang = st.floats(-math.pi, math.pi)
pos = st.floats(0.01, 1.0)


# -- electrical interfaces --------------------------------------------------

@pytest.mark.parametrize("r_a,x_d", [(0.0, 0.3), (0.1, 0.5), (0.5, 0.01)])
def test_lossy_zero_at_balanced_emf(r_a, x_d):
    p, q = dv.machine_power_lossy(1.0, 1.0, 0.4, 0.4, r_a, x_d)
    assert (p, q) == (0.0, 0.0)


def test_lossy_lossless_closed_form():
    p, q = dv.machine_power_lossy(1.0, 1.0, math.pi / 6, 0.0, 0.0, 0.5)
    assert p == pytest.approx(1.0, abs=1e-15)
    assert q == pytest.approx((math.cos(math.pi / 6) - 1) / 0.5, abs=1e-15)
    assert q == pytest.approx(-0.26795, abs=1e-5)


def test_lossy_matches_complex_oracle_point():
    p, q = dv.machine_power_lossy(1.05, 0.98, 0.15, 0.0, 0.1, 0.5)
    s = 0.98 * np.conj((1.05 * np.exp(0.15j) - 0.98) / complex(0.1, 0.5))
    assert abs(p - s.real) < 1e-12 and abs(q - s.imag) < 1e-12


def test_lossy_rejects_zero_impedance():
    with pytest.raises(ParameterError):
        dv.machine_power_lossy(1.0, 1.0, 0.0, 0.0, 0.0, 0.0)


def test_lossless_examples():
    assert dv.machine_power_lossless(1.0, 1.0, 0.2, 0.2, 0.3) == (0.0, 0.0)
    p, q = dv.machine_power_lossless(1.0, 1.0, math.pi / 2, 0.0, 1.0)
    assert p == 1.0 and q == pytest.approx(-1.0, abs=1e-15)


def test_resistive_examples():
    assert dv.dual_power_resistive(1.1, 1.1, 0.3, 0.3, 0.2) == (0.0, 0.0)
    p, q = dv.dual_power_resistive(1.0, 1.0, math.pi / 2, 0.0, -10.0)
    assert p == pytest.approx(0.1, abs=1e-15) and q == pytest.approx(0.1, abs=1e-15)


def test_dual_gfm_examples():
    assert dv.dual_gfm_power(1.0, 1.0, 0.3, 0.3, 0.1) == (0.0, 0.0)
    p, q = dv.dual_gfm_power(1.0, 1.0, math.pi / 2, 0.0, 0.1)
    assert p == pytest.approx(0.1, abs=1e-15) and q == pytest.approx(0.1, abs=1e-15)


def test_dual_gfm_extended_precision_point():
    mpmath.mp.dps = 50
    e, v, d, t, K = (mpmath.mpf(s) for s in ("1.05", "0.98", "0.2", "0.1", "0.1"))
    p_ref = K * v * v - K * e * v * mpmath.cos(d - t)
    q_ref = K * e * v * mpmath.sin(d - t)
    p, q = dv.dual_gfm_power(1.05, 0.98, 0.2, 0.1, 0.1)
    assert abs(p - float(p_ref)) < 1e-15 and abs(q - float(q_ref)) < 1e-15
    # the rounded reference pair (-6.33e-3, 1.027e-2) is good to about two digits in p
    assert p == pytest.approx(-6.33e-3, abs=2e-5) and q == pytest.approx(1.027e-2, abs=1e-5)


@settings(max_examples=300, deadline=None)
@given(e=mag, v=mag, d=ang, t=ang, r_a=pos, x_d=pos)
def test_lossy_equals_complex_oracle(e, v, d, t, r_a, x_d):
    p, q = dv.machine_power_lossy(e, v, d, t, r_a, x_d)
    s = v * np.exp(1j * t) * np.conj((e * np.exp(1j * d) - v * np.exp(1j * t)) / complex(r_a, x_d))
    assert abs(p - s.real) < 1e-12 and abs(q - s.imag) < 1e-12


@settings(max_examples=300, deadline=None)
@given(e=mag, v=mag, d=ang, t=ang, K=st.floats(0.01, 10.0))
def test_duality_identity(e, v, d, t, K):
    a = dv.dual_gfm_power(e, v, d, t, K)
    b = dv.dual_power_resistive(e, v, d, t, -1.0 / K)
    assert abs(a[0] - b[0]) < 1e-12 and abs(a[1] - b[1]) < 1e-12


@settings(max_examples=300, deadline=None)
@given(e=mag, v=mag, d=ang, t=ang, r_a=pos, x_d=pos)
def test_limit_identities(e, v, d, t, r_a, x_d):
    assert dv.machine_power_lossy(e, v, d, t, 0.0, x_d) == dv.machine_power_lossless(e, v, d, t, x_d)
    assert dv.machine_power_lossy(e, v, d, t, r_a, 0.0) == dv.dual_power_resistive(e, v, d, t, r_a)


@settings(max_examples=300, deadline=None)
@given(e=mag, v=mag, phi=ang, K=st.floats(0.01, 10.0), x_d=pos)
def test_parity_of_interfaces(e, v, phi, K, x_d):
    p1, q1 = dv.dual_gfm_power(e, v, phi, 0.0, K)
    p2, q2 = dv.dual_gfm_power(e, v, -phi, 0.0, K)
    assert p1 == pytest.approx(p2, abs=1e-15) and q1 == pytest.approx(-q2, abs=1e-15)
    m1 = dv.machine_power_lossless(e, v, phi, 0.0, x_d)
    m2 = dv.machine_power_lossless(e, v, -phi, 0.0, x_d)
    assert m1[0] == pytest.approx(-m2[0], abs=1e-14) and m1[1] == pytest.approx(m2[1], abs=1e-14)


def test_arrays_broadcast():
    e = np.linspace(0.9, 1.1, 5)
    p, q = dv.dual_gfm_power(e, 1.0, 0.1, 0.0, 0.1)
    assert p.shape == q.shape == (5,)


# -- swing, governors, controllers -----------------------------------------

def test_swing_examples():
    m = dv.MachineDevice(bus=1, M=10.0, D=0.0, p_m=0.5)
    assert dv.swing_derivatives(m, 0.5) == (0.0, 0.0)
    d, w = dv.swing_derivatives(dataclasses.replace(m, p_m=0.6), 0.5)
    assert d == 0.0 and w == pytest.approx(0.01, abs=1e-16)


@given(slip=st.floats(-0.1, 0.1).filter(lambda s: abs(s) > 1e-9))
def test_swing_damping_sign(slip):
    m = dv.MachineDevice(bus=1, D=50.0, omega=1.0 + slip, p_m=0.3)
    _, w = dv.swing_derivatives(m, 0.3)
    assert np.sign(w) == -np.sign(slip)


def test_swing_angle_rate_scales_with_base():
    m = dv.MachineDevice(bus=1, omega=1.01, omega_b=2 * math.pi * 50)
    assert dv.swing_derivatives(m, 0.0)[0] == pytest.approx(0.01 * 2 * math.pi * 50)


def test_dual_swing_examples():
    g = dv.DualGfmDevice(bus=1, M_t=30.0, D_t=20.0, p_ref=0.4)
    assert dv.dual_swing_derivatives(g, 0.4) == (0.0, 0.0)
    de, drho = dv.dual_swing_derivatives(g, 0.1)
    assert de == 0.0 and drho == pytest.approx(0.01, abs=1e-16)
    de, _ = dv.dual_swing_derivatives(dataclasses.replace(g, e=2.0, rho=0.05), 0.4)
    assert de == pytest.approx(0.1, abs=1e-16)


def test_dual_swing_rejects_nonpositive_emf():
    with pytest.raises(DomainError):
        dv.dual_swing_derivatives(dv.DualGfmDevice(bus=1, e=0.0), 0.0)
    with pytest.raises(DomainError):
        _ = dv.DualGfmDevice(bus=1, e=-1.0).u


def test_governor_examples():
    m = dv.MachineDevice(bus=1, R=0.05, T_m=2.0, p_m=0.5, p_m_o=0.5)
    assert dv.governor_derivative(m) == 0.0
    assert dv.governor_derivative(dataclasses.replace(m, omega=0.99)) == pytest.approx(0.1, abs=1e-12)
    # stationary p_m = p_m_o + (omega_ref - omega)/R
    s = dataclasses.replace(m, omega=0.99, p_m=0.5 + 0.01 / 0.05)
    assert dv.governor_derivative(s) == pytest.approx(0.0, abs=1e-12)


def test_dual_governor_examples():
    g = dv.DualGfmDevice(bus=1, R_t=0.05, T_m_t=2.0, p_ref=0.3, p_ref_o=0.3)
    assert dv.dual_governor_derivative(g) == 0.0
    assert dv.dual_governor_derivative(dataclasses.replace(g, rho=-0.01)) == pytest.approx(0.1, abs=1e-12)


def test_perfect_tracking_integrates_rho():
    g = dv.DualGfmDevice(bus=1, perfect_tracking=True, R_t=0.0, T_m_t=2.0, rho=0.001, p_ref=0.2, p_ref_o=0.5)
    assert dv.dual_governor_derivative(g) == pytest.approx(-0.001 / (1e-4 * 2.0))
    g.validate()


def test_avr_examples():
    m = dv.MachineDevice(bus=1, v_ref=1.0, v_f=0.0, eq_t=0.0, delta=math.pi / 2)
    de, dvf = dv.avr_derivatives(m, 1.0, 0.0)
    assert de == pytest.approx(0.0, abs=1e-15) and dvf == 0.0
    # round rotor: no dependence on i_d
    r = dv.MachineDevice(bus=1, x_d=0.3, x_d_t=0.3, v_f=1.2, eq_t=1.0, T_d0_t=6.0)
    for theta in (0.0, 0.5, 2.0):
        assert dv.avr_derivatives(r, 0.9, theta)[0] == pytest.approx((1.2 - 1.0) / 6.0, abs=1e-15)


def test_avr_stationary_point():
    m = dv.MachineDevice(bus=1, K_r=20.0, v_ref=1.05, x_d=1.2, x_d_t=0.3, delta=0.4)
    v, theta = 1.0, 0.1
    v_f = 20.0 * (1.05 - v)
    # e = v_f - (x_d - x'_d) i_d with i_d = (e - v cos)/x'_d, solved for e
    c = v * math.cos(0.4 - theta)
    e = (v_f + (1.2 - 0.3) * c / 0.3) / (1 + (1.2 - 0.3) / 0.3)
    de, dvf = dv.avr_derivatives(dataclasses.replace(m, v_f=v_f, eq_t=e), v, theta)
    assert abs(de) < 1e-14 and abs(dvf) < 1e-14


def test_reactive_examples():
    g = dv.DualGfmDevice(bus=1, K_q=10.0, T_q=5.0)
    d = dataclasses.replace(g, q_ref=0.0, delta=10.0 * (0.0 - 0.02))
    assert dv.dual_reactive_derivatives(d, 0.02, 1.0) == (0.0, 0.0)
    dd, _ = dv.dual_reactive_derivatives(dataclasses.replace(g, q_ref=0.05), 0.03, 1.0)
    assert dd == pytest.approx(0.04, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(q=st.floats(-1, 1), qr=st.floats(-1, 1), delta=ang, w=st.floats(0.95, 1.05))
def test_reactive_forms_identical(q, qr, delta, w):
    g = dv.DualGfmDevice(bus=1, q_ref=qr, delta=delta)
    a = dv.dual_reactive_derivatives(g, q, w)
    b = dv.dual_reactive_equiv_form(g, q, w)
    assert a[0] == b[0]
    assert b[1] == pytest.approx(g.K_q * a[1], rel=1e-12, abs=1e-12)


def test_reactive_equiv_equilibrium():
    g = dv.DualGfmDevice(bus=1, q_ref=0.03)
    q = 0.01
    d = dataclasses.replace(g, delta=g.delta_r - g.K_q * q)
    assert dv.dual_reactive_equiv_form(d, q, 1.0)[0] == pytest.approx(0.0, abs=1e-15)


# -- PLL, PSS, complex frequency -------------------------------------------

def test_pll_settled():
    pll = dv.PllState(theta_f=0.3)
    assert dv.pll_derivatives(pll, 0.3) == (0.0, 1.0)


def test_pll_step_response():
    T = 0.02
    dt = 1e-4
    traj = dae.integrate_ode(lambda x: np.asarray(dv.pll_derivatives(dv.PllState(theta_f=x[0], T_pll=T), 0.1)[0])[None],
                             [0.0], dt, 400)
    t = np.arange(401) * dt
    est = np.array([dv.pll_derivatives(dv.PllState(theta_f=th, T_pll=T), 0.1)[1] for th in traj[:, 0]])
    assert est[0] - 1.0 == pytest.approx(5.0, abs=1e-12)
    assert np.max(np.abs(est - 1.0 - 5.0 * np.exp(-t / T))) < 1e-4


def test_pll_ramp_tracking():
    a, T = 0.02, 0.02

    def f(x):
        return np.array([np.ones_like(x[0]), dv.pll_derivatives(dv.PllState(theta_f=x[1], T_pll=T), a * x[0])[0]])

    traj = dae.integrate_ode(f, [0.0, 0.0], 0.001, 1000)
    _, est = dv.pll_derivatives(dv.PllState(theta_f=traj[-1, 1], T_pll=T), a * traj[-1, 0])
    assert est == pytest.approx(1.0 + a, abs=1e-10)


def test_pll_ignores_whole_turns_and_sign():
    pll = dv.PllState(theta_f=0.2)
    base = dv.pll_derivatives(pll, 0.25)
    assert dv.pll_derivatives(pll, 0.25 + 6 * math.pi) == pytest.approx(base)
    assert dv.pll_derivatives(pll, dv.phasor_angle(-1.0, 0.25 - math.pi)) == pytest.approx(base)


def _pss(**kw):
    base = dict(K_pss=2.0, T_w=5.0, T1=0.3, T2=0.1, T3=0.3, T4=0.1, lo=-0.05, hi=0.05)
    base.update(kw)
    return dv.PssState(**base)


def test_pss_washout_blocks_constant_input():
    pss = _pss(K_pss=0.1, T1=1.0, T2=1.0, T3=1.0, T4=1.0)

    def f(x):
        return np.array(dv.pss_derivatives(dataclasses.replace(pss, x_w=x[0], x_1=x[1], x_2=x[2]), 1.01))

    x = dae.integrate_ode(f, [0.0, 0.0, 0.0], 0.05, 2000)[-1]
    assert abs(dv.pss_output(dataclasses.replace(pss, x_w=x[0], x_1=x[1], x_2=x[2]), 1.01)) < 1e-6


@given(w=st.floats(0.98, 1.02), xw=st.floats(-0.01, 0.01))
def test_pss_equal_time_constants_is_pure_gain(w, xw):
    pss = _pss(K_pss=1.0, T1=0.2, T2=0.2, T3=0.7, T4=0.7, x_w=xw, x_1=0.3, x_2=-0.2, lo=-10, hi=10)
    assert dv.pss_output(pss, w) == pytest.approx(1.0 * (w - 1.0) - xw, abs=1e-15)


@given(w=st.floats(-10, 10), x=st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_pss_output_respects_limits(w, x):
    out = dv.pss_output(_pss(K_pss=50.0, x_w=x[0], x_1=x[1], x_2=x[2]), w)
    assert -0.05 <= out <= 0.05


def test_pss_zero_at_equilibrium():
    assert dv.pss_output(_pss(), 1.0) == 0.0
    assert dv.pss_derivatives(_pss(), 1.0) == (0.0, 0.0, 0.0)


def test_complex_frequency_examples():
    _, d = dv.complex_frequency(1.3, 0.0, 0.0, 0.4)
    assert d == 0
    eta, d = dv.complex_frequency(1.0, 0.0, 1.0, 0.0)
    assert d == 1j and complex(eta) == 1j


def test_complex_frequency_exponential_oracle():
    e0, rho, omega, delta = 1.1, -0.3, 2.0, 0.2
    eta = complex(rho, omega)

    def f(x):
        z = (x[0] + 1j * x[1]) * eta
        return np.array([z.real, z.imag])

    _, d0 = dv.complex_frequency(e0, rho, omega, delta)
    assert d0 == pytest.approx(eta * e0 * np.exp(1j * delta))
    z0 = e0 * np.exp(1j * delta)
    end = dae.integrate_ode(f, [z0.real, z0.imag], 1e-4, 10_000)[-1]
    exact = e0 * math.exp(rho) * np.exp(1j * (delta + omega))
    assert abs(complex(*end) - exact) < 1e-8


# -- device objects ---------------------------------------------------------

def test_dual_initialize_reproduces_injection():
    g = dv.DualGfmDevice(bus=1, K=0.1).initialize(1.02, 0.1, 0.05, -0.02)
    p, q = g.injection(1.02, 0.1)
    assert p == pytest.approx(0.05, abs=1e-14) and q == pytest.approx(-0.02, abs=1e-14)
    assert g.rho == 0.0 and g.p_ref == g.p_ref_o == 0.05


def test_dual_zero_injection_gives_emf_equal_voltage():
    g = dv.DualGfmDevice(bus=1).initialize(1.03, -0.2, 0.0, 0.0)
    assert g.e == pytest.approx(1.03) and g.delta == pytest.approx(-0.2)


def test_machine_initialize_is_stationary():
    m = dv.MachineDevice(bus=1, r_a=0.01, x_d=1.0, x_d_t=0.25).initialize(1.02, 0.15, 0.8, 0.2)
    p, q = m.injection(1.02, 0.15)
    assert p == pytest.approx(0.8, abs=1e-12) and q == pytest.approx(0.2, abs=1e-12)
    # the lossless swing sees p_m = p; r_a only appears in the injection
    assert np.allclose(m.derivatives(1.02, 0.15), 0.0, atol=1e-12)


def test_bind_roundtrip():
    g = dv.DualGfmDevice(bus=1, pss=_pss())
    x = np.arange(1.0, 10.0)
    assert np.array_equal(g.bind(x).get_states(), x)
    assert g.get_states()[0] == 1.0  # original untouched


@pytest.mark.parametrize("field,value", [("K", 0.0), ("M_t", -1.0), ("T_q", 0.0), ("R_t", 0.0)])
def test_dual_validation(field, value):
    with pytest.raises(ParameterError):
        dataclasses.replace(dv.DualGfmDevice(bus=1), **{field: value}).validate()


def test_wrap_angle_range():
    a = np.linspace(-20, 20, 1001)
    w = dv.wrap_angle(a)
    assert np.all(w >= -math.pi) and np.all(w < math.pi)
    assert np.allclose(np.sin(w), np.sin(a)) and np.allclose(np.cos(w), np.cos(a))

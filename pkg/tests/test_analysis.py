import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from gfmsim.analysis import (
    DesignParams,
    LoopFunctions,
    StepMetrics,
    build_gc_closed_loop,
    build_gc_design_model,
    build_is_closed_loop,
    build_is_design_model,
    design_loop_functions,
    design_target,
    is_monotone,
    max_rocof,
    rocof_report,
    step_metrics,
)
from gfmsim.errors import InvalidDesign, NotSettled
from gfmsim.plant import PlantParams
from gfmsim.tfcore import TransferFunction, step_response, tf_poles

PLANT = PlantParams()
K = PLANT.e0 * PLANT.v0
X = PLANT.x_line
s_points = st.complex_numbers(min_magnitude=0.05, max_magnitude=200, allow_nan=False, allow_infinity=False)


def tf(num, den=1.0):
    return TransferFunction(num, den)


def rel(a, b):
    return abs(a - b) / abs(b)


# --- loop assembly -----------------------------------------------------------


def test_loop_functions_validate():
    with pytest.raises(ValueError, match="proper"):
        LoopFunctions(g_f=tf([0, 0, 1], [1]), g_l=tf(1), g_b=tf(1))
    with pytest.raises(ValueError, match="right-half"):
        LoopFunctions(g_f=tf(0), g_l=tf([1], [-1, 1]), g_b=tf(1))
    LoopFunctions(g_f=tf(0), g_l=tf([1], [0, 1]), g_b=tf(1))  # integrator allowed


def test_gc_dc_gain_follows_gb():
    for gb0 in (1.0, 2.0, 0.5):
        lf = LoopFunctions(g_f=tf([3.0], [1, 0.1]), g_l=tf([1e-3], [1, 0.03]), g_b=tf([gb0]))
        assert build_gc_closed_loop(lf, PLANT).dc_gain() == pytest.approx(1 / gb0, rel=1e-12)


def test_gc_integrator_substitution():
    g = build_gc_closed_loop(LoopFunctions(tf(0), tf(1), tf(0)), PLANT)
    assert g(2j) == pytest.approx(K / (2j * X), rel=1e-12)


@given(s_points, st.floats(0.1, 1e4), st.floats(0.005, 0.5), st.floats(1e-5, 1e-2), st.floats(0, 0.1))
def test_gc_pointwise(s, kw, tau, kl, beta):
    gf, gl, gb = tf([kw], [1, tau]), tf([kl], [1, 0.03]), tf([1], [1, beta])
    g = build_gc_closed_loop(LoopFunctions(gf, gl, gb), PLANT)
    raw = K * gl(s) / (s * X + s * gf(s) * gl(s) + K * gl(s) * gb(s))
    assume(abs(raw) < 1e12)
    assert rel(g(s), raw) < 1e-9


def test_is_zero_gb():
    g = build_is_closed_loop(LoopFunctions(g_f=tf(5.0), g_l=tf([1], [1, 1]), g_b=tf(0.0)))
    assert g.num.is_zero
    assert g(1j) == 0


def test_is_pure_droop_dc():
    kp = math.pi / 12000
    g = build_is_closed_loop(LoopFunctions(g_f=tf(0.0), g_l=tf(1.0), g_b=tf(kp)))
    assert g.dc_gain() == pytest.approx(-kp, rel=1e-15)


@given(s_points, st.floats(0.1, 1e4), st.floats(0.005, 0.5), st.floats(1e-5, 1e-2))
def test_is_pointwise(s, kw, tau, kl):
    gf, gl, gb = tf([kw], [1, tau]), tf([kl], [0, 1]), tf([1.0])
    g = build_is_closed_loop(LoopFunctions(gf, gl, gb))
    raw = -gb(s) * gl(s) / (1 + gf(s) * gl(s))
    assert rel(g(s), raw) < 1e-9


# --- design form -------------------------------------------------------------


def test_design_target_poles_and_gain():
    g = design_target(DesignParams(0.05, 0.1, 0.2, 0.5))
    assert np.allclose(tf_poles(g), [-2.0, -5.0, -10.0], atol=1e-9, rtol=0)
    assert g.zeros() == pytest.approx([-20.0])
    assert g.dc_gain() == 1.0


def test_design_target_cancellation():
    g = design_target(DesignParams(0.1, 0.1, 0.2, 0.5))
    ref = tf([1.0], [1.0, 0.7, 0.1])
    for s in (0.5j, 3 + 1j, 10j):
        assert rel(g(s), ref(s)) < 1e-12


@pytest.mark.parametrize("field", ["t_z1", "t_p1", "t_p2", "t_p3"])
def test_design_invalid_time_constants(field):
    kw = dict(t_z1=0.02, t_p1=0.05, t_p2=0.1, t_p3=0.3)
    kw[field] = -0.1
    with pytest.raises(InvalidDesign, match=f"design.{field}"):
        DesignParams(**kw)


def test_design_zero_slower_than_poles_rejected():
    with pytest.raises(InvalidDesign, match="design.t_z1"):
        DesignParams(0.5, 0.05, 0.1, 0.3)


def test_design_negative_beta_rejected():
    with pytest.raises(InvalidDesign, match="design.beta"):
        DesignParams(0.02, 0.05, 0.1, 0.3, beta=-0.01)


def test_gc_design_dc_gain():
    dp = DesignParams(0.1, 0.05, 0.1, 0.3, beta=0.01)
    assert build_gc_design_model(dp, PLANT).dc_gain() == pytest.approx(1.0, abs=1e-12)


def test_gc_design_reduction_without_zero_and_lag():
    dp = DesignParams(1e-13, 0.05, 0.1, 0.3, beta=0.0)
    g = build_gc_design_model(dp, PLANT)
    for s in (0.5j, 4j, 1 + 20j):
        prod = (1 + 0.05 * s) * (1 + 0.1 * s) * (1 + 0.3 * s)
        assert rel(g(s), K / (s * X * prod + K)) < 1e-9


def routh_sign_changes(coeffs_desc):
    """Number of right-half-plane roots from the first column of the Routh array."""
    n = len(coeffs_desc)
    rows = [list(coeffs_desc[0::2]), list(coeffs_desc[1::2])]
    width = len(rows[0])
    rows = [r + [0.0] * (width - len(r)) for r in rows]
    for _ in range(n - 2):
        a, b = rows[-2], rows[-1]
        new = [(b[0] * a[j + 1] - a[0] * b[j + 1]) / b[0] for j in range(width - 1)] + [0.0]
        rows.append(new)
    first = [r[0] for r in rows[:n]]
    return sum(1 for x, y in zip(first, first[1:]) if x * y < 0)


def test_table_scale_example_is_unstable():
    # T_p = {0.05, 0.1, 0.3}, T_z1 = 0.1, beta = 0.01 with the plain design
    # gain: the loop is too stiff for the 0.94 ohm line and two poles sit in
    # the right half plane (Routh-Hurwitz agrees with the eigenvalue roots)
    for gain in (1.0, math.pi / 12000):
        dp = DesignParams(0.1, 0.05, 0.1, 0.3, beta=0.01, gain=gain)
        g = build_gc_design_model(dp, PLANT)
        rhp = sum(1 for p in g.poles() if p.real > 0)
        desc = list(reversed(g.den.coeffs))
        assert routh_sign_changes(desc) == rhp == 2


def test_routh_oracle_on_known_polynomials():
    assert routh_sign_changes([1.0, 6.0, 11.0, 6.0]) == 0  # (s+1)(s+2)(s+3)
    assert routh_sign_changes([1.0, -1.0, 2.0]) == 2


def test_design_model_is_composition_of_loop():
    dp = DesignParams(0.02, 0.0318, 0.01, 0.012, beta=0.02, gain=math.pi / 12000)
    a = build_gc_closed_loop(design_loop_functions(dp, PLANT), PLANT)
    b = build_gc_design_model(dp, PLANT)
    for s in (0.3j, 2 + 5j, 40j, 1e3j):
        assert rel(a(s), b(s)) < 1e-9


def test_is_design_model_monotone():
    dp = DesignParams(0.02, 0.0318, 0.01, 0.012, gain=math.pi / 12000)
    _, y = step_response(build_is_design_model(dp), 1.0, 1e-4)
    assert is_monotone(y)
    assert y[-1] == pytest.approx(-math.pi / 12000, rel=1e-6)


# --- metrics ---------------------------------------------------------------


def test_first_order_metrics():
    dt = 1e-3
    t = np.arange(0, 30, dt)
    m = step_metrics(1 - np.exp(-t), dt, 1.0)
    assert m.rise_time_10_90 == pytest.approx(math.log(9), rel=1e-5)
    assert m.settling_time_2pct == pytest.approx(math.log(50), rel=1e-5)
    assert m.overshoot_pct == 0.0
    assert m.rise_time_10_90 <= m.settling_time_2pct


def test_second_order_overshoot():
    g = tf([1.0], [1.0, 1.0, 1.0])  # zeta 0.5, wn 1
    _, y = step_response(g, 40.0, 1e-3)
    m = step_metrics(y, 1e-3, 1.0)
    assert m.overshoot_pct == pytest.approx(100 * math.exp(-math.pi * 0.5 / math.sqrt(0.75)), rel=1e-4)
    assert m.overshoot_pct == pytest.approx(16.30, abs=0.01)


def test_constant_series():
    m = step_metrics(np.full(100, 3.0), 0.01, 1.0)
    assert (m.rise_time_10_90, m.settling_time_2pct, m.overshoot_pct) == (0.0, 0.0, 0.0)
    assert m.steady_state == 3.0


def test_decreasing_step():
    dt = 1e-3
    t = np.arange(0, 20, dt)
    m = step_metrics(50 - 0.5 * (1 - np.exp(-t / 0.5)), dt, -0.5)
    assert m.rise_time_10_90 == pytest.approx(0.5 * math.log(9), rel=1e-4)
    assert m.overshoot_pct == 0.0


def test_not_settled():
    with pytest.raises(NotSettled):
        step_metrics(np.linspace(0, 1, 1000), 0.01, 1.0)


def test_bad_inputs():
    with pytest.raises(ValueError):
        step_metrics([], 0.1, 1.0)
    with pytest.raises(ValueError):
        step_metrics([1.0, 1.0], 0.1, 0.0)


def test_rocof_constant_and_ramp():
    dt = 1e-3
    assert max_rocof(np.full(1000, 50.0), dt, 0.1) == 0.0
    ramp = 50 + 0.5 * np.arange(2000) * dt
    for w in (0.001, 0.02, 0.1, 0.5):
        assert max_rocof(ramp, dt, w) == pytest.approx(0.5, rel=1e-9)
    with pytest.raises(ValueError):
        max_rocof(ramp, dt, dt / 2)


def test_rocof_report_schema():
    m = StepMetrics(0.1, 0.2, 1.5, 50.0, max_rocof=0.2)
    row = rocof_report("vsg", "is", m, 1.0)
    assert set(row) == {"strategy", "mode", "rise_time_s", "settling_time_s", "overshoot_pct", "max_rocof_hz_s", "rocof_pass"}
    assert row["rocof_pass"] is True
    assert rocof_report("vsg", "is", m, 0.1)["rocof_pass"] is False
    assert rocof_report("udc", "gc", StepMetrics(0.1, 0.2, 1.5, 1.0), 1.0)["rocof_pass"] is None


design_st = st.builds(
    lambda tp, frac, beta: DesignParams(frac * max(tp), *tp, beta=beta, gain=math.pi / 12000),
    st.tuples(st.floats(0.005, 0.5), st.floats(0.005, 0.5), st.floats(0.005, 0.5)),
    st.floats(0.01, 1.0),
    st.floats(0.0, 0.05),
)


@settings(max_examples=40, deadline=None)
@given(design_st)
def test_design_properties(dp):
    poles = tf_poles(design_target(dp))
    assert len(poles) == 3 and all(p.imag == 0 and p.real < 0 for p in poles)
    assert build_gc_design_model(dp, PLANT).dc_gain() == pytest.approx(1.0, abs=1e-9)
    t_end = 12 * max(dp.pole_times)
    _, y = step_response(build_is_design_model(dp), t_end, min(dp.pole_times) / 20)
    assert is_monotone(y)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.2, 0.8))
def test_metric_dt_convergence(tau, zeta):
    g = tf([1.0], [1.0, 2 * zeta * tau, tau**2])
    t_end = 40 * tau / zeta
    dt = tau / 200
    m1 = step_metrics(step_response(g, t_end, dt)[1], dt, 1.0)
    m2 = step_metrics(step_response(g, t_end, dt / 2)[1], dt / 2, 1.0)
    for a, b in ((m1.rise_time_10_90, m2.rise_time_10_90), (m1.settling_time_2pct, m2.settling_time_2pct),
                 (m1.overshoot_pct, m2.overshoot_pct)):
        assert abs(a - b) <= 0.005 * abs(b)

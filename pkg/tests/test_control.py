import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esdroop.control import (
    CapacityError, ControllerParams, DroopParams, EsState, Measurements, SseState, controller_step,
    droop_eval, es_step, hysteresis_update, local_objective, new_controller, q_capacity, sse_update,
    voltage_penalty,
)


def droop_oracle(v_min, v_max, v_ref, deadband, q0, q_min, q_max, v):
    # the curve is piecewise linear through four corner points and flat outside them
    xs = [v_min, v_ref - deadband / 2, v_ref + deadband / 2, v_max]
    ys = [q_max, q0, q0, q_min]
    return float(np.interp(v, xs, ys))


def random_droop(rng):
    v_min = rng.uniform(0.80, 0.92)
    v_max = rng.uniform(1.08, 1.20)
    v_ref = rng.uniform(0.95, 1.05)
    deadband = rng.uniform(0.0, 0.04)
    q_max = rng.uniform(10.0, 5000.0)
    q0 = rng.uniform(-q_max, q_max)
    return DroopParams(v_min, v_max, v_ref, deadband, q0), -q_max, q_max


# --- droop ---------------------------------------------------------------------

def test_droop_matches_interpolation_oracle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        p, q_min, q_max = random_droop(rng)
        v = rng.uniform(0.75, 1.25)
        got = droop_eval(p, v, q_min, q_max)
        want = droop_oracle(p.v_min, p.v_max, p.v_ref, p.deadband, p.q0, q_min, q_max, v)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12 * q_max)


def test_droop_continuous_at_breakpoints():
    rng = np.random.default_rng(2)
    for _ in range(200):
        p, q_min, q_max = random_droop(rng)
        for v in (p.v_min, p.v_l, p.v_r, p.v_max):
            left = droop_eval(p, v - 1e-12, q_min, q_max)
            right = droop_eval(p, v + 1e-12, q_min, q_max)
            assert abs(left - right) <= 1e-6 * q_max


def test_droop_worked_values():
    p = DroopParams(0.80, 1.20, 1.0, 0.02, 0.0)
    assert droop_eval(p, 0.70, -100, 100) == 100
    assert droop_eval(p, 0.895, -100, 100) == pytest.approx(50.0)
    assert droop_eval(p, 1.0, -100, 100) == 0.0
    assert droop_eval(p, 1.105, -100, 100) == pytest.approx(-50.0)
    assert droop_eval(p, 1.30, -100, 100) == -100


def test_droop_rejects_unordered_breakpoints():
    with pytest.raises(ValueError):
        DroopParams(0.95, 1.05, 1.0, 0.2, 0.0)
    with pytest.raises(ValueError):
        DroopParams(0.8, 1.2, 1.0, -0.01, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.75, 1.25), st.floats(0.75, 1.25), st.integers(0, 2**31))
def test_droop_monotone_nonincreasing(v1, v2, seed):
    p, q_min, q_max = random_droop(np.random.default_rng(seed))
    lo, hi = sorted((v1, v2))
    assert droop_eval(p, lo, q_min, q_max) >= droop_eval(p, hi, q_min, q_max) - 1e-9 * q_max


@settings(max_examples=200, deadline=None)
@given(st.floats(0.5, 1.5), st.integers(0, 2**31))
def test_droop_within_capacity(v, seed):
    p, q_min, q_max = random_droop(np.random.default_rng(seed))
    assert q_min - 1e-9 <= droop_eval(p, v, q_min, q_max) <= q_max + 1e-9


# --- hysteresis, penalty, capacity ---------------------------------------------

def test_hysteresis_example():
    assert hysteresis_update(0.0, 100.0, 0.3) == pytest.approx(30.0)
    assert hysteresis_update(30.0, 100.0, 0.3) == pytest.approx(51.0)
    with pytest.raises(ValueError):
        hysteresis_update(0.0, 1.0, 0.0)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(0.01, 1.0))
def test_hysteresis_between_inputs(q_prev, q_new, mu_h):
    out = hysteresis_update(q_prev, q_new, mu_h)
    assert min(q_prev, q_new) - 1e-9 <= out <= max(q_prev, q_new) + 1e-9


def test_voltage_penalty_values():
    assert voltage_penalty(0.90) == pytest.approx(0.5)
    assert voltage_penalty(1.07) == pytest.approx(0.2)
    assert voltage_penalty(1.0) == 0.0
    assert np.allclose(voltage_penalty([0.94, 1.0, 1.06]), [0.1, 0.0, 0.1])


def test_q_capacity():
    assert q_capacity(5.0, 3.0) == pytest.approx(4.0)
    assert q_capacity(5.0, 5.0) == 0.0
    with pytest.raises(CapacityError):
        q_capacity(5.0, 5.1)
    with pytest.raises(CapacityError):
        q_capacity(5.0, -1.0)


# --- extremum seeking ------------------------------------------------------------

def run_quadratic(mu_star, gain=40.0, steps=400, start=1.0):
    s = EsState(mu_hat=start, gain=gain)
    mu = s.output
    trace = []
    for _ in range(steps):
        s, mu = es_step(s, (mu - mu_star) ** 2, 30.0)
        trace.append(s.mu_hat)
    return np.array(trace)


def test_es_finds_quadratic_minimum():
    tr = run_quadratic(0.98, start=1.02)
    assert abs(tr[-1] - 0.98) < 0.005 + 0.002
    assert abs(tr[0] - 1.02) < 0.01


def test_es_constant_objective_does_not_drift():
    s = EsState(mu_hat=1.01)
    for _ in range(300):
        s, _ = es_step(s, 3.7, 30.0)
    assert s.mu_hat == pytest.approx(1.01, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 100.0), st.floats(0.955, 1.045))
def test_es_no_drift_property(y, mu0):
    s = EsState(mu_hat=mu0)
    for _ in range(50):
        s, mu = es_step(s, y, 30.0)
        assert 0.95 <= mu <= 1.05
    assert s.mu_hat == pytest.approx(mu0, abs=1e-12)


def test_es_slew_limit():
    s = EsState(mu_hat=1.0, max_step=1e-4)
    prev = s.mu_hat
    rng = np.random.default_rng(0)
    for _ in range(100):
        s, _ = es_step(s, rng.uniform(0, 1e3), 30.0)
        assert abs(s.mu_hat - prev) <= 1e-4 + 1e-15
        prev = s.mu_hat


def test_es_rejects_bad_input():
    with pytest.raises(ValueError):
        es_step(EsState(), math.nan, 30.0)
    with pytest.raises(ValueError):
        es_step(EsState(), 1.0, 0.0)
    with pytest.raises(ValueError):
        EsState(omega_h=1.0, omega=0.5)


# --- steady-state error ------------------------------------------------------------

def test_sse_shift_example():
    st_ = SseState(k_q=500.0, q0_large=100.0)
    samples = [(0.99, 1.0)] * 10
    new, q0, nxt = sse_update(st_, samples, 0.0, -1000.0, 1000.0)
    assert new.last_sse == pytest.approx(-0.1)
    assert q0 == pytest.approx(50.0)
    assert nxt == 10


def test_sse_large_shift_shortens_window_and_clamps():
    st_ = SseState(k_q=500.0, q0_large=100.0)
    _, q0, nxt = sse_update(st_, [(0.95, 1.0)] * 10, 0.0, -120.0, 120.0)
    assert q0 == 120.0
    assert nxt == 8


@given(st.lists(st.tuples(st.floats(0.9, 1.1), st.floats(0.95, 1.05)), min_size=1, max_size=12),
       st.floats(-50, 50))
def test_sse_moves_against_error(samples, q0_prev):
    st_ = SseState(k_q=100.0, q0_large=1e9)
    new, q0, _ = sse_update(st_, samples, q0_prev, -1e6, 1e6)
    sse = new.last_sse
    if abs(sse) > 1e-12:
        assert np.sign(q0 - q0_prev) == -np.sign(sse)


# --- full controller ----------------------------------------------------------------

def meas(v, p_kw=0.0, cur=(0.1, 0.1, 0.1)):
    return Measurements(np.full(3, v), np.asarray(cur, dtype=complex), p_kw)


def test_controller_absorbs_on_high_voltage():
    st_ = new_controller(100.0, ControllerParams(extremum_seeking=False, sse_adaptation=False), 30.0)
    q = 0.0
    for _ in range(30):
        st_, q = controller_step(st_, meas(1.10), 30.0)
    assert q < 0
    assert st_.q_pv == q


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.85, 1.15), min_size=5, max_size=40), st.floats(0.0, 99.0))
def test_controller_output_within_capacity(volts, p_kw):
    st_ = new_controller(100.0, ControllerParams(), 30.0)
    for v in volts:
        st_, q = controller_step(st_, meas(v, p_kw), 30.0)
        qmax = q_capacity(100.0, p_kw)
        assert -qmax - 1e-9 <= q <= qmax + 1e-9
        assert 0.95 <= st_.v_ref <= 1.05


def test_local_objective_modes():
    cur = np.array([0.1, 0.2j, 0.3])
    st_ = new_controller(10.0, ControllerParams(), 30.0)
    assert local_objective(st_, Measurements(np.full(3, 0.9), cur, 0.0)) == pytest.approx(0.14 + 1.5)
    z = np.diag([0.5, 0.5, 0.5]).astype(complex)
    st_ = new_controller(10.0, ControllerParams(objective="sloss"), 30.0)
    assert local_objective(st_, Measurements(np.ones(3), cur, 0.0, z)) == pytest.approx(0.07)


def test_controller_params_validation():
    with pytest.raises(ValueError):
        ControllerParams(objective="abs")
    with pytest.raises(ValueError):
        new_controller(10.0, ControllerParams(), 30.0, objective_norm=0.0)

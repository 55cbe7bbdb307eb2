import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from stable_loewner.errors import NumericalError, ParameterError
from stable_loewner.flow_dynamics import (
    BackwardFlowState, GridStableSource, backward_trajectory, exit_probability_experiment,
    flow_map, harmonic_u, height_reach_experiment, log_deriv_quadrature, real_line_flow,
    run_backward_flow, simulate_backward_batch, step_backward_xy, time_changed_log_deriv)
from stable_loewner.loewner_core import Driver, _backward_sqrt

from conftest import random_truncated_driver


# --- single steps -----------------------------------------------------------

@given(st.floats(0.01, 5), st.floats(0, 10))
def test_vertical_step(y, dt):
    s = step_backward_xy(BackwardFlowState(0.0, 0.0, y), 0.0, dt)
    assert s.X == 0.0
    assert s.Y == pytest.approx(math.sqrt(y * y + 4 * dt), rel=1e-12)


@given(st.floats(-3, 3), st.floats(0.01, 3), st.floats(-5, 5))
def test_pure_jump(x, y, c):
    s0 = BackwardFlowState(0.3, x, y, 0.7)
    s1 = step_backward_xy(s0, c, 0.0)
    assert s1.X == x - c and s1.Y == y and s1.log_deriv == 0.7 and s1.t == 0.3


def test_corrupted_state():
    with pytest.raises(NumericalError):
        step_backward_xy(BackwardFlowState(0.0, 0.0, 0.0), 0.0, 1.0)


def test_log_deriv_closed_form():
    s = step_backward_xy(BackwardFlowState(0.0, 0.0, 1.0), 0.0, 1.0)
    assert s.log_deriv == pytest.approx(-0.5 * math.log(5), abs=1e-14)
    assert math.exp(s.log_deriv) == pytest.approx(5 ** -0.5, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(0.05, 2), st.floats(0.001, 2))
def test_log_deriv_matches_quadrature(x, y, dt):
    s = step_backward_xy(BackwardFlowState(0.0, x, y), 0.0, dt)
    assert s.log_deriv == pytest.approx(log_deriv_quadrature(complex(x, y), dt), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(0.05, 2), st.floats(0.001, 2))
def test_step_matches_slit_map(x, y, dt):
    s = step_backward_xy(BackwardFlowState(0.0, x, y), 0.0, dt)
    assert s.zeta == pytest.approx(cmath.sqrt(complex(x, y) ** 2 - 4 * dt), abs=1e-12) \
        or s.zeta == pytest.approx(-cmath.sqrt(complex(x, y) ** 2 - 4 * dt), abs=1e-12)
    assert s.Y >= y


# --- trajectories ---------------------------------------------------------------

def test_gamma_for_zero_driver():
    _, recs = run_backward_flow(1j, Driver.constant(0.0, 2.0), 2.0, [math.log(2)])
    assert recs[0].gamma_u == pytest.approx(0.75, abs=1e-12)


def test_gamma_unreached_and_zero():
    _, recs = run_backward_flow(1j, Driver.constant(0.0, 0.5), 0.5, [0.0, 5.0])
    assert recs[0].gamma_u == 0.0
    assert math.isinf(recs[1].gamma_u)


def test_gamma_monotone_in_u():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = random_truncated_driver(rng, T=3.0, n_steps=60)
        us = np.linspace(0, 2, 21)
        _, recs = run_backward_flow(complex(rng.uniform(-1, 1), rng.uniform(0.05, 1)), d, 3.0, us)
        g = np.array([r.gamma_u for r in recs])
        assert np.all(g[1:] >= g[:-1])


def test_height_bound_and_monotone():
    rng = np.random.default_rng(1)
    for _ in range(50):
        d = random_truncated_driver(rng, T=2.0, n_steps=40)
        z = complex(rng.uniform(-1, 1), rng.uniform(0.01, 1))
        t, X, Y, L = backward_trajectory(z, d, 2.0)
        assert np.all(np.diff(Y) > 0)
        assert np.all(Y ** 2 <= z.imag ** 2 + 4 * t + 1e-10)
    # equality only for the zero driver
    t, X, Y, L = backward_trajectory(0.5j, Driver.constant(0.0, 1.0), 1.0)
    assert Y[-1] ** 2 == pytest.approx(0.25 + 4.0, abs=1e-12)


def test_log_height_identity():
    rng = np.random.default_rng(2)
    d = random_truncated_driver(rng, T=1.0, n_steps=20)
    z = 0.3 + 0.2j
    t, X, Y, _ = backward_trajectory(z, d, 1.0)
    total = 0.0
    for k in range(len(t) - 1):
        zeta0 = complex(X[k], Y[k])
        dt = t[k + 1] - t[k]

        def rate(s, zeta0=zeta0):
            w = complex(_backward_sqrt(np.asarray(zeta0), s))
            return 2.0 / abs(w) ** 2

        total += integrate.quad(rate, 0.0, dt, epsabs=1e-13, epsrel=1e-12)[0]
    assert math.log(Y[-1]) - math.log(Y[0]) == pytest.approx(total, abs=1e-9)


def test_derivative_matches_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        d = random_truncated_driver(rng, T=1.0, n_steps=30)
        z = complex(rng.uniform(-1, 1), rng.uniform(0.05, 1))
        state, _ = run_backward_flow(z, d, 1.0)
        h = 1e-6
        fd = (flow_map(d, 1.0, z + h) - flow_map(d, 1.0, z - h)) / (2 * h)
        worst = max(worst, abs(math.exp(state.log_deriv) / abs(fd) - 1))
    assert worst < 1e-3


def test_time_change_consistency():
    rng = np.random.default_rng(4)
    checked = 0
    for _ in range(20):
        d = random_truncated_driver(rng, T=2.0, n_steps=20)
        z = complex(rng.uniform(-0.5, 0.5), rng.uniform(0.1, 0.5))
        _, recs = run_backward_flow(z, d, 2.0, [0.7])
        if math.isinf(recs[0].gamma_u):
            continue
        tc = time_changed_log_deriv(z, d, 2.0, 0.7, samples_per_piece=256)
        assert tc == pytest.approx(recs[0].log_deriv, abs=1e-5)
        checked += 1
    assert checked > 10


def test_driver_jump_moves_x_only():
    d = Driver([0.0, 0.5], [0.0, 2.0], 1.0)
    t, X, Y, L = backward_trajectory(1j, d, 1.0)
    free = step_backward_xy(BackwardFlowState(0.0, 0.0, 1.0), 0.0, 0.5)
    assert X[1] == pytest.approx(free.X - 2.0)
    assert Y[1] == free.Y and L[1] == free.log_deriv


# --- real-line flows ------------------------------------------------------------

@given(st.floats(0.01, 5), st.floats(0.01, 5))
def test_real_forward_zero_driver(x, T):
    res = real_line_flow(x, Driver.constant(0.0, T), T, "forward")
    assert res.X[-1] == pytest.approx(math.sqrt(x * x + 4 * T))
    assert math.isinf(res.hit_time)


@given(st.floats(0.1, 3))
def test_real_backward_hits(x):
    res = real_line_flow(x, Driver.constant(0.0, 10.0), 10.0, "backward")
    assert res.hit_time == pytest.approx(x * x / 4, abs=1e-9)


def test_real_flow_sign_symmetry():
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = random_truncated_driver(rng)
        x = rng.uniform(0.1, 2)
        for direction in ("forward", "backward"):
            a = real_line_flow(x, d, 1.0, direction)
            b = real_line_flow(-x, d.negated(), 1.0, direction)
            assert np.allclose(a.X, -b.X, atol=1e-14)
            assert a.hit_time == b.hit_time


def test_real_flow_validation():
    with pytest.raises(ParameterError):
        real_line_flow(0.0, Driver.constant(0.0, 1.0), 1.0)
    with pytest.raises(ParameterError):
        real_line_flow(1.0, Driver.constant(0.0, 1.0), 1.0, "sideways")


def test_harmonic_u():
    assert harmonic_u(2.0, 1.0) == pytest.approx(math.log(2))
    assert harmonic_u(-4.0, 0.5) == pytest.approx(0.5)


# --- Monte Carlo ------------------------------------------------------------------

class _LoggedGrid(GridStableSource):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.log = []

    def grid_increment(self, n, rng):
        out = super().grid_increment(n, rng)
        self.log.extend(out.tolist())
        return out


@pytest.mark.parametrize("seed", range(5))
def test_batch_matches_single_path(seed):
    src = _LoggedGrid(1.5, 1.0, 0.05)
    z = 0.2 + 0.3j
    out = simulate_backward_batch(z, 1, src, 3.0, np.random.default_rng(seed), u=1.0)
    n = len(src.log)
    levels = np.concatenate(([0.0], np.cumsum(src.log)))
    d = Driver(np.arange(n + 1) * 0.05, levels, max(3.0, n * 0.05))
    _, recs = run_backward_flow(z, d, min(3.0, d.horizon), [1.0])
    assert out["gamma"][0] == pytest.approx(recs[0].gamma_u, abs=1e-12)
    if math.isfinite(recs[0].gamma_u):
        assert out["log_deriv_gamma"][0] == pytest.approx(recs[0].log_deriv, abs=1e-10)


def test_batch_zero_driver_closed_form():
    src = GridStableSource(1.0, 1e-300, 0.01)
    out = simulate_backward_batch(0.2 + 0.2j, 3, src, 10.0, np.random.default_rng(0),
                                  u=math.log(5))
    _, recs = run_backward_flow(0.2 + 0.2j, Driver.constant(0.0, 10.0), 10.0, [math.log(5)])
    assert np.allclose(out["gamma"], recs[0].gamma_u, atol=1e-9)
    assert np.allclose(out["log_deriv_gamma"], recs[0].log_deriv, atol=1e-9)


def test_height_reach_u_zero():
    rep = height_reach_experiment(1.0, 0.5j, 0.0, 50, 1.0, seed=0)
    assert rep.estimate == 1.0


def test_height_reach_validation():
    with pytest.raises(ParameterError):
        height_reach_experiment(1.0, 0.5, 1.0, 10, 1.0, seed=0)


def test_exit_probability_below_supermartingale_bound():
    rep = exit_probability_experiment(0.5, 2.0, 1.0, math.inf, 2000, 100.0, seed=1)
    assert rep.estimate <= rep.extra["supermartingale_bound"] + 2 * rep.standard_error
    assert rep.ci_low <= rep.estimate <= rep.ci_high


def test_exit_probability_near_boundary():
    est = [exit_probability_experiment(1.5, 2.0, r, 10.0, 500, 10.0, seed=1, dt=1e-3).estimate
           for r in (1.0, 1.9, 1.999)]
    assert est[0] < est[1] < est[2]
    assert est[2] > 0.9


def test_backward_recurrence_trend():
    est = [exit_probability_experiment(1.5, 2.0, 1.0, math.inf, 1000, t, seed=1,
                                       direction="backward").estimate for t in (10.0, 100.0)]
    assert est[1] > est[0]


def test_exit_probability_validation():
    with pytest.raises(ParameterError):
        exit_probability_experiment(1.0, 0.5, 1.0, 2.0, 10, 1.0, seed=0)


def test_censoring_warning():
    rep = exit_probability_experiment(1.0, 2.0, 1.0, math.inf, 100, 0.01, seed=0)
    assert rep.censoring_fraction > 0.1 and rep.warnings

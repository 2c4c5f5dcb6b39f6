import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from taskalloc.errors import DisturbanceError, StepSizeError
from taskalloc.estimation import EstimateBank
from taskalloc.finite_sim import SimulationState, class_mean_errors, measure_xi
from taskalloc.game_core import TaskDynamics
from taskalloc.meanfield import (
    DisturbanceKind, DisturbanceModel, edm_rhs, long_run_error, output_times, run_closed_loop, xi_bound,
)
from taskalloc.schedule import RevisionSchedule


class NumericFamily(TaskDynamics):
    closed_form = False


def test_edm_rhs_conserves_mass(rule):
    v = edm_rhs(rule, 2.0, [100.0, 200.0, 300.0], [0.5, 0.3, 0.2])
    assert abs(v.sum()) < 1e-15
    with pytest.raises(DisturbanceError):
        edm_rhs(rule, 1.0, [1.0, 2.0, 3.0], [0.3, 0.3, 0.4], xi=[0.1, 0.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(t=st.floats(0, 1e4), amp=st.floats(0, 1), n=st.integers(2, 6))
def test_synthetic_disturbance_bounded_and_zero_sum(t, amp, n):
    for kind in (DisturbanceKind.BOUNDED_SINUSOID, DisturbanceKind.DECAYING):
        xi = DisturbanceModel(kind, amp)(t, n)
        assert abs(xi.sum()) < 1e-12 and np.abs(xi).max() <= amp + 1e-15


def test_recorded_disturbance_projected():
    d = DisturbanceModel.recorded([0.0, 1.0], [[0.3, 0.0, 0.0], [0.0, 0.0, 0.9]], amplitude=0.1)
    for t in (0.5, 2.0):
        xi = d(t, 3)
        assert abs(xi.sum()) < 1e-15 and np.abs(xi).max() <= 0.1 + 1e-15
    assert d.label().startswith("synthetic:table")


def test_output_times():
    np.testing.assert_allclose(output_times(2.0, 0.5), [0, 0.5, 1.0, 1.5, 2.0])


def test_rejects_bad_inputs(dyn, rule):
    with pytest.raises(StepSizeError):
        run_closed_loop(dyn, rule, 1.0, None, [1, 1, 1], [1 / 3] * 3, 1.0, 0.0)
    with pytest.raises(ValueError):
        run_closed_loop(dyn, rule, 1.0, None, [1, 1, 1], [0.5, 0.6, 0.1], 1.0, 0.01)


def test_equilibrium_is_held(dyn, rule, eq):
    rec = run_closed_loop(dyn, rule, 1.0, None, eq.q, eq.x_star, 100.0, 0.01)
    assert np.abs(rec.q - eq.q).max() < 1e-7
    assert np.abs(rec.x - eq.x_star).max() < 1e-9


def test_trajectory_schema_and_simplex(dyn, rule):
    rec = run_closed_loop(dyn, rule, 0.5, DisturbanceModel.sinusoid(0.05), [100, 200, 300], [1 / 3] * 3,
                          50.0, 0.01, output_every=1.0)
    assert rec.data.shape == (51, 14) and np.all(np.diff(rec.t) > 0)
    assert np.abs(rec.x.sum(axis=1) - 1).max() < 1e-12 and rec.x.min() >= 0
    assert rec.meta["max_simplex_drift"] < 1e-12
    assert np.all(rec.column("L") >= -1e-12) and np.all(rec.column("S") >= 0)
    np.testing.assert_array_equal(rec.column("q_inf_norm"), rec.q.max(axis=1))
    assert rec.meta["disturbance"].startswith("synthetic:")


def test_converges_without_disturbance(dyn, rule, eq):
    # slow, lightly damped approach: about a decade every 2000 time units
    rec = run_closed_loop(dyn, rule, 1.0, None, [100, 200, 300], [1 / 3] * 3, 8000.0, 0.02, output_every=10.0)
    assert long_run_error(rec, eq.q, eq.x_star) < 1e-2


def test_storage_decreases_along_undisturbed_flow(dyn, rule):
    # L + S is nonincreasing along the closed loop at lambda = 1
    rec = run_closed_loop(dyn, rule, 1.0, None, [100, 200, 300], [1 / 3] * 3, 200.0, 0.01, output_every=1.0)
    total = rec.column("L") + rec.column("S")
    assert np.all(np.diff(total) <= 1e-9 * np.maximum(1.0, total[:-1]))


def test_python_path_matches_compiled(rule):
    kw = dict(n=3, R=3.44, alpha=0.036, beta=0.91, w=[0.5, 1.0, 2.0], q_max=1000.0)
    args = (rule, 0.5, DisturbanceModel.sinusoid(0.02), [100, 200, 300], [0.2, 0.3, 0.5], 10.0, 0.01)
    a = run_closed_loop(TaskDynamics(**kw), *args, output_every=1.0)
    b = run_closed_loop(NumericFamily(**kw), *args, output_every=1.0)
    np.testing.assert_allclose(a.q, b.q, rtol=1e-12)
    np.testing.assert_allclose(a.x, b.x, atol=1e-13)


def test_rate_schedule_signal(dyn, rule):
    sched = RevisionSchedule.constant(1.0).append(5.0, 0.1)
    rec = run_closed_loop(dyn, rule, sched, None, [100, 200, 300], [1 / 3] * 3, 10.0, 0.01)
    assert rec.lam[0] == 1.0 and rec.lam[-1] == 0.1 and np.all(np.diff(rec.lam) <= 0)


@pytest.mark.parametrize("lam", [0.1, 10.0])
def test_rate_rescaling_short(dyn, rule, lam):
    q0, x0 = [60.0, 100.0, 150.0], [0.6, 0.3, 0.1]
    base = run_closed_loop(dyn, rule, 1.0, None, q0, x0, 20.0, 1e-3, 1.0, freeze_game=True)
    scaled = run_closed_loop(dyn, rule, lam, None, q0, x0, 20.0 / lam, 1e-3 / lam, 1.0 / lam, freeze_game=True)
    assert np.abs(base.x - scaled.x).max() < 1e-9


def test_long_run_error_uses_tail(dyn, rule, eq):
    rec = run_closed_loop(dyn, rule, 1.0, None, eq.q, eq.x_star, 10.0, 0.01)
    rec.data[0, 1] += 100.0  # perturb the head only
    assert long_run_error(rec, eq.q, eq.x_star) < 1e-8


# -- xi bound -----------------------------------------------------------------

def _state(q, strategies, estimates):
    strategies = np.asarray(strategies, dtype=np.int64)
    n = len(q)
    bank = EstimateBank(np.asarray(estimates, dtype=float), np.zeros(len(strategies), dtype=bool))
    counts = np.bincount(strategies, minlength=n).astype(np.int64)
    return SimulationState(0.0, np.asarray(q, dtype=float), strategies, bank, counts,
                           RevisionSchedule.constant(1.0), np.zeros(0), np.zeros(0, dtype=np.int64))


def _xi_brute(state, rule):
    q, est, own = state.q, state.bank.estimates, state.strategy
    n, N = q.size, own.size
    xi = np.zeros(n)
    for k in range(N):
        j = own[k]
        for i in range(n):
            if i == j:
                continue
            d = rule.varrho * (max(0.0, est[k, i] - est[k, j]) - max(0.0, q[i] - q[j])) / N
            xi[i] += d
            xi[j] -= d
    return xi


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 31), N=st.integers(1, 40))
def test_measure_xi_matches_brute_force(rule, seed, N):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0, 400, 3)
    st_ = _state(q, rng.integers(0, 3, N), q + rng.normal(0, 30, (N, 3)))
    np.testing.assert_allclose(measure_xi(st_, rule), _xi_brute(st_, rule), atol=1e-14)


def test_default_bound_counterexample(rule):
    # one agent on task 1, equal payoffs, estimate error along (-1, 1, 1)
    eps = 10.0
    q = np.full(3, 50.0)
    st_ = _state(q, [0], [q + eps * np.array([-1.0, 1.0, 1.0]) / np.sqrt(3)])
    xi = measure_xi(st_, rule)
    e = class_mean_errors(st_)
    assert e[0] == pytest.approx(eps)
    assert abs(xi[0]) == pytest.approx(4 / np.sqrt(3) * rule.varrho * eps)
    assert np.any(np.abs(xi) > xi_bound(rule, st_.x, e))
    assert np.all(np.abs(xi) <= xi_bound(rule, st_.x, e, aggregate=True))


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2 ** 31), N=st.integers(1, 30), n=st.integers(2, 5))
def test_aggregate_bound_always_holds(seed, N, n):
    rng = np.random.default_rng(seed)
    rule = __import__("taskalloc").smith(1 / 400)
    q = rng.uniform(0, 300, n)
    st_ = _state(q, rng.integers(0, n, N), q + rng.normal(0, 50, (N, n)))
    xi = measure_xi(st_, rule)
    bound = xi_bound(rule, st_.x, class_mean_errors(st_), aggregate=True)
    assert np.all(np.abs(xi) <= bound * (1 + 1e-12) + 1e-15)


def test_xi_bound_rejects_negative(rule):
    with pytest.raises(ValueError):
        xi_bound(rule, [0.5, 0.5], [1.0, -1.0])

"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
"""

import sys
import time

import numpy as np
import pytest

from taskalloc.config import load_config
from taskalloc.estimation import EstimateBank, consensus_round, estimation_errors, generate_graph, select_leaders
from taskalloc.experiments import finite_config, rerun_manifest, run_experiment, seed_averaged, sweep
from taskalloc.finite_sim import FiniteConfig, run_finite
from taskalloc.game_core import reference_dynamics, solve_equilibrium
from taskalloc.meanfield import run_closed_loop
from taskalloc.passivity import verify_passivity
from taskalloc.protocols import smith

SEEDS = (1, 2, 3)


def report(criterion: int, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    assert ok, line


def scalar_bisection_oracle(R, alpha, beta, w, lo=1e-9, hi=1000.0):
    """Plain bisection on sum_i (w_i / (R tanh(alpha q / 2)))^(1/beta) = 1."""
    def h(q):
        return sum((wi / (R * np.tanh(0.5 * alpha * q))) ** (1.0 / beta) for wi in w) - 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if h(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_criterion_01_equilibrium():
    dyn = reference_dynamics()
    t0 = time.perf_counter()
    eq = solve_equilibrium(dyn)
    wall = time.perf_counter() - t0
    resid = np.abs(dyn.rates(eq.q, eq.x_star) - dyn.w).max()
    mass = abs(eq.x_star.sum() - 1.0)
    oracle = scalar_bisection_oracle(3.44, 0.036, 0.91, (0.5, 1.0, 2.0))
    gap = abs(eq.q_star - oracle)
    ok = resid < 1e-8 and mass < 1e-9 and np.ptp(eq.q) == 0 and gap < 1e-8 and wall < 1.0
    report(1, ok, f"q*={eq.q_star:.10f} rate residual {resid:.1e}, |sum x*-1| {mass:.1e}, "
                  f"oracle gap {gap:.1e}, {wall:.3f} s")


def test_criterion_02_passivity():
    t0 = time.perf_counter()
    rep = verify_passivity(reference_dynamics(), smith(1 / 400), samples=1000, rng=np.random.default_rng(2024))
    wall = time.perf_counter() - t0
    worst = ", ".join(f"{c.name} {c.worst:.1e}" for c in rep.checks.values())
    report(2, rep.all_passed and wall < 5.0,
           f"{len(rep.checks)} checks, failed={rep.failed()}; worst: {worst}; {wall:.2f} s")


def test_criterion_03_rate_rescaling():
    dyn, rule = reference_dynamics(), smith(1 / 400)
    q0, x0, T, h = np.array([100.0, 200.0, 300.0]), np.full(3, 1 / 3), 50.0, 1e-3
    t0 = time.perf_counter()
    devs = {}
    for lam in (0.1, 1.0, 10.0):
        # x_lam on [0, T] against x_1 on [0, lam T], both with step h
        fast = run_closed_loop(dyn, rule, lam, None, q0, x0, T, h, output_every=0.5, freeze_game=True)
        base = run_closed_loop(dyn, rule, 1.0, None, q0, x0, lam * T, h, output_every=0.5 * lam, freeze_game=True)
        devs[lam] = float(np.abs(fast.x - base.x).max())
    wall = time.perf_counter() - t0
    worst = max(devs.values())
    report(3, worst <= 1e-6 and wall < 10.0,
           "sup deviation " + ", ".join(f"lam={k}: {v:.1e}" for k, v in devs.items()) + f"; {wall:.2f} s")


def test_criterion_04_theorem1_trend(tmp_path):
    cfg = load_config("thm1_sweep")
    t0 = time.perf_counter()
    rows, _ = sweep(cfg, out_dir=tmp_path, plots=False)
    wall = time.perf_counter() - t0
    means = seed_averaged(rows, "lambda")
    errs = [m for _, m in means]
    ok = all(b <= 1.05 * a for a, b in zip(errs, errs[1:])) and wall < 60.0
    report(4, ok, "long-run error " + ", ".join(f"lam={v}: {m:.3f}" for v, m in means) + f"; {wall:.1f} s")


def test_criterion_05_meanfield_fidelity():
    dyn, rule = reference_dynamics(), smith(1 / 400)
    q0, x0 = (100.0, 200.0, 300.0), (1 / 3, 1 / 3, 1 / 3)
    t0 = time.perf_counter()
    mf = run_closed_loop(dyn, rule, 0.1, None, q0, x0, 200.0, 0.01, output_every=0.5)
    devs = []
    for seed in SEEDS:
        cfg = FiniteConfig(dyn, rule, n_agents=3000, leader_fraction=1.0, x0=x0, q0=q0, q_hat0=q0,
                           T=200.0, h=0.01, output_every=0.5, lam=0.1)
        rec = run_finite(cfg, seed).record
        devs.append(float(np.abs(rec.x - mf.x).max()))
    wall = time.perf_counter() - t0
    report(5, max(devs) <= 0.05 and wall < 60.0,
           "sup |x^N - x|_inf per seed " + ", ".join(f"{d:.4f}" for d in devs) + f"; {wall:.1f} s")


@pytest.fixture(scope="module")
def fig1_runs():
    cfg = load_config("fig1")
    t0 = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        sub = cfg.with_overrides(seed=seed)
        for lam in cfg.lambdas:
            runs[(lam, seed)] = run_finite(finite_config(sub, lam), seed).record
    return cfg, runs, time.perf_counter() - t0


def test_criterion_06_fig1(fig1_runs):
    cfg, runs, wall = fig1_runs
    q_star = solve_equilibrium(cfg.dyn).q
    late, peak = {}, {}
    for lam in cfg.lambdas:
        late_vals, peak_vals = [], []
        for seed in SEEDS:
            rec = runs[(lam, seed)]
            half = rec.t >= 0.5 * rec.t[-1]
            late_vals.append(np.linalg.norm(rec.q[half] - q_star, axis=1).mean())
            peak_vals.append(np.abs(rec.q).max())
        late[lam], peak[lam] = float(np.mean(late_vals)), float(np.mean(peak_vals))
    ok = late[1.0] > late[0.01] and peak[0.01] > peak[1.0] and wall < 120.0
    report(6, ok, f"late-half mean |q-q*|: lam=1 {late[1.0]:.2f} vs lam=0.01 {late[0.01]:.2f}; "
                  f"overshoot: lam=0.01 {peak[0.01]:.1f} vs lam=1 {peak[1.0]:.1f}; {wall:.1f} s")


def test_criterion_07_fig2():
    names = {"fig2a": (0.8, 0.2), "fig2b": (0.95, 1.0), "fig2c": (0.99, 1.4)}
    t0 = time.perf_counter()
    summary, crossing, monotone = {}, {}, True
    for name in names:
        cfg = load_config(name)
        q_star = solve_equilibrium(cfg.dyn).q
        curves = []
        for seed in SEEDS:
            rec = run_finite(finite_config(cfg.with_overrides(seed=seed), cfg.lambdas[0]), seed).record
            monotone &= bool(np.all(np.diff(rec.lam) <= 0))
            curves.append(np.linalg.norm(rec.q - q_star, axis=1))
        err = np.mean(curves, axis=0)
        threshold = 0.25 * err[0]
        below = np.flatnonzero(err < threshold)
        crossing[name] = float(rec.t[below[0]]) if below.size else np.inf
        summary[name] = (err[-1], threshold)
    wall = time.perf_counter() - t0
    finals_ok = all(e < thr for e, thr in summary.values())
    ok = monotone and finals_ok and crossing["fig2c"] > crossing["fig2b"] and wall < 180.0
    detail = "; ".join(f"{names[k]} final {e:.1f} (thr {thr:.1f}) cross t={crossing[k]:.0f}"
                       for k, (e, thr) in summary.items())
    report(7, ok, f"lambda non-increasing={monotone}; {detail}; {wall:.1f} s")


def test_criterion_08_consensus():
    t0 = time.perf_counter()
    g = generate_graph(3000, 0.1, 1)
    leaders = select_leaders(g, 0.1, 1)
    q = np.array([100.0, 200.0, 300.0])
    bank = EstimateBank.initial(leaders, 3)
    errs, inside = [estimation_errors(bank, q).max], True
    first = None
    for k in range(1, 201):
        bank = consensus_round(bank, g, q)
        errs.append(estimation_errors(bank, q).max)
        inside &= bool(np.all(bank.estimates >= 0) and np.all(bank.estimates <= 1000.0))
        if first is None and errs[-1] < 1e-6:
            first = k
    wall = time.perf_counter() - t0
    steps = np.diff(errs)
    strict = bool(np.all(steps < 0))
    stalled = (np.flatnonzero(steps >= 0) + 1).tolist()
    ok = strict and first is not None and inside and wall < 10.0
    report(8, ok, f"strictly decreasing={strict} (non-decreasing rounds: {stalled}), below 1e-6 at round "
                  f"{first}, final {errs[-1]:.2e}, in box={inside}; {wall:.1f} s")


def test_criterion_09_xi_bound(fig1_runs):
    _, runs, _ = fig1_runs
    checks = sum(r.meta["xi_checks"] for r in runs.values())
    viol = sum(r.meta["xi_violations"] for r in runs.values())
    wide = sum(r.meta["xi_violations_aggregate"] for r in runs.values())
    worst = max(r.meta["xi_worst_ratio"] for r in runs.values())
    report(9, viol == 0, f"{viol} of {checks} sampled instants exceed the bound (worst ratio {worst:.2f}); "
                         f"aggregate-outflow bound violations: {wide}")


def test_criterion_10_reproducibility(tmp_path):
    outputs = []
    for name, overrides in (("fig2a", dict(T=60.0, n_agents=500)), ("fig1", dict(T=30.0, lambdas=(1.0,))),
                            ("passivity", {})):
        cfg = load_config(name).with_overrides(plots=False, **overrides)
        out = run_experiment(cfg, tmp_path / "first" / name)
        assert out.exit_code == 0, out.message
        outputs.extend(p for p in out.files if p.name.endswith(".manifest.json"))
    cfg = load_config("thm1_sweep")
    rows, _ = sweep(cfg, grid=(0.3,), seeds=(4,), out_dir=tmp_path / "first" / "sweep", plots=False)
    outputs.append(tmp_path / "first" / "sweep" / f"{rows[0]['run_id']}.manifest.json")
    results = {}
    for i, man in enumerate(outputs):
        results.update(rerun_manifest(man, tmp_path / "second" / str(i)))
    same = sum(results.values())
    report(10, same == len(results) and len(results) >= 5,
           f"{same} of {len(results)} outputs bit-identical after rerun from manifest")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

"""Quick built-in checks run by ``--mode selftest``."""

from __future__ import annotations

import numpy as np

from .estimation import EstimateBank, consensus_round, generate_graph, select_leaders
from .game_core import reference_dynamics, solve_equilibrium
from .meanfield import run_closed_loop
from .passivity import verify_passivity
from .protocols import smith


def _equilibrium():
    dyn = reference_dynamics()
    eq = solve_equilibrium(dyn)
    resid = np.abs(dyn.rates(eq.q, eq.x_star) - dyn.w).max()
    return resid < 1e-8 and abs(eq.x_star.sum() - 1) < 1e-9, f"rate residual {resid:.2e}"


def _passivity(seed):
    rep = verify_passivity(reference_dynamics(), smith(1 / 400), samples=300, rng=np.random.default_rng(seed))
    return rep.all_passed, "failed: " + ", ".join(rep.failed()) if rep.failed() else "all checks pass"


def _rescaling():
    dyn, rule = reference_dynamics(), smith(1 / 400)
    q0, x0 = np.array([80.0, 100.0, 120.0]), np.array([0.6, 0.3, 0.1])
    base = run_closed_loop(dyn, rule, 1.0, None, q0, x0, 5.0, 1e-3, 0.5, freeze_game=True)
    fast = run_closed_loop(dyn, rule, 10.0, None, q0, x0, 0.5, 1e-4, 0.05, freeze_game=True)
    dev = np.abs(base.x - fast.x).max()
    return dev < 1e-6, f"sup deviation {dev:.2e}"


def _consensus(seed):
    g = generate_graph(300, 0.1, seed)
    leaders = select_leaders(g, 0.1, seed)
    q = np.array([90.0, 95.0, 100.0])
    bank = EstimateBank.initial(leaders, 3)
    for _ in range(200):
        bank = consensus_round(bank, g, q)
    err = np.abs(bank.estimates - q).max()
    return err < 1e-6, f"max error after 200 rounds {err:.2e}"


def run_selftest(seed: int = 0) -> tuple[bool, str]:
    checks = {
        "equilibrium": _equilibrium,
        "passivity": lambda: _passivity(seed),
        "rate_rescaling": _rescaling,
        "consensus": lambda: _consensus(seed),
    }
    lines, ok = [], True
    for name, fn in checks.items():
        passed, detail = fn()
        ok &= bool(passed)
        lines.append(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return ok, "\n".join(lines)

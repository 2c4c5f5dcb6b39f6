"""Storage functions of the game model and the Smith EDM, plus numerical checks.

``storage_L`` is the delta-antistorage function of the game,

    L(q, x) = sum_i  integral_{x_i*(q_i)}^{x_i} (F_i(q_i, s) - w_i) ds,

and ``storage_S`` is the delta-storage function of the Smith EDM,

    S(p, x) = (varrho / 2) * sum_{i,j} x_j [p_i - p_j]_+^2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import DomainError, UnsupportedRuleError
from .game_core import TaskDynamics, x_star_vector
from .protocols import LearningRule, RuleKind, mean_field_V

logger = logging.getLogger(__name__)

BOUNDARY_MARGIN = 1e-9
QUAD_TOL = 1e-13

# Zero-set tolerance pairs, (value threshold, counterpart threshold).
L_FORWARD = (1e-10, 1e-4)    # L < 1e-10  =>  |F - w|_inf < 1e-4
L_CONVERSE = (1e-6, 1e-10)   # |F - w|_inf < 1e-6  =>  L < 1e-10
S_FORWARD = (1e-10, 1e-5)    # S < 1e-10  =>  |V|_inf < 1e-5
S_CONVERSE = (1e-9, 1e-10)   # |V|_inf < 1e-9  =>  S < 1e-10
SIGN_SLACK = 1e-10


@dataclass(frozen=True)
class StorageEvaluation:
    L_value: float
    S_value: float
    gradq_L_dot_qdot: float
    gradx_S_dot_V: float


def clamp_interior(dyn: TaskDynamics, q, margin: float = BOUNDARY_MARGIN) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    lo, hi = margin, dyn.q_max - margin
    if np.any(q < lo) or np.any(q > hi):
        logger.debug("clamping game state %s into the open domain", q)
        q = np.clip(q, lo, hi)
    return q


def _check_interior(dyn: TaskDynamics, q: np.ndarray):
    if np.any(q <= 0.0) or np.any(q >= dyn.q_max):
        raise DomainError(f"storage_L is defined on (0, q_max)^n only; got q={q}")


def _x_star(dyn: TaskDynamics, q: np.ndarray) -> np.ndarray:
    if dyn.closed_form:
        return dyn.x_star_closed_form(q)
    return x_star_vector(dyn, q)


def _integrate(f, a: float, b: float) -> float:
    return float(quad(f, a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)[0])


def storage_L_terms(dyn: TaskDynamics, q, x, method: str | None = None) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_interior(dyn, q)
    xs = _x_star(dyn, q)
    if method is None:
        method = "closed" if dyn.closed_form else "quad"
    if method == "closed":
        if not dyn.closed_form:
            raise ValueError("closed-form storage needs the built-in rate family")
        b1 = dyn.beta + 1.0
        tq = np.tanh(0.5 * dyn.alpha * q)
        return dyn.R * tq * (x ** b1 - xs ** b1) / b1 - dyn.w * (x - xs)
    if method == "quad":
        return np.array([
            _integrate(lambda s, i=i: dyn.rate(i, q[i], max(s, 0.0)) - dyn.w[i], xs[i], x[i])
            for i in range(dyn.n)
        ])
    raise ValueError(f"unknown method {method!r}")


def storage_L(dyn: TaskDynamics, q, x, method: str | None = None) -> float:
    return float(storage_L_terms(dyn, q, x, method).sum())


def grad_x_L(dyn: TaskDynamics, q, x) -> np.ndarray:
    return dyn.rates(q, x) - dyn.w


def grad_q_L(dyn: TaskDynamics, q, x, fd_step: float = 1e-5) -> np.ndarray:
    """Gradient of ``L`` with respect to ``q``.

    For the built-in family this is ``R * T'(q) * (x^{b+1} - x*^{b+1}) / (b+1)``;
    the boundary term from ``x*(q)`` vanishes because the integrand is zero there.
    """
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_interior(dyn, q)
    if dyn.closed_form:
        xs = dyn.x_star_closed_form(q)
        b1 = dyn.beta + 1.0
        dT = 0.5 * dyn.alpha / np.cosh(0.5 * dyn.alpha * q) ** 2
        return dyn.R * dT * (x ** b1 - xs ** b1) / b1
    g = np.empty(dyn.n)
    for i in range(dyn.n):
        e = np.zeros(dyn.n)
        h = min(fd_step, 0.5 * q[i], 0.5 * (dyn.q_max - q[i]))
        e[i] = h
        g[i] = (storage_L(dyn, q + e, x) - storage_L(dyn, q - e, x)) / (2.0 * h)
    return g


def _require_smith(rule: LearningRule):
    if rule.kind is not RuleKind.SMITH:
        raise UnsupportedRuleError(f"storage_S is only available for the Smith rule, not {rule.kind}")


def storage_S(rule: LearningRule, p, x) -> float:
    _require_smith(rule)
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    gaps = np.maximum(p[:, None] - p[None, :], 0.0)  # gaps[i, j] = [p_i - p_j]_+
    return float(0.5 * rule.varrho * np.sum(gaps ** 2 * x[None, :]))


def grad_S(rule: LearningRule, p, x) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients ``(dS/dp, dS/dx)`` of the Smith storage function."""
    _require_smith(rule)
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    up = np.maximum(p[:, None] - p[None, :], 0.0)  # up[i, j] = [p_i - p_j]_+
    dp = rule.varrho * (up @ x - x * up.sum(axis=0))
    dx = 0.5 * rule.varrho * np.sum(up ** 2, axis=0)
    return dp, dx


def gradx_S_dot_V(rule: LearningRule, p, x) -> float:
    _, dx = grad_S(rule, p, x)
    return float(dx @ mean_field_V(rule, p, x))


def gradq_L_dot_qdot(dyn: TaskDynamics, q, x) -> float:
    return float(grad_q_L(dyn, q, x) @ (dyn.w - dyn.rates(q, x)))


def evaluate_storage(dyn: TaskDynamics, rule: LearningRule, q, x) -> StorageEvaluation:
    """All storage quantities at one state; ``q`` is clamped into the open domain."""
    qi = clamp_interior(dyn, q)
    return StorageEvaluation(
        L_value=storage_L(dyn, qi, x),
        S_value=storage_S(rule, q, x),
        gradq_L_dot_qdot=gradq_L_dot_qdot(dyn, qi, x),
        gradx_S_dot_V=gradx_S_dot_V(rule, q, x),
    )


# -- verification ----------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: int = 0
    total: int = 0
    worst: float = 0.0
    threshold: float = 0.0

    @property
    def ok(self) -> bool:
        return self.passed == self.total and self.total > 0

    def record_many(self, values, oks):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        oks = np.atleast_1d(np.asarray(oks, dtype=bool))
        self.total += int(oks.size)
        self.passed += int(oks.sum())
        finite = values[np.isfinite(values)]
        if finite.size:
            self.worst = max(self.worst, float(finite.max()))


@dataclass
class PassivityReport:
    samples: int
    checks: dict[str, CheckResult] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(c.ok for c in self.checks.values())

    def failed(self) -> list[str]:
        return [name for name, c in self.checks.items() if not c.ok]

    def rows(self) -> list[dict]:
        return [
            {"check": c.name, "passed": c.passed, "total": c.total,
             "worst": c.worst, "threshold": c.threshold, "ok": int(c.ok)}
            for c in self.checks.values()
        ]

    def to_text(self) -> str:
        lines = [f"{'check':<28} {'passed':>8} {'total':>8} {'worst':>12} {'threshold':>11}  status"]
        for c in self.checks.values():
            lines.append(
                f"{c.name:<28} {c.passed:>8d} {c.total:>8d} {c.worst:>12.3e} {c.threshold:>11.1e}  "
                f"{'PASS' if c.ok else 'FAIL'}"
            )
        return "\n".join(lines)


def _random_simplex(rng: np.random.Generator, m: int, n: int, floor: float = 1e-6) -> np.ndarray:
    """``m`` uniform points of the simplex interior, every share above ``floor``."""
    out = np.empty((0, n))
    while out.shape[0] < m:
        x = rng.dirichlet(np.ones(n), size=2 * (m - out.shape[0]) + 8)
        out = np.vstack([out, x[x.min(axis=1) > floor]])
    return out[:m]


def _L_rows(dyn: TaskDynamics, Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    if dyn.closed_form:
        return storage_L_terms(dyn, Q, X).sum(axis=1)
    return np.array([storage_L(dyn, q, x) for q, x in zip(Q, X)])


def _gradq_L_rows(dyn: TaskDynamics, Q: np.ndarray, X: np.ndarray) -> np.ndarray:
    if dyn.closed_form:
        return grad_q_L(dyn, Q, X)
    return np.array([grad_q_L(dyn, q, x) for q, x in zip(Q, X)])


def _smith_rows(rule: LearningRule, P: np.ndarray, X: np.ndarray):
    """Batched ``(S, dS/dp, dS/dx, V)`` for payoff rows ``P`` and states ``X``."""
    _require_smith(rule)
    up = np.maximum(P[:, :, None] - P[:, None, :], 0.0)  # up[m, i, j] = [p_i - p_j]_+
    S = 0.5 * rule.varrho * np.einsum("mij,mj->m", up ** 2, X)
    dp = rule.varrho * (np.einsum("mij,mj->mi", up, X) - X * up.sum(axis=1))
    dx = 0.5 * rule.varrho * (up ** 2).sum(axis=1)
    G = rule.switch_matrices(P)  # G[m, j, i] = rho_ji
    V = np.einsum("mj,mji->mi", X, G) - X * G.sum(axis=2)
    return S, dp, dx, V


def _zero_set_L_points(dyn: TaskDynamics, rng: np.random.Generator, m: int, scales: np.ndarray):
    """States on, or ``scale`` away from, the zero set of ``L`` (built-in family only).

    Picks ``x`` on the simplex and solves ``F_i(q_i, x_i) = w_i`` for ``q``.
    """
    x_min = (dyn.w / dyn.R) ** (1.0 / dyn.beta)  # below this share no finite q balances the inflow
    slack = 1.0 - x_min.sum()
    if slack <= 0:
        return np.empty((0, dyn.n)), np.empty((0, dyn.n))
    X = x_min + slack * _random_simplex(rng, 4 * m, dyn.n)
    Q = 2.0 * np.arctanh(dyn.w / (dyn.R * X ** dyn.beta)) / dyn.alpha
    keep = np.all(Q < dyn.q_max - BOUNDARY_MARGIN, axis=1)
    X, Q = X[keep][:m], Q[keep][:m]
    scales = scales[:X.shape[0]]
    dx = rng.normal(size=X.shape)
    dx -= dx.mean(axis=1, keepdims=True)
    dx /= np.abs(dx).max(axis=1, keepdims=True)
    Xp = np.clip(X + scales[:, None] * dx, 1e-300, None)
    return Q, Xp / Xp.sum(axis=1, keepdims=True)


def _zero_set_S_points(n: int, q_max: float, rng: np.random.Generator, m: int, scales: np.ndarray):
    """Nash states (all mass on top-payoff strategies), optionally perturbed in ``p``."""
    support = rng.random((m, n)) < 0.5
    empty = ~support.any(axis=1)
    support[empty, rng.integers(n, size=int(empty.sum()))] = True
    top = rng.uniform(0.3 * q_max, 0.9 * q_max, size=(m, 1))
    P = np.where(support, top, rng.uniform(0.0, 0.3 * q_max, size=(m, n)))
    X = np.where(support, rng.random((m, n)) + 0.1, 0.0)
    X /= X.sum(axis=1, keepdims=True)
    P = P + scales[:, None] * rng.normal(size=(m, n)) * support
    return P, X


def _zero_set_L_check(dyn: TaskDynamics, Q, X):
    L = _L_rows(dyn, Q, X)
    resid = np.max(np.abs(dyn.rates(Q, X) - dyn.w), axis=1)
    fwd = L < L_FORWARD[0]
    conv = resid < L_CONVERSE[0]
    ok = (~fwd | (resid < L_FORWARD[1])) & (~conv | (L < L_CONVERSE[1]))
    worst = np.maximum(np.where(fwd, resid, 0.0), np.where(conv, L, 0.0))
    return worst, ok


def _zero_set_S_check(rule: LearningRule, P, X):
    S, _, _, V = _smith_rows(rule, P, X)
    vnorm = np.max(np.abs(V), axis=1)
    fwd = S < S_FORWARD[0]
    conv = vnorm < S_CONVERSE[0]
    ok = (~fwd | (vnorm < S_FORWARD[1])) & (~conv | (S < S_CONVERSE[1]))
    worst = np.maximum(np.where(fwd, vnorm, 0.0), np.where(conv, S, 0.0))
    return worst, ok


def verify_passivity(dyn: TaskDynamics, rule: LearningRule, samples: int = 1000,
                     rng: np.random.Generator | None = None, fd_step: float = 1e-6) -> PassivityReport:
    """Sample interior states and check the storage-function conditions.

    Checks, per sample: ``dL/dx = F - w`` against central differences;
    the signs of ``grad_q L . (w - F)`` and ``grad_x S . V``; ``dS/dp = V``;
    nonnegativity of both storages; and both zero-set equivalences, using the
    tolerance pairs defined at module level.  Zero sets are probed at the
    random samples and at constructed points on or near each zero set.
    Failures are reported, never raised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    n, m = dyn.n, samples
    lo = BOUNDARY_MARGIN
    Q = rng.uniform(lo, dyn.q_max - lo, size=(m, n))
    X = _random_simplex(rng, m, n)
    P = Q
    report = PassivityReport(samples)
    checks = report.checks

    def add(name, threshold, values, oks):
        c = checks.setdefault(name, CheckResult(name, threshold=threshold))
        c.record_many(values, oks)

    analytic = dyn.rates(Q, X) - dyn.w
    fd = np.empty_like(Q)
    for i in range(n):
        h = np.minimum(fd_step, 0.5 * X[:, i])
        E = np.zeros_like(X)
        E[:, i] = h
        fd[:, i] = (_L_rows(dyn, Q, X + E) - _L_rows(dyn, Q, X - E)) / (2.0 * h)
    rel = np.max(np.abs(fd - analytic) / np.maximum(1.0, np.abs(analytic)), axis=1)
    add("gradx_L_identity", 1e-6, rel, rel <= 1e-6)

    qdot_term = np.einsum("mi,mi->m", _gradq_L_rows(dyn, Q, X), -analytic)
    add("gradq_L_sign", SIGN_SLACK, qdot_term, qdot_term <= SIGN_SLACK)

    S, dp, dx, V = _smith_rows(rule, P, X)
    diff = np.max(np.abs(dp - V), axis=1)
    add("gradp_S_identity", 1e-12, diff, diff <= 1e-12)
    xdot_term = np.einsum("mi,mi->m", dx, V)
    add("gradx_S_sign", SIGN_SLACK, xdot_term, xdot_term <= SIGN_SLACK)

    L = _L_rows(dyn, Q, X)
    add("L_nonnegative", 1e-12, -L, L >= -1e-12)
    add("S_nonnegative", 1e-15, -S, S >= -1e-15)

    add("L_zero_set", L_FORWARD[1], *_zero_set_L_check(dyn, Q, X))
    add("S_zero_set", S_FORWARD[1], *_zero_set_S_check(rule, P, X))
    scales = np.concatenate([np.zeros(m), 10.0 ** rng.uniform(-12, -2, size=m)])
    if dyn.closed_form:
        add("L_zero_set", L_FORWARD[1], *_zero_set_L_check(dyn, *_zero_set_L_points(dyn, rng, 2 * m, scales)))
    add("S_zero_set", S_FORWARD[1], *_zero_set_S_check(rule, *_zero_set_S_points(n, dyn.q_max, rng, 2 * m, scales)))
    return report


def storage_rows(dyn: TaskDynamics, rule: LearningRule, Q, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(L, S, grad_x S . V)`` for each row of a trajectory.

    ``Q`` is clamped into the open domain of ``L`` first, since simulated
    trajectories may touch ``0`` or ``q_max``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = _L_rows(dyn, clamp_interior(dyn, Q), X)
    S, _, dx, V = _smith_rows(rule, Q, X)
    return L, S, np.einsum("mi,mi->m", dx, V)

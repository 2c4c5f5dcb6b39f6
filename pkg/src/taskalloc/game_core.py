"""Task-allocation game dynamics and equilibrium computation.

The game state ``q`` holds the remaining jobs of each task.  It decreases at
the completion rate ``F_i(q_i, x_i)`` and increases at the inflow ``w_i``,
saturating at ``q_max``.  Only the trash-collection family

    F_i(q_i, x_i) = R_i * tanh(alpha_i * q_i / 2) * x_i ** beta_i

ships; ``(e^{aq} - 1) / (e^{aq} + 1)`` is written as ``tanh(aq/2)`` for
numerical stability.  Other families can subclass :class:`TaskDynamics` and
override :meth:`TaskDynamics.rates`, :meth:`TaskDynamics.rates_dq` and
:meth:`TaskDynamics.x_star_closed_form`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import DomainError, InfeasibleError, NoRootError, StepSizeError

X_CAP = 1e6
ROOT_TOL = 1e-12
X_TOL = 1e-15

PopulationSignal = Union[np.ndarray, Callable[[float], np.ndarray]]


def _as_vector(values, n: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must have length {n}, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TaskDynamics:
    """Parameters of the rate family plus inflow and cap.

    Scalars for ``R``, ``alpha``, ``beta`` or ``w`` are broadcast to all
    ``n`` tasks.
    """

    n: int
    R: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    w: np.ndarray
    q_max: float
    x_cap: float = X_CAP

    #: Whether the closed-form storage and ``x*`` expressions apply.
    closed_form = True

    def __post_init__(self):
        n = int(self.n)
        if n < 2:
            raise ValueError("need at least two tasks")
        object.__setattr__(self, "n", n)
        for name in ("R", "alpha", "beta", "w"):
            arr = _as_vector(getattr(self, name), n, name)
            if not np.all(arr > 0):
                raise ValueError(f"{name} must be strictly positive")
            object.__setattr__(self, name, arr)
        if not self.q_max > 0:
            raise ValueError("q_max must be positive")
        object.__setattr__(self, "q_max", float(self.q_max))

    def rate(self, i: int, q_i: float, x_i: float) -> float:
        return float(self.R[i] * math.tanh(0.5 * self.alpha[i] * q_i) * x_i ** self.beta[i])

    # -- vectorised rate family -------------------------------------------
    def rates(self, q, x) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        x = np.asarray(x, dtype=float)
        return self.R * np.tanh(0.5 * self.alpha * q) * np.power(np.maximum(x, 0.0), self.beta)

    def rates_dq(self, q, x) -> np.ndarray:
        """Partial derivative of the rates with respect to ``q``."""
        q = np.asarray(q, dtype=float)
        x = np.asarray(x, dtype=float)
        sech2 = 1.0 / np.cosh(0.5 * self.alpha * q) ** 2
        return self.R * 0.5 * self.alpha * sech2 * np.power(np.maximum(x, 0.0), self.beta)

    def x_star_closed_form(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return (self.w / (self.R * np.tanh(0.5 * self.alpha * q))) ** (1.0 / self.beta)

    def check_zero_at_origin(self, xs=(0.0, 0.5, 1.0, 2.0)) -> bool:
        """True when every rate vanishes at ``q = 0`` for the sampled ``x``."""
        return all(np.all(self.rates(np.zeros(self.n), np.full(self.n, x)) == 0.0) for x in xs)


@dataclass(frozen=True)
class Equilibrium:
    q_star: float
    x_star: np.ndarray
    n: int = field(default=0)

    def __post_init__(self):
        x = np.asarray(self.x_star, dtype=float).copy()
        x.setflags(write=False)
        object.__setattr__(self, "x_star", x)
        object.__setattr__(self, "n", x.size)

    @property
    def q(self) -> np.ndarray:
        return np.full(self.n, self.q_star)


def rate_F(dyn: TaskDynamics, i: int, q_i: float, x_i: float) -> float:
    """Completion rate of task ``i``."""
    if q_i < 0 or x_i < 0:
        raise DomainError(f"rate_F needs q_i >= 0 and x_i >= 0, got ({q_i}, {x_i})")
    return dyn.rate(i, q_i, x_i)


def game_rhs(dyn: TaskDynamics, q, x) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    dq = dyn.w - dyn.rates(q, x)
    at_cap = q >= dyn.q_max
    if np.any(at_cap):
        dq = np.where(at_cap, np.minimum(dq, 0.0), dq)
    return dq


def _population_at(x_of_t: PopulationSignal, t: float) -> np.ndarray:
    if callable(x_of_t):
        return np.asarray(x_of_t(t), dtype=float)
    return x_of_t


def rk4_step(dyn: TaskDynamics, q: np.ndarray, x_of_t: PopulationSignal, t: float, h: float) -> np.ndarray:
    x0 = _population_at(x_of_t, t)
    xm = _population_at(x_of_t, t + 0.5 * h)
    x1 = _population_at(x_of_t, t + h)
    k1 = game_rhs(dyn, q, x0)
    k2 = game_rhs(dyn, q + 0.5 * h * k1, xm)
    k3 = game_rhs(dyn, q + 0.5 * h * k2, xm)
    k4 = game_rhs(dyn, q + h * k3, x1)
    q_new = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return np.clip(q_new, 0.0, dyn.q_max)


def integrate_game(dyn: TaskDynamics, q0, x_of_t: PopulationSignal, t0: float, t1: float, h: float) -> np.ndarray:
    """Advance the game state from ``t0`` to ``t1`` with fixed-step RK4.

    ``x_of_t`` is either a constant population vector or a callable of time.
    The final step is shortened so the run lands exactly on ``t1``.
    """
    if not h > 0:
        raise StepSizeError(f"step size must be positive, got {h}")
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    q = np.clip(np.asarray(q0, dtype=float).copy(), 0.0, dyn.q_max)
    if not callable(x_of_t):
        x_of_t = np.asarray(x_of_t, dtype=float)
    n_steps = math.ceil((t1 - t0) / h - 1e-12)
    t = t0
    for k in range(n_steps):
        step = min(h, t1 - t)
        if step <= 0:
            break
        q = rk4_step(dyn, q, x_of_t, t, step)
        t = t0 + (k + 1) * h if k + 1 < n_steps else t1
    return q


def x_star_of_q(dyn: TaskDynamics, i: int, q_i: float, tol: float = X_TOL) -> float:
    """Population share at which task ``i`` is completed exactly at its inflow rate."""
    if not q_i > 0:
        raise DomainError(f"x_star_of_q needs q_i > 0, got {q_i}")
    w = dyn.w[i]

    def resid(x):
        return rate_F(dyn, i, q_i, x) - w

    lo, hi = 0.0, 1.0
    while resid(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > dyn.x_cap:
            raise NoRootError(f"no root below x_cap={dyn.x_cap} for task {i} at q={q_i}")
    for _ in range(400):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if resid(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def x_star_vector(dyn: TaskDynamics, q) -> np.ndarray:
    return np.array([x_star_of_q(dyn, i, float(qi)) for i, qi in enumerate(q)])


def solve_equilibrium(dyn: TaskDynamics, tol: float = ROOT_TOL, eps: float = 1e-9) -> Equilibrium:
    """Common game level ``q*`` and the matching population state ``x*``.

    Bisects ``h(q) = sum_i x_i*(q) - 1``, which is strictly decreasing.
    """

    def excess(q):
        try:
            return sum(x_star_of_q(dyn, i, q) for i in range(dyn.n)) - 1.0
        except NoRootError:
            return math.inf

    lo, hi = eps, dyn.q_max - eps
    h_lo, h_hi = excess(lo), excess(hi)
    if not (h_lo > 0.0 > h_hi):
        raise InfeasibleError(
            f"sum of x*(q) does not cross 1 on ({lo}, {hi}): h(lo)={h_lo}, h(hi)={h_hi}"
        )
    for _ in range(400):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    q_star = 0.5 * (lo + hi)
    return Equilibrium(q_star=q_star, x_star=x_star_vector(dyn, np.full(dyn.n, q_star)))


def reference_dynamics(q_max: float = 1000.0) -> TaskDynamics:
    """Three-task setup used throughout the reference experiments."""
    return TaskDynamics(n=3, R=3.44, alpha=0.036, beta=0.91, w=[0.5, 1.0, 2.0], q_max=q_max)

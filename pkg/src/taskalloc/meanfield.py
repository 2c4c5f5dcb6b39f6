"""Deterministic mean-field engine: the EDM coupled with the game.

The closed loop integrated here is

    q' = w - F(q, x)                       (saturated at q_max)
    x' = lambda(t) * (V(q, x) + xi(t))

with payoffs identified with the game state.  ``xi`` is a synthetic,
mass-conserving disturbance standing in for the effect of payoff
estimation errors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DisturbanceError, StepSizeError
from .game_core import TaskDynamics, game_rhs
from .passivity import storage_rows
from .protocols import LearningRule, mean_field_V
from .records import TrajectoryRecord
from .schedule import RevisionSchedule

MASS_TOL = 1e-12


class DisturbanceKind(enum.Enum):
    NONE = "none"
    BOUNDED_SINUSOID = "bounded_sinusoid"
    DECAYING = "decaying"
    TABLE = "table"


_KIND_CODES = {
    DisturbanceKind.NONE: 0,
    DisturbanceKind.BOUNDED_SINUSOID: 1,
    DisturbanceKind.DECAYING: 2,
    DisturbanceKind.TABLE: 3,
}


@dataclass(frozen=True, eq=False)
class DisturbanceModel:
    """Synthetic disturbance ``xi(t)`` with ``sum(xi) = 0`` and ``|xi|_inf <= amplitude``.

    The sinusoid kinds put task ``i`` at phase ``2 pi i / n``, so components
    cancel exactly.  ``TABLE`` replays a piecewise-constant trace, e.g. one
    measured by the finite-population engine; with ``mass_conserving`` set
    its rows are projected onto the zero-sum plane and clipped to the
    amplitude (an amplitude of 0 means unclipped).
    """

    kind: DisturbanceKind = DisturbanceKind.NONE
    amplitude: float = 0.0
    omega: float = 0.5
    decay_time: float = 50.0
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    mass_conserving: bool = True

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", DisturbanceKind(self.kind))
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if self.kind is DisturbanceKind.TABLE:
            if values.ndim != 2 or values.shape[0] != times.size or times.size == 0:
                raise ValueError("table disturbance needs one value row per time")
            if self.mass_conserving:
                values = values - values.mean(axis=1, keepdims=True)
                if self.amplitude > 0:
                    scale = np.maximum(np.abs(values).max(axis=1, keepdims=True) / self.amplitude, 1.0)
                    values = values / scale
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def none(cls) -> "DisturbanceModel":
        return cls()

    @classmethod
    def sinusoid(cls, amplitude: float, omega: float = 0.5) -> "DisturbanceModel":
        return cls(DisturbanceKind.BOUNDED_SINUSOID, amplitude, omega)

    @classmethod
    def recorded(cls, times, values, amplitude: float = 0.0) -> "DisturbanceModel":
        return cls(DisturbanceKind.TABLE, amplitude, times=times, values=values)

    def __call__(self, t: float, n: int) -> np.ndarray:
        return _disturbance(_KIND_CODES[self.kind], self.amplitude, self.omega, self.decay_time,
                            self.times, self._table(n), t, n)

    def _table(self, n: int) -> np.ndarray:
        if self.kind is DisturbanceKind.TABLE:
            if self.values.shape[1] != n:
                raise ValueError("table disturbance width does not match the task count")
            return self.values
        return np.zeros((1, n))

    def label(self) -> str:
        if self.kind is DisturbanceKind.NONE:
            return "none"
        return f"synthetic:{self.kind.value}(amplitude={self.amplitude!r}, omega={self.omega!r})"


@njit(cache=True)
def _disturbance(code, amp, omega, decay, times, values, t, n):
    out = np.zeros(n)
    if code == 1 or code == 2:
        scale = amp
        if code == 2:
            scale *= math.exp(-t / decay)
        for i in range(n):
            out[i] = scale * math.sin(omega * t + 2.0 * math.pi * i / n)
    elif code == 3:
        k = np.searchsorted(times, t, side="right") - 1
        if k < 0:
            k = 0
        for i in range(n):
            out[i] = values[k, i]
    return out


def edm_rhs(rule: LearningRule, lam: float, p, x, xi=None) -> np.ndarray:
    """Right-hand side ``lambda * (V(p, x) + xi)`` of the perturbed EDM."""
    V = mean_field_V(rule, p, x)
    if xi is None:
        return lam * V
    xi = np.asarray(xi, dtype=float)
    if abs(xi.sum()) > MASS_TOL:
        raise DisturbanceError(f"disturbance must sum to zero, got {xi.sum():.3e}")
    return lam * (V + xi)


def xi_bound(rule: LearningRule, x, eps_by_class, aggregate: bool = False) -> np.ndarray:
    """Per-component bound on the estimation-induced disturbance.

    The default is ``c * sum_j x_j * mean_eps_j`` on every component.  With
    ``aggregate`` the outflow term is counted too, giving
    ``c * (sum_j x_j mean_eps_j + (n - 1) x_i mean_eps_i)``, which holds for
    any error pattern.
    """
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps_by_class, dtype=float)
    if np.any(eps < 0):
        raise ValueError("estimation errors must be nonnegative")
    base = np.full(x.size, float(x @ eps))
    if aggregate:
        base = base + (x.size - 1) * x * eps
    return rule.lipschitz_c * base


# -- compiled closed loop --------------------------------------------------

@njit(cache=True)
def _loop_rhs(q, x, lam, xi, R, alpha, beta, w, q_max, varrho, freeze, dq, dx):
    n = q.size
    for i in range(n):
        if freeze:
            dq[i] = 0.0
        else:
            xi_pos = x[i] if x[i] > 0.0 else 0.0
            d = w[i] - R[i] * math.tanh(0.5 * alpha[i] * q[i]) * xi_pos ** beta[i]
            if q[i] >= q_max and d > 0.0:
                d = 0.0
            dq[i] = d
    for i in range(n):
        inflow = 0.0
        outrate = 0.0
        for j in range(n):
            if j != i:
                gap = q[i] - q[j]
                if gap > 0.0:
                    inflow += x[j] * gap
                else:
                    outrate -= gap
        dx[i] = lam * (varrho * (inflow - x[i] * outrate) + xi[i])


@njit(cache=True)
def _rate_at(times, rates, t):
    k = np.searchsorted(times, t, side="right") - 1
    if k < 0:
        k = 0
    return rates[k]


@njit(cache=True)
def _closed_loop_kernel(q0, x0, R, alpha, beta, w, q_max, varrho, lam_times, lam_rates,
                        dcode, damp, domega, ddecay, dtimes, dvalues, t_out, h, freeze):
    n = q0.size
    m = t_out.size
    Q = np.empty((m, n))
    X = np.empty((m, n))
    q = q0.copy()
    x = x0.copy()
    Q[0] = q
    X[0] = x
    k1q = np.empty(n); k1x = np.empty(n)
    k2q = np.empty(n); k2x = np.empty(n)
    k3q = np.empty(n); k3x = np.empty(n)
    k4q = np.empty(n); k4x = np.empty(n)
    max_drift = 0.0
    min_x = 0.0
    for r in range(1, m):
        ta = t_out[r - 1]
        span = t_out[r] - ta
        nsub = int(math.ceil(span / h - 1e-9))
        if nsub < 1:
            nsub = 1
        step = span / nsub
        for s in range(nsub):
            t = ta + s * step
            tm = t + 0.5 * step
            te = t + step
            lam0 = _rate_at(lam_times, lam_rates, t)
            lamm = _rate_at(lam_times, lam_rates, tm)
            lame = _rate_at(lam_times, lam_rates, te)
            xi0 = _disturbance(dcode, damp, domega, ddecay, dtimes, dvalues, t, n)
            xim = _disturbance(dcode, damp, domega, ddecay, dtimes, dvalues, tm, n)
            xie = _disturbance(dcode, damp, domega, ddecay, dtimes, dvalues, te, n)
            _loop_rhs(q, x, lam0, xi0, R, alpha, beta, w, q_max, varrho, freeze, k1q, k1x)
            _loop_rhs(q + 0.5 * step * k1q, x + 0.5 * step * k1x, lamm, xim,
                      R, alpha, beta, w, q_max, varrho, freeze, k2q, k2x)
            _loop_rhs(q + 0.5 * step * k2q, x + 0.5 * step * k2x, lamm, xim,
                      R, alpha, beta, w, q_max, varrho, freeze, k3q, k3x)
            _loop_rhs(q + step * k3q, x + step * k3x, lame, xie,
                      R, alpha, beta, w, q_max, varrho, freeze, k4q, k4x)
            total = 0.0
            for i in range(n):
                q[i] += step / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i])
                if q[i] < 0.0:
                    q[i] = 0.0
                elif q[i] > q_max:
                    q[i] = q_max
                x[i] += step / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i])
                total += x[i]
            drift = abs(total - 1.0)
            if drift > max_drift:
                max_drift = drift
            total = 0.0
            for i in range(n):
                if x[i] < min_x:
                    min_x = x[i]
                if x[i] < 0.0:
                    x[i] = 0.0
                total += x[i]
            for i in range(n):
                x[i] /= total
        Q[r] = q
        X[r] = x
    return Q, X, max_drift, min_x


def output_times(T: float, every: float) -> np.ndarray:
    """Row times ``0, every, 2 every, ...`` with ``T`` always included last."""
    if T <= 0:
        return np.zeros(1)
    k = int(math.floor(T / every + 1e-9))
    t = every * np.arange(k + 1)
    if T - t[-1] > 1e-9 * max(1.0, T):
        t = np.append(t, T)
    else:
        t[-1] = T
    return t


def _python_loop(dyn, rule, lam_sched, disturbance, q0, x0, t_out, h, freeze):
    n = dyn.n
    q, x = q0.copy(), x0.copy()
    Q, X = [q.copy()], [x.copy()]
    max_drift, min_x = 0.0, 0.0

    def f(t, q, x):
        dq = np.zeros(n) if freeze else game_rhs(dyn, q, x)
        return dq, lam_sched.rate_at(t) * (mean_field_V(rule, q, x) + disturbance(t, n))

    for a, b in zip(t_out[:-1], t_out[1:]):
        nsub = max(1, math.ceil((b - a) / h - 1e-9))
        step = (b - a) / nsub
        for s in range(nsub):
            t = a + s * step
            k1 = f(t, q, x)
            k2 = f(t + step / 2, q + step / 2 * k1[0], x + step / 2 * k1[1])
            k3 = f(t + step / 2, q + step / 2 * k2[0], x + step / 2 * k2[1])
            k4 = f(t + step, q + step * k3[0], x + step * k3[1])
            q = np.clip(q + step / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]), 0.0, dyn.q_max)
            x = x + step / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            max_drift = max(max_drift, abs(x.sum() - 1.0))
            min_x = min(min_x, x.min())
            x = np.maximum(x, 0.0)
            x /= x.sum()
        Q.append(q.copy())
        X.append(x.copy())
    return np.array(Q), np.array(X), max_drift, min_x


def run_closed_loop(dyn: TaskDynamics, rule: LearningRule, lambda_signal, disturbance: DisturbanceModel | None,
                    q0, x0, T: float, h: float, output_every: float = 0.5,
                    freeze_game: bool = False) -> TrajectoryRecord:
    """Co-integrate game and EDM with fixed-step RK4.

    After every step ``q`` is clamped to ``[0, q_max]`` and ``x`` is clipped
    at zero and rescaled onto the simplex.  With ``freeze_game`` the game
    state is held at ``q0``, which turns the payoff into a constant signal.
    ``lambda_signal`` is a positive number or a :class:`RevisionSchedule`.
    """
    if not h > 0:
        raise StepSizeError(f"step size must be positive, got {h}")
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    if not output_every > 0:
        raise ValueError("output cadence must be positive")
    sched = lambda_signal if isinstance(lambda_signal, RevisionSchedule) else RevisionSchedule.constant(float(lambda_signal))
    disturbance = disturbance or DisturbanceModel.none()
    n = dyn.n
    q0 = np.clip(np.asarray(q0, dtype=float), 0.0, dyn.q_max)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,) or q0.shape != (n,):
        raise ValueError("initial states must have one entry per task")
    if np.any(x0 < -1e-12) or abs(x0.sum() - 1.0) > 1e-9:
        raise ValueError("x0 must lie on the simplex")
    x0 = np.maximum(x0, 0.0)
    x0 = x0 / x0.sum()
    t_out = output_times(T, output_every)
    if dyn.closed_form:
        lam_t, lam_r = sched.as_arrays()
        Q, X, drift, min_x = _closed_loop_kernel(
            q0, x0, dyn.R, dyn.alpha, dyn.beta, dyn.w, dyn.q_max, rule.varrho, lam_t, lam_r,
            _KIND_CODES[disturbance.kind], disturbance.amplitude, disturbance.omega,
            disturbance.decay_time, disturbance.times, disturbance._table(n), t_out, float(h),
            bool(freeze_game))
    else:
        Q, X, drift, min_x = _python_loop(dyn, rule, sched, disturbance, q0, x0, t_out, h, freeze_game)
    L, S, SV = storage_rows(dyn, rule, Q, X)
    lam_col = np.array([sched.rate_at(t) for t in t_out])
    zeros = np.zeros(t_out.size)
    data = np.column_stack([t_out, Q, X, lam_col, L, S, SV, zeros, zeros, np.abs(Q).max(axis=1)])
    meta = {
        "engine": "meanfield",
        "disturbance": disturbance.label(),
        "max_simplex_drift": float(drift),
        "min_x_before_clip": float(min_x),
    }
    return TrajectoryRecord(n, data, meta)


def long_run_error(record: TrajectoryRecord, q_star, x_star, tail: float = 0.2) -> float:
    """Max of ``|q - q*|_2 + |x - x*|_2`` over the final ``tail`` fraction of the horizon."""
    t = record.t
    mask = t >= t[-1] - tail * (t[-1] - t[0])
    err = (np.linalg.norm(record.q[mask] - np.asarray(q_star), axis=1)
           + np.linalg.norm(record.x[mask] - np.asarray(x_star), axis=1))
    return float(err.max())

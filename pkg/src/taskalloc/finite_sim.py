"""Event-driven simulation of a finite population with Poisson alarm clocks.

Each agent owns an exponential clock with the shared, piecewise-constant
rate ``lambda(t)``.  Pending ring times sit in a binary min-heap.  Between
consecutive rings the game state is advanced with RK4 while the empirical
population state ``counts / N`` is held fixed.  At integer times the agents
run one consensus round and the rate controller, if any, is consulted.

Random draws come from a single ``numpy`` generator in this order:

1. a permutation assigning initial strategies,
2. one exponential per agent for the initial ring times,
3. per ring, in event order: the agent's next clock draw, then its
   revision draw,
4. on a rate change, one fresh clock draw per agent, in agent order.

Clock draws are taken by inversion, ``E = -log(1 - U)``, from the same
uniform stream that supplies the revision draws.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import rate_controller as rc
from .estimation import CommGraph, EstimateBank, consensus_round, generate_graph, select_leaders
from .game_core import TaskDynamics, solve_equilibrium
from .meanfield import output_times, xi_bound
from .passivity import storage_rows
from .protocols import LearningRule
from .records import TrajectoryRecord
from .schedule import RevisionSchedule

logger = logging.getLogger(__name__)

BUFFER_SIZE = 1 << 18


@dataclass(frozen=True)
class AgentRecord:
    id: int
    strategy: int
    next_ring: float
    leader: bool


@dataclass(frozen=True)
class FiniteConfig:
    dyn: TaskDynamics
    rule: LearningRule
    n_agents: int = 3000
    p_edge: float = 0.1
    leader_fraction: float = 0.1
    x0: tuple = (1 / 3, 1 / 3, 1 / 3)
    q0: tuple = (100.0, 200.0, 300.0)
    q_hat0: tuple = (0.0, 0.0, 0.0)
    T: float = 1000.0
    h: float = 0.01
    output_every: float = 0.5
    lam: float = 1.0
    controller: rc.ControllerConfig | None = None
    trigger_source: str = "oracle"
    self_inclusive: bool = False
    debug_checks: bool = False
    comm_period: float = 1.0

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.trigger_source not in ("oracle", "leader"):
            raise ValueError("trigger_source must be 'oracle' or 'leader'")
        if not self.h > 0 or not self.output_every > 0 or self.T < 0:
            raise ValueError("h and output_every must be positive and T nonnegative")


@dataclass
class SimulationState:
    """Mutable state of one run; agents are stored column-wise for speed."""

    t: float
    q: np.ndarray
    strategy: np.ndarray
    bank: EstimateBank
    counts: np.ndarray
    schedule: RevisionSchedule
    heap_t: np.ndarray
    heap_a: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.strategy.size

    @property
    def x(self) -> np.ndarray:
        return self.counts / self.n_agents

    def next_ring(self, k: int) -> float:
        return float(self.heap_t[np.flatnonzero(self.heap_a == k)[0]])

    def agent(self, k: int) -> AgentRecord:
        return AgentRecord(k, int(self.strategy[k]), self.next_ring(k), bool(self.bank.leaders[k]))

    def check_conservation(self) -> bool:
        n = self.counts.size
        return bool(self.counts.sum() == self.n_agents
                    and np.array_equal(np.bincount(self.strategy, minlength=n), self.counts))


# -- random stream -----------------------------------------------------------

class UniformStream:
    """Block-buffered uniforms from one generator, consumed strictly in order."""

    def __init__(self, rng: np.random.Generator, block: int = BUFFER_SIZE):
        self.rng = rng
        self.block = block
        self.buf = rng.random(block)
        self.pos = 0

    def ensure(self, k: int):
        if self.pos + k > self.buf.size:
            self.buf = np.concatenate([self.buf[self.pos:], self.rng.random(max(self.block, k))])
            self.pos = 0

    def take(self, k: int) -> np.ndarray:
        self.ensure(k)
        out = self.buf[self.pos:self.pos + k]
        self.pos += k
        return out


# -- compiled core -----------------------------------------------------------

@njit(cache=True)
def _revise(j, p_hat, varrho, u):
    """Categorical revision draw for a ``j``-strategist; returns (new strategy, overflow flag)."""
    n = p_hat.size
    total = 0.0
    for i in range(n):
        if i != j:
            gap = p_hat[i] - p_hat[j]
            if gap > 0.0:
                total += varrho * gap
    scale = 1.0
    over = 0
    if total > 1.0:
        scale = 1.0 / total
        over = 1
    cum = 0.0
    for i in range(n):
        if i != j:
            gap = p_hat[i] - p_hat[j]
            if gap > 0.0:
                cum += varrho * gap * scale
                if u < cum:
                    return i, over
    return j, over


@njit(cache=True)
def _sift_down(heap_t, heap_a, pos):
    size = heap_t.size
    t = heap_t[pos]
    a = heap_a[pos]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        right = child + 1
        if right < size and heap_t[right] < heap_t[child]:
            child = right
        if heap_t[child] < t:
            heap_t[pos] = heap_t[child]
            heap_a[pos] = heap_a[child]
            pos = child
        else:
            break
    heap_t[pos] = t
    heap_a[pos] = a


@njit(cache=True)
def _heapify(heap_t, heap_a):
    for pos in range(heap_t.size // 2 - 1, -1, -1):
        _sift_down(heap_t, heap_a, pos)


@njit(cache=True)
def _flow(q, xb, R, alpha, w, q_max, t_span, h):
    """RK4 on the game with precomputed ``x ** beta``; ``q`` updated in place."""
    n = q.size
    if t_span <= 0.0:
        return
    nsub = int(math.ceil(t_span / h - 1e-12))
    if nsub < 1:
        nsub = 1
    step = t_span / nsub
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for _ in range(nsub):
        for i in range(n):
            d = w[i] - R[i] * math.tanh(0.5 * alpha[i] * q[i]) * xb[i]
            k1[i] = 0.0 if (q[i] >= q_max and d > 0.0) else d
            tmp[i] = q[i] + 0.5 * step * k1[i]
        for i in range(n):
            d = w[i] - R[i] * math.tanh(0.5 * alpha[i] * tmp[i]) * xb[i]
            k2[i] = 0.0 if (tmp[i] >= q_max and d > 0.0) else d
        for i in range(n):
            tmp[i] = q[i] + 0.5 * step * k2[i]
        for i in range(n):
            d = w[i] - R[i] * math.tanh(0.5 * alpha[i] * tmp[i]) * xb[i]
            k3[i] = 0.0 if (tmp[i] >= q_max and d > 0.0) else d
        for i in range(n):
            tmp[i] = q[i] + step * k3[i]
        for i in range(n):
            d = w[i] - R[i] * math.tanh(0.5 * alpha[i] * tmp[i]) * xb[i]
            k4[i] = 0.0 if (tmp[i] >= q_max and d > 0.0) else d
        for i in range(n):
            v = q[i] + step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if v < 0.0:
                v = 0.0
            elif v > q_max:
                v = q_max
            q[i] = v


@njit(cache=True)
def _advance(t0, t1, q, counts, strategy, est, heap_t, heap_a, lam, U, pos,
             R, alpha, beta, w, q_max, varrho, h, stats):
    """Process rings in ``[t0, t1)`` and flow the game up to ``t1``.

    Stops early, at the last processed ring, when fewer than two uniforms
    remain in ``U``.  Returns ``(t_reached, pos, done)``.
    ``stats`` accumulates rings, switches and over-unit switch masses.
    """
    n = q.size
    N = strategy.size
    xb = np.empty(n)
    for i in range(n):
        xb[i] = (counts[i] / N) ** beta[i]
    t = t0
    while True:
        tr = heap_t[0]
        if tr >= t1:
            _flow(q, xb, R, alpha, w, q_max, t1 - t, h)
            return t1, pos, True
        if pos + 2 > U.size:
            return t, pos, False
        _flow(q, xb, R, alpha, w, q_max, tr - t, h)
        t = tr
        a = heap_a[0]
        e = -math.log1p(-U[pos])
        u = U[pos + 1]
        pos += 2
        j = strategy[a]
        i, over = _revise(j, est[a], varrho, u)
        stats[0] += 1
        stats[2] += over
        if i != j:
            stats[1] += 1
            strategy[a] = i
            counts[j] -= 1
            counts[i] += 1
            xb[j] = (counts[j] / N) ** beta[j]
            xb[i] = (counts[i] / N) ** beta[i]
        heap_t[0] = tr + e / lam
        _sift_down(heap_t, heap_a, 0)


# -- python-level operations ------------------------------------------------

def revise_agent(agent: AgentRecord, rule: LearningRule, p_hat, rng_or_u) -> int:
    """New strategy of a ringing agent given its payoff estimate.

    ``rng_or_u`` is a generator or an explicit uniform draw in ``[0, 1)``.
    """
    u = float(rng_or_u.random()) if hasattr(rng_or_u, "random") else float(rng_or_u)
    new, _ = _revise(int(agent.strategy), np.asarray(p_hat, dtype=float), float(rule.varrho), u)
    return int(new)


def measure_xi(state: SimulationState, rule: LearningRule) -> np.ndarray:
    """Empirical disturbance: class-averaged estimated switch rates minus exact ones."""
    q = state.q
    n = q.size
    est = state.bank.estimates
    own = state.strategy
    p_own = est[np.arange(est.shape[0]), own]
    rows = rule.varrho * np.maximum(est - p_own[:, None], 0.0)  # rows[k, i] = rho_{own(k), i}(p_hat_k)
    sums = np.zeros((n, n))
    np.add.at(sums, own, rows)
    counts = state.counts
    occupied = counts > 0
    avg = np.zeros((n, n))
    avg[occupied] = sums[occupied] / counts[occupied, None]
    D = np.where(occupied[:, None], avg - rule.switch_matrix(q), 0.0)
    np.fill_diagonal(D, 0.0)
    x = state.x
    return x @ D - x * D.sum(axis=1)


def class_mean_errors(state: SimulationState) -> np.ndarray:
    eps = np.linalg.norm(state.bank.estimates - state.q[None, :], axis=1)
    n = state.q.size
    sums = np.bincount(state.strategy, weights=eps, minlength=n)
    return np.divide(sums, state.counts, out=np.zeros(n), where=state.counts > 0)


def initial_counts(x0, N: int) -> np.ndarray:
    """Largest-remainder rounding of ``N * x0`` to integers summing to ``N``."""
    raw = np.asarray(x0, dtype=float) * N
    counts = np.floor(raw).astype(np.int64)
    short = N - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


@dataclass
class FiniteRun:
    record: TrajectoryRecord
    state: SimulationState
    schedule_rows: list = field(default_factory=list)
    graph: CommGraph | None = None


def _seeds(seed: int):
    ss = np.random.SeedSequence(seed)
    graph_ss, leader_ss, sim_ss = ss.spawn(3)
    return int(graph_ss.generate_state(1)[0]), int(leader_ss.generate_state(1)[0]), np.random.default_rng(sim_ss)


def build_population(cfg: FiniteConfig, seed: int, graph: CommGraph | None = None):
    """Graph, leader mask and simulation generator for one seed."""
    graph_seed, leader_seed, rng = _seeds(seed)
    all_leaders = cfg.leader_fraction >= 1.0
    if graph is None and not all_leaders:
        graph = generate_graph(cfg.n_agents, cfg.p_edge, graph_seed)
    if all_leaders:
        leaders = np.ones(cfg.n_agents, dtype=bool)
    else:
        leaders = select_leaders(graph, cfg.leader_fraction, leader_seed)
    return graph, leaders, rng


def run_finite(cfg: FiniteConfig, seed: int, graph: CommGraph | None = None) -> FiniteRun:
    """Simulate one run; fully determined by ``(cfg, seed)``."""
    dyn, rule = cfg.dyn, cfg.rule
    n, N = dyn.n, cfg.n_agents
    graph, leaders, rng = build_population(cfg, seed, graph)
    stream = UniformStream(rng)

    counts = initial_counts(cfg.x0, N)
    strategy = np.repeat(np.arange(n), counts)[rng.permutation(N)].astype(np.int64)
    q = np.clip(np.asarray(cfg.q0, dtype=float), 0.0, dyn.q_max).copy()
    bank = EstimateBank.initial(leaders, n, cfg.q_hat0)

    ctrl_state = None
    if cfg.controller is not None:
        ctrl_state = rc.ControllerState.initial(cfg.controller, 0.0)
        lam = ctrl_state.lambda_m
    else:
        lam = float(cfg.lam)
    schedule = RevisionSchedule.constant(lam, 0.0)
    schedule_rows = [(0, 0.0, lam)]

    heap_t = (-np.log1p(-stream.take(N))) / lam
    heap_a = np.arange(N, dtype=np.int64)
    _heapify(heap_t, heap_a)
    state = SimulationState(0.0, q, strategy, bank, counts, schedule, heap_t, heap_a)

    t_rows = output_times(cfg.T, cfg.output_every)
    n_comm = int(math.floor(cfg.T / cfg.comm_period + 1e-9))
    comm_times = cfg.comm_period * np.arange(1, n_comm + 1)
    events = np.union1d(t_rows, comm_times)
    events = events[events > 0]

    stats = np.zeros(3, dtype=np.int64)
    rows = []
    debug = {"xi_violations": 0, "xi_violations_aggregate": 0, "xi_checks": 0, "xi_worst_ratio": 0.0,
             "conservation_failures": 0}
    eq = solve_equilibrium(dyn) if cfg.debug_checks else None
    row_i = 0

    def record_row():
        rows.append(_row(state, lam, dyn, rule))
        if cfg.debug_checks:
            _debug_check(state, rule, debug)

    if t_rows[0] == 0.0:
        record_row()
        row_i = 1
    est = bank.estimates
    for t_ev in events:
        while True:
            stream.ensure(2)
            t_reached, stream.pos, done = _advance(
                state.t, float(t_ev), state.q, state.counts, state.strategy, est,
                state.heap_t, state.heap_a, lam, stream.buf, stream.pos,
                dyn.R, dyn.alpha, dyn.beta, dyn.w, dyn.q_max, rule.varrho, cfg.h, stats)
            state.t = t_reached
            if done:
                break
        state.t = float(t_ev)
        if _is_multiple(t_ev, cfg.comm_period) and n_comm:
            state.bank = consensus_round(state.bank, graph, state.q, cfg.self_inclusive) if graph is not None \
                else EstimateBank(np.tile(state.q, (N, 1)), state.bank.leaders)
            est = state.bank.estimates
            if ctrl_state is not None:
                p_trig = state.q if cfg.trigger_source == "oracle" else est[np.flatnonzero(leaders)[0]]
                trig = rc.evaluate_trigger(rule, p_trig, state.x, cfg.controller.epsilon)
                ctrl_state, broadcast = rc.maybe_update(ctrl_state, cfg.controller, state.t, trig)
                if broadcast:
                    lam = ctrl_state.lambda_m
                    state.schedule = state.schedule.append(state.t, lam)
                    schedule_rows.append((ctrl_state.m, state.t, lam))
                    state.heap_t[:] = state.t + (-np.log1p(-stream.take(N))) / lam
                    state.heap_a[:] = np.arange(N)
                    _heapify(state.heap_t, state.heap_a)
        if row_i < t_rows.size and abs(t_rows[row_i] - t_ev) <= 1e-9 * max(1.0, t_ev):
            record_row()
            row_i += 1

    record = TrajectoryRecord(n, np.array(rows))
    record.meta.update({
        "engine": "finite",
        "seed": int(seed),
        "rings": int(stats[0]),
        "switches": int(stats[1]),
        "overmass_revisions": int(stats[2]),
        "epochs": len(schedule_rows) - 1,
        "graph_seed": None if graph is None else int(graph.seed),
        "n_leaders": int(leaders.sum()),
    })
    if cfg.debug_checks:
        record.meta.update(debug)
        record.meta["q_star"] = eq.q_star
    return FiniteRun(record, state, schedule_rows, graph)


def _is_multiple(t: float, period: float) -> bool:
    k = round(t / period)
    return k >= 1 and abs(t - k * period) <= 1e-9 * max(1.0, t)


def _row(state: SimulationState, lam: float, dyn: TaskDynamics, rule: LearningRule) -> np.ndarray:
    x = state.x
    L, S, SV = storage_rows(dyn, rule, state.q, x)
    eps = np.linalg.norm(state.bank.estimates - state.q[None, :], axis=1)
    return np.concatenate([[state.t], state.q, x, [lam, L[0], S[0], SV[0], eps.mean(), eps.max(),
                                                    np.abs(state.q).max()]])


def _debug_check(state: SimulationState, rule: LearningRule, debug: dict):
    xi = measure_xi(state, rule)
    bound = xi_bound(rule, state.x, class_mean_errors(state))
    debug["xi_checks"] += 1
    slack = 1e-12 * max(1.0, float(bound.max()))
    if np.any(np.abs(xi) > bound + slack):
        debug["xi_violations"] += 1
    wide = xi_bound(rule, state.x, class_mean_errors(state), aggregate=True)
    if np.any(np.abs(xi) > wide + 1e-12 * max(1.0, float(wide.max()))):
        debug["xi_violations_aggregate"] += 1
    ratio = np.max(np.abs(xi) / np.maximum(bound, 1e-300)) if np.any(bound > 0) else 0.0
    debug["xi_worst_ratio"] = max(debug["xi_worst_ratio"], float(ratio))
    if not state.check_conservation():
        debug["conservation_failures"] += 1


def with_overrides(cfg: FiniteConfig, **kw) -> FiniteConfig:
    return replace(cfg, **kw)

"""Communication graphs and leader/follower consensus estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .errors import GraphError

logger = logging.getLogger(__name__)

MAX_RESAMPLES = 1000


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Static undirected communication graph stored as a CSR adjacency."""

    n_agents: int
    adjacency: sp.csr_matrix
    seed: int

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    def neighbors(self, k: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[k]:a.indptr[k + 1]]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    def is_connected(self) -> bool:
        return _is_connected(self.adjacency)

    def averaging_matrix(self, self_inclusive: bool = False) -> sp.csr_matrix:
        """Row-stochastic neighbour-averaging operator.

        Rows of isolated vertices are left empty; callers keep the prior value there.
        """
        key = "_avg_self" if self_inclusive else "_avg"
        cached = self.__dict__.get(key)
        if cached is not None:
            return cached
        a = self.adjacency.astype(float)
        if self_inclusive:
            a = (a + sp.identity(self.n_agents, format="csr")).tocsr()
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        m = sp.diags(inv) @ a
        m = m.tocsr()
        self.__dict__[key] = m
        return m


def _is_connected(adj: sp.csr_matrix) -> bool:
    if adj.shape[0] == 0:
        return False
    order = breadth_first_order(adj, 0, directed=False, return_predecessors=False)
    return order.size == adj.shape[0]


def _sample_er(n: int, p: float, rng: np.random.Generator) -> sp.csr_matrix:
    if p >= 1.0:
        dense = np.ones((n, n), dtype=np.int8)
        np.fill_diagonal(dense, 0)
        return sp.csr_matrix(dense)
    rows, cols = np.triu_indices(n, k=1)
    keep = rng.random(rows.size) < p
    r, c = rows[keep], cols[keep]
    data = np.ones(2 * r.size, dtype=np.int8)
    adj = sp.coo_matrix((data, (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(n, n))
    return adj.tocsr()


def generate_graph(n_agents: int, p_edge: float, seed: int) -> CommGraph:
    """Erdos-Renyi graph, resampled with an incremented seed until connected."""
    if n_agents < 2:
        raise ValueError("need at least two agents")
    if not 0.0 < p_edge <= 1.0:
        raise ValueError("p_edge must lie in (0, 1]")
    for attempt in range(MAX_RESAMPLES):
        sub_seed = seed + attempt
        adj = _sample_er(n_agents, p_edge, np.random.default_rng(sub_seed))
        if _is_connected(adj):
            if attempt:
                logger.info("graph connected after %d resamples (seed %d)", attempt, sub_seed)
            return CommGraph(n_agents, adj, sub_seed)
    raise GraphError(f"no connected graph after {MAX_RESAMPLES} samples; p_edge={p_edge} too small?")


def complete_graph(n_agents: int) -> CommGraph:
    return generate_graph(n_agents, 1.0, 0)


def select_leaders(graph: CommGraph, fraction: float, seed: int) -> np.ndarray:
    """Boolean leader mask with exactly ``round(fraction * n)`` leaders."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("leader fraction must lie in (0, 1]")
    n = graph.n_agents
    count = max(1, int(round(fraction * n)))
    chosen = np.random.default_rng(seed).choice(n, size=count, replace=False)
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True
    return mask


@dataclass(frozen=True, eq=False)
class EstimateBank:
    """Per-agent estimates of the game state, one row per agent."""

    estimates: np.ndarray
    leaders: np.ndarray

    def __post_init__(self):
        est = np.asarray(self.estimates, dtype=float)
        lead = np.asarray(self.leaders, dtype=bool)
        if est.ndim != 2 or est.shape[0] != lead.size:
            raise ValueError("estimates must be (n_agents, n) and match the leader mask")
        object.__setattr__(self, "estimates", est)
        object.__setattr__(self, "leaders", lead)

    @classmethod
    def initial(cls, leaders, n: int, q_hat0=None) -> "EstimateBank":
        leaders = np.asarray(leaders, dtype=bool)
        if q_hat0 is None:
            q_hat0 = np.zeros(n)
        est = np.tile(np.asarray(q_hat0, dtype=float), (leaders.size, 1))
        return cls(est, leaders)

    @property
    def n_agents(self) -> int:
        return self.leaders.size

    @property
    def leader_fraction(self) -> float:
        return float(self.leaders.mean())


def consensus_round(bank: EstimateBank, graph: CommGraph, q_true, self_inclusive: bool = False) -> EstimateBank:
    """One synchronous round: leaders read ``q_true``, followers average neighbours.

    Every follower reads the pre-round snapshot, including leader neighbours'
    values from before this round.
    """
    if bank.n_agents != graph.n_agents:
        raise ValueError("estimate bank and graph sizes differ")
    prev = bank.estimates
    avg = graph.averaging_matrix(self_inclusive)
    new = avg @ prev
    isolated = graph.degree == 0 if not self_inclusive else np.zeros(graph.n_agents, dtype=bool)
    if np.any(isolated):
        new[isolated] = prev[isolated]
    new[bank.leaders] = np.asarray(q_true, dtype=float)
    return EstimateBank(new, bank.leaders)


@dataclass(frozen=True)
class ErrorSummary:
    per_agent: np.ndarray
    mean: float
    max: float


def estimation_errors(bank: EstimateBank, q_true) -> ErrorSummary:
    eps = np.linalg.norm(bank.estimates - np.asarray(q_true, dtype=float)[None, :], axis=1)
    return ErrorSummary(eps, float(eps.mean()), float(eps.max()))

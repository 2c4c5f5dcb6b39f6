"""Payoff-driven revision protocols and the mean switch-rate field."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class RuleKind(enum.Enum):
    SMITH = "smith"


@dataclass(frozen=True)
class LearningRule:
    kind: RuleKind = RuleKind.SMITH
    varrho: float = 1.0 / 400.0

    def __post_init__(self):
        if not self.varrho > 0:
            raise ValueError("varrho must be positive")
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", RuleKind(self.kind))

    @property
    def lipschitz_c(self) -> float:
        """Per-pair Lipschitz constant of the switch probabilities (2-norm)."""
        return math.sqrt(2.0) * self.varrho

    def switch_matrix(self, p) -> np.ndarray:
        """Matrix ``G`` with ``G[j, i] = rho_ji(p)`` for ``i != j`` and a zero diagonal."""
        p = np.asarray(p, dtype=float)
        return self.varrho * np.maximum(p[None, :] - p[:, None], 0.0)

    def switch_matrices(self, P) -> np.ndarray:
        """Batched :meth:`switch_matrix` for payoff rows ``P`` of shape (m, n)."""
        P = np.asarray(P, dtype=float)
        return self.varrho * np.maximum(P[:, None, :] - P[:, :, None], 0.0)


def smith(varrho: float) -> LearningRule:
    return LearningRule(RuleKind.SMITH, varrho)


def rho(rule: LearningRule, p, j: int, i: int) -> float:
    """Probability that a revising ``j``-strategist switches to ``i``."""
    if i == j:
        raise ValueError("rho is defined for i != j; use stay_probability for the diagonal")
    return rule.varrho * max(0.0, float(p[i]) - float(p[j]))


def stay_probability(rule: LearningRule, p, j: int) -> float:
    return 1.0 - float(rule.switch_matrix(p)[j].sum())


def revision_distribution(rule: LearningRule, p, j: int) -> np.ndarray:
    """Categorical distribution over the next strategy of a ``j``-strategist.

    Rows whose switch mass exceeds one are rescaled so the stay mass is zero.
    """
    row = rule.switch_matrix(p)[j].copy()
    total = row.sum()
    if total > 1.0:
        row /= total
        total = 1.0
    row[j] = 1.0 - total
    return row


def mean_field_V(rule: LearningRule, p, x) -> np.ndarray:
    G = rule.switch_matrix(p)
    x = np.asarray(x, dtype=float)
    return x @ G - x * G.sum(axis=1)


def max_row_mass(rule: LearningRule, p) -> float:
    """Largest total switch probability over origin strategies."""
    return float(rule.switch_matrix(p).sum(axis=1).max())


def stationarity_check(rule: LearningRule, p, x, tol: float = 1e-8) -> tuple[bool, bool]:
    """Return ``(V == 0, Nash condition)`` evaluated at tolerance ``tol``.

    The Nash condition is ``x_i (q_j - q_i) <= 0`` for every pair, with
    payoffs identified with the game state.
    """
    p = np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    v_zero = bool(np.max(np.abs(mean_field_V(rule, p, x))) <= tol)
    gaps = x[:, None] * (p[None, :] - p[:, None])
    nash = bool(gaps.max() <= tol)
    return v_zero, nash

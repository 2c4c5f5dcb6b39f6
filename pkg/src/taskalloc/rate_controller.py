"""Decreasing revision-rate controller.

The rate drops geometrically, ``lambda_{m+1} = gamma * lambda_m``, once the
Smith storage stops decreasing noticeably (``grad_x S . V >= -epsilon``) and
the current epoch has lasted at least ``tau / lambda_m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .passivity import gradx_S_dot_V
from .protocols import LearningRule


@dataclass(frozen=True)
class ControllerConfig:
    gamma: float
    tau: float
    epsilon: float = 0.01
    lambda0: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie strictly inside (0, 1)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")

    def rate(self, m: int) -> float:
        return self.lambda0 * self.gamma ** m


@dataclass(frozen=True)
class ControllerState:
    m: int
    lambda_m: float
    t_m: float

    @classmethod
    def initial(cls, cfg: ControllerConfig, t0: float = 0.0) -> "ControllerState":
        return cls(0, cfg.rate(0), t0)

    def dwell(self, cfg: ControllerConfig) -> float:
        return cfg.tau / self.lambda_m


def trigger_value(rule: LearningRule, p, x) -> float:
    return gradx_S_dot_V(rule, p, x)


def evaluate_trigger(rule: LearningRule, p, x, epsilon: float) -> bool:
    return trigger_value(rule, p, x) >= -epsilon


def maybe_update(state: ControllerState, cfg: ControllerConfig, t_now: float,
                 trigger: bool) -> tuple[ControllerState, bool]:
    """Advance one epoch when triggered and the dwell time has elapsed.

    Returns the (possibly unchanged) state and whether a new rate must be
    broadcast.
    """
    if t_now < state.t_m:
        raise ValueError("t_now precedes the current epoch start")
    if trigger and t_now - state.t_m >= state.dwell(cfg):
        m = state.m + 1
        return ControllerState(m, cfg.rate(m), t_now), True
    return state, False


def dwell_probability(tau: float) -> float:
    """Chance that a single clock rings at least once during the minimum dwell."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return -math.expm1(-tau)

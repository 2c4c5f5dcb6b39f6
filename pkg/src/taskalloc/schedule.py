"""Piecewise-constant revision rates and exact ring-time sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RevisionSchedule:
    """Rate ``lambda(t) = rates[m]`` on ``[times[m], times[m+1])``; the last rate extends forever."""

    times: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        rates = tuple(float(r) for r in self.rates)
        if not times or len(times) != len(rates):
            raise ValueError("schedule needs matching, nonempty times and rates")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if any(not r > 0 for r in rates):
            raise ValueError("rates must be positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def constant(cls, rate: float, t0: float = 0.0) -> "RevisionSchedule":
        return cls((t0,), (rate,))

    def rate_at(self, t: float) -> float:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.rates[max(int(idx), 0)]

    def append(self, t: float, rate: float) -> "RevisionSchedule":
        return RevisionSchedule(self.times + (t,), self.rates + (rate,))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.times), np.array(self.rates)

    def integral(self, t0: float, t1: float) -> float:
        """Integrated intensity over ``[t0, t1]``."""
        total = 0.0
        for m, (start, rate) in enumerate(zip(self.times, self.rates)):
            end = self.times[m + 1] if m + 1 < len(self.times) else math.inf
            a, b = max(start, t0), min(end, t1)
            if b > a:
                total += rate * (b - a)
        if t0 < self.times[0]:
            total += self.rates[0] * (min(t1, self.times[0]) - t0)
        return total


def ring_after(schedule: RevisionSchedule, t_now: float, budget: float) -> float:
    """Time at which the integrated intensity from ``t_now`` reaches ``budget``."""
    times, rates = schedule.times, schedule.rates
    m = max(int(np.searchsorted(times, t_now, side="right")) - 1, 0)
    t = t_now
    remaining = budget
    while True:
        rate = rates[m]
        end = times[m + 1] if m + 1 < len(times) else math.inf
        need = remaining / rate
        if t + need <= end:
            return t + need
        remaining -= rate * (end - t)
        t = end
        m += 1


def sample_next_ring(schedule: RevisionSchedule, t_now: float, rng: np.random.Generator) -> float:
    """Next ring of a Poisson clock with the schedule's intensity, by inversion.

    Draws ``E ~ Exp(1)`` and walks segments until the accumulated intensity
    reaches ``E``.  No thinning is involved.
    """
    return ring_after(schedule, t_now, float(rng.exponential()))

"""Trajectory records and their CSV serialisation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def trajectory_columns(n: int) -> list[str]:
    return (
        ["t"]
        + [f"q_{i + 1}" for i in range(n)]
        + [f"x_{i + 1}" for i in range(n)]
        + ["lambda", "L", "S", "gradxS_dot_V", "eps_mean", "eps_max", "q_inf_norm"]
    )


def fmt(value) -> str:
    """Shortest string that round-trips the float exactly."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


@dataclass
class TrajectoryRecord:
    """Sampled trajectory, one row per output instant, columns fixed by ``n``."""

    n: int
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(self.columns))

    @property
    def columns(self) -> list[str]:
        return trajectory_columns(self.n)

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def q(self) -> np.ndarray:
        return self.data[:, 1:1 + self.n]

    @property
    def x(self) -> np.ndarray:
        return self.data[:, 1 + self.n:1 + 2 * self.n]

    @property
    def lam(self) -> np.ndarray:
        return self.column("lambda")

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.data:
                writer.writerow([fmt(v) for v in row])
        return path

    @classmethod
    def read_csv(cls, path) -> "TrajectoryRecord":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader]
        n = (len(header) - 8) // 2
        if trajectory_columns(n) != header:
            raise ValueError(f"unexpected trajectory header in {path}")
        return cls(n, np.array(rows, dtype=float).reshape(-1, len(header)))


def write_rows(path, header: list[str], rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) else v for v in row])
    return path

"""Replicate containers and the rank transform."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True, eq=False)
class ReplicateMatrix:
    """``N`` replicates of ``p`` variables at ``n`` locations.

    Columns are stacked variable-major, matching
    :class:`corlmc.gaussian.SpatialDesign`: column ``i*n + j`` holds variable
    ``i`` at location ``j``.
    """

    values: np.ndarray
    p: int
    n: int
    timestamps: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("replicates must form a 2-D array (N, p*n)")
        if v.shape[1] != self.p * self.n:
            raise ValueError(f"expected {self.p * self.n} columns, got {v.shape[1]}")
        if v.shape[0] < 1:
            raise ValueError("need at least one replicate")
        if not np.all(np.isfinite(v)):
            raise ValueError("replicates contain missing or non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.timestamps is not None and len(self.timestamps) != v.shape[0]:
            raise ValueError("one timestamp per replicate is required")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def column(self, variable: int, location: int) -> np.ndarray:
        return self.values[:, variable * self.n + location]

    def block(self, variable: int) -> np.ndarray:
        return self.values[:, variable * self.n:(variable + 1) * self.n]

    def column_map(self) -> list[tuple[int, int]]:
        """``(variable, location)`` of each column."""
        return [(i, j) for i in range(self.p) for j in range(self.n)]

    def swap_variables(self) -> "ReplicateMatrix":
        """Same data with the two variables exchanged (``p = 2``)."""
        if self.p != 2:
            raise ValueError("variable swap needs p = 2")
        v = np.concatenate([self.block(1), self.block(0)], axis=1)
        return ReplicateMatrix(v, 2, self.n, self.timestamps)


def uniform_scores(data):
    """Columnwise ``(rank - 0.5) / N`` with average ranks for ties.

    Accepts a :class:`ReplicateMatrix` (returned as one) or a 2-D array.
    """
    wrapped = isinstance(data, ReplicateMatrix)
    x = data.values if wrapped else np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be 2-D (replicates x columns)")
    N = x.shape[0]
    if N < 2:
        raise ValueError("uniform scores need N >= 2 replicates")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contain missing or non-finite values")
    const = np.all(x == x[:1], axis=0)
    if const.any():
        raise ValueError(f"constant column(s) {np.flatnonzero(const).tolist()}: ranks undefined")
    u = (rankdata(x, method="average", axis=0) - 0.5) / N
    if wrapped:
        return ReplicateMatrix(u, data.p, data.n, data.timestamps)
    return u


def as_array(data) -> np.ndarray:
    return data.values if isinstance(data, ReplicateMatrix) else np.asarray(data, dtype=float)

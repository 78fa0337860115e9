"""Seeded randomness: weighted index draws and uniform subset sampling.

All solver randomness flows through :class:`RngStream`, a counter-based
(Philox) generator keyed by ``(seed, stream_id)``.  Identical keys reproduce
identical draw sequences; distinct stream ids give independent streams, so
parallel benchmark repetitions stay reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRatio, ZeroResidual
from .matrix import RowColMatrix

__all__ = [
    "RngStream",
    "SampleSubset",
    "weighted_row_sample",
    "weighted_column_sample",
    "simple_random_subset",
    "grak_residual_sample",
]

# conventional stream ids so different uses of one seed never share a stream
STREAM_SOLVER = 0
STREAM_MATRIX = 1
STREAM_NOISE = 2

_MASK64 = (1 << 64) - 1


class RngStream:
    """Counter-based random stream identified by (seed, stream_id)."""

    algorithm = "philox4x64"

    def __init__(self, seed: int, stream_id: int = STREAM_SOLVER):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream_id: int) -> "RngStream":
        """Independent stream under the same seed."""
        return RngStream(self.seed, stream_id)

    def uniform(self) -> float:
        return float(self._gen.random())

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass
class SampleSubset:
    """A sorted subset of the stacked index range {0, ..., m+n-1}.

    ``rows`` holds the members below m (matrix row indices) and ``cols`` the
    members at or above m, shifted down to column indices.
    """

    m: int
    n: int
    indices: np.ndarray
    rows: np.ndarray = field(init=False)
    cols: np.ndarray = field(init=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        split = int(np.searchsorted(self.indices, self.m))
        self.rows = self.indices[:split]
        self.cols = self.indices[split:] - self.m

    def __len__(self):
        return int(self.indices.size)


def _cumsum_draw(cum: np.ndarray, rng: RngStream) -> int:
    """Draw an index with probability proportional to the cumsum increments."""
    u = rng.uniform() * cum[-1]
    idx = int(np.searchsorted(cum, u, side="right"))
    return min(idx, len(cum) - 1)


def weighted_row_sample(mat: RowColMatrix, rng: RngStream) -> int:
    """Row index drawn with probability ||A^(i)||^2 / ||A||_F^2."""
    return _cumsum_draw(mat.row_norm_cumsum(), rng)


def weighted_column_sample(mat: RowColMatrix, rng: RngStream) -> int:
    """Column index drawn with probability ||A_(j)||^2 / ||A||_F^2."""
    return _cumsum_draw(mat.col_norm_cumsum(), rng)


def _sample_without_replacement(total: int, k: int, rng: RngStream) -> np.ndarray:
    """Uniform sorted size-k subset of range(total), O(k) memory.

    For small k this is batched rejection: draw k indices at once, keep first
    occurrences, redraw the collisions (about k^2/2/total expected, so the
    Python loop almost never runs).  Inserting draws in order while skipping
    already-seen values is exactly sequential sampling without replacement.
    Dense requests fall back to a partial shuffle.
    """
    if k >= total:
        return np.arange(total, dtype=np.int64)
    if k > total // 8:
        picked = rng._gen.permutation(total)[:k].astype(np.int64)
        picked.sort()
        return picked
    draws = rng._gen.integers(0, total, size=k + 16 + k // 32)
    while True:
        _, first_pos = np.unique(draws, return_index=True)
        if first_pos.size >= k:
            break
        draws = np.concatenate(
            [draws, rng._gen.integers(0, total, size=2 * (k - first_pos.size) + 8)])
    first_pos.sort()
    out = draws[first_pos[:k]]
    out.sort()
    return out


def simple_random_subset(m: int, n: int, eta_s: float, rng: RngStream) -> SampleSubset:
    """Uniform without-replacement subset of size max(1, floor((m+n)*eta_s)).

    ``eta_s`` is the sampling ratio; the floor is clamped to one so a draw
    always exists even for tiny systems.
    """
    if not 0.0 < eta_s <= 1.0:
        raise InvalidRatio(f"sampling ratio must be in (0, 1], got {eta_s}")
    total = m + n
    k = max(1, int(math.floor(total * eta_s + 1e-9)))
    return SampleSubset(m=m, n=n, indices=_sample_without_replacement(total, k, rng))


def grak_residual_sample(selection, rng: RngStream) -> int:
    """Stacked index drawn with probability proportional to the squared
    masked residual entries of a greedy selection.

    Returns t in [0, m+n): t < m selects a stacked top row, t >= m selects
    column t - m.
    """
    m = selection.residual_row.shape[0]
    rv = selection.row_values
    cv = selection.col_values
    masses = np.concatenate([rv * rv, cv * cv])
    if masses.size == 0 or masses.sum() <= 0.0:
        raise ZeroResidual("masked residual carries no mass: already converged")
    cum = np.cumsum(masses)
    pos = _cumsum_draw(cum, rng)
    if pos < rv.size:
        return int(selection.row_set[pos])
    return m + int(selection.col_set[pos - rv.size])

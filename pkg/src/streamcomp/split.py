"""Randomized redistribution of observed entries into independent sparse copies.

Each observed entry is routed to a random subset of ``{0, ..., b-1}``. The
subset law makes every copy an independent Bernoulli(delta/b) sample of the
underlying matrix. Only copies ``0 .. a-1`` are materialized; entries routed
to the remaining indices are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .linalg import SparseColMatrix, SparseColumn

CLIP_TOL = 1e-15


@dataclass(frozen=True)
class SplitParams:
    a: int
    b: int
    delta: float
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.a <= self.b:
            raise InvalidArgumentError(f"need 1 <= a <= b, got a={self.a}, b={self.b}")
        if not 0.0 < self.delta <= 1.0:
            raise InvalidArgumentError(f"delta must lie in (0, 1], got {self.delta}")


def subset_size_distribution(b: int, delta: float) -> np.ndarray:
    """Probability that an entry lands in exactly ``j`` copies, j = 0..b."""
    if b < 1:
        raise InvalidArgumentError(f"b must be >= 1, got {b}")
    if not 0.0 < delta <= 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1], got {delta}")
    rate = delta / b
    p = np.array(
        [math.comb(b, j) * rate**j * (1.0 - rate) ** (b - j) / delta for j in range(b + 1)]
    )
    p[0] = 1.0 - p[1:].sum()
    if p.min() < -CLIP_TOL:
        raise InvalidArgumentError(f"negative subset probability {p.min():.3g} (b={b}, delta={delta})")
    return np.maximum(p, 0.0)


def _memberships(nnz: int, params: SplitParams, cdf: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Boolean (nnz, a) matrix: entry i goes to copy c."""
    sizes = np.minimum(np.searchsorted(cdf, rng.random(nnz), side="right"), params.b)
    if params.b == 1:
        return (sizes >= 1)[:, None]
    # uniform subset of the drawn size: the ``size`` smallest of b iid keys
    keys = rng.random((nnz, params.b))
    ranks = keys.argsort(axis=1).argsort(axis=1)
    return ranks[:, : params.a] < sizes[:, None]


def _cdf(params: SplitParams) -> np.ndarray:
    return np.cumsum(subset_size_distribution(params.b, params.delta))


def split_column(col: SparseColumn, params: SplitParams, rng: np.random.Generator) -> list[SparseColumn]:
    member = _memberships(col.nnz, params, _cdf(params), rng)
    return [SparseColumn(col.rows[member[:, c]], col.values[member[:, c]]) for c in range(params.a)]


def column_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for one column, mixed from (seed, index) by SeedSequence."""
    return np.random.default_rng([seed, index])


def split_matrix(a: SparseColMatrix, params: SplitParams) -> list[SparseColMatrix]:
    cdf = _cdf(params)
    member = np.empty((a.nnz, params.a), dtype=bool)
    for j in range(a.n):
        lo, hi = a.indptr[j], a.indptr[j + 1]
        if hi > lo:
            member[lo:hi] = _memberships(hi - lo, params, cdf, column_rng(params.seed, j))
    return [a.keep_entries(member[:, c]) for c in range(params.a)]

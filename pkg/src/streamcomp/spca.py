"""Top-k right singular subspace of a sparse, heavily subsampled batch.

Pipeline: estimate the sampling rate, empty over-populated rows, form the
off-diagonal Gram matrix of the remaining columns and run orthogonal
iteration on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse

from .errors import DegenerateInputError, InvalidArgumentError
from .linalg import SparseColMatrix, power_qr

if TYPE_CHECKING:
    from .smc import ResourceReport


@dataclass(frozen=True)
class SpcaConfig:
    k: int
    trim_constant: float = 10.0
    iteration_constant: float = 10.0

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgumentError("k must be >= 1")
        if self.trim_constant <= 0 or self.iteration_constant <= 0:
            raise InvalidArgumentError("trim and iteration constants must be positive")

    def iterations(self, ell: int) -> int:
        return max(1, math.ceil(self.iteration_constant * math.log(ell)))


def estimate_delta(a: SparseColMatrix) -> float:
    """Observed fraction, counted on the mask (observed zeros count)."""
    if a.m * a.n == 0:
        raise InvalidArgumentError("cannot estimate a sampling rate on an empty shape")
    if a.nnz == 0:
        raise DegenerateInputError("no observed entries; sampling rate estimate is zero")
    return a.nnz / (a.m * a.n)


def trim_threshold(delta_hat: float, ell: int, trim_constant: float = 10.0) -> float:
    return max(trim_constant, trim_constant * delta_hat * ell)


def trim_rows(a: SparseColMatrix, delta_hat: float, trim_constant: float = 10.0) -> SparseColMatrix:
    """Empty every row holding more than ``max(c, c * delta_hat * ell)`` entries."""
    heavy = a.row_counts() > trim_threshold(delta_hat, a.n, trim_constant)
    if not heavy.any():
        return a
    return a.drop_rows(heavy)


def _canonical_rows(csr: scipy.sparse.csr_matrix) -> np.ndarray:
    """Row order determined by row content alone, so relabelled rows sort identically."""
    keys = [
        csr.indices[lo:hi].tobytes() + b"|" + csr.data[lo:hi].tobytes()
        for lo, hi in zip(csr.indptr[:-1], csr.indptr[1:])
    ]
    return np.array(sorted(range(len(keys)), key=keys.__getitem__), dtype=np.int64)


def gram_offdiag_sparse(a: SparseColMatrix) -> tuple[scipy.sparse.csr_matrix, int]:
    """Off-diagonal Gram matrix as CSR plus the number of multiply-adds spent.

    Rows are put in a content-defined order before the product, which makes
    the result bitwise independent of the row labelling of ``a``. Only the
    strict upper triangle is kept and then mirrored, so the output is bitwise
    symmetric with an exactly zero diagonal.
    """
    csr = a.to_scipy().tocsr()
    csr.sort_indices()
    counts = np.diff(csr.indptr)
    nonempty = np.flatnonzero(counts >= 2)
    rows = csr[nonempty][_canonical_rows(csr[nonempty])] if nonempty.size else csr[:0]
    upper = scipy.sparse.triu((rows.T @ rows).tocsr(), k=1)
    phi = (upper + upper.T).tocsr()
    phi.sort_indices()
    pair_flops = int((counts * (counts - 1) // 2).sum())
    return phi, pair_flops


def gram_offdiag(a: SparseColMatrix) -> np.ndarray:
    """Dense ``A^T A`` with its diagonal zeroed."""
    phi, _ = gram_offdiag_sparse(a)
    return phi.toarray()


def spca(
    a: SparseColMatrix,
    config: SpcaConfig,
    rng: np.random.Generator,
    delta_hat: float | None = None,
    meter: "ResourceReport | None" = None,
) -> np.ndarray:
    """Estimate the top-k right singular vectors of the batch ``a`` (ell x k).

    ``delta_hat`` overrides the rate estimated from ``a`` itself; the streaming
    pipeline passes the full-batch estimate here. ``meter`` receives storage
    and operation counts when given.
    """
    ell, k = a.n, config.k
    if k > ell:
        raise InvalidArgumentError(f"k={k} exceeds batch size {ell}")
    if np.count_nonzero(a.col_counts()) < k:
        raise DegenerateInputError(f"fewer than k={k} nonempty columns in the batch")
    if delta_hat is None:
        delta_hat = estimate_delta(a)

    trimmed = trim_rows(a, delta_hat, config.trim_constant)
    phi, pair_flops = gram_offdiag_sparse(trimmed)
    iterations = config.iterations(ell)
    if meter is not None:
        meter.alloc_sparse(trimmed.nnz + phi.nnz)
        meter.phi_nnz = max(meter.phi_nnz, phi.nnz)
        meter.add_flops("batch", pair_flops)
        # per round: sparse product plus a Householder QR of an ell x k block
        meter.add_flops("batch", iterations * (phi.nnz * k + 2 * ell * k * k))
        meter.alloc_dense(ell * k)

    q = power_qr(phi, k, iterations, rng)

    if meter is not None:
        meter.release_sparse(trimmed.nnz + phi.nnz)
    return q

"""Dense/sparse matrix types and the linear-algebra kernels used by the pipeline.

Dense matrices are plain ``float64`` numpy arrays. Sparse matrices are stored
column-major (CSC layout) in :class:`SparseColMatrix`, where the presence of an
entry is the observation mask: an explicitly stored ``0.0`` is observed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import (
    DegenerateSubspaceWarning,
    InvalidArgumentError,
    NonConvergenceError,
    RankDeficiencyError,
    SingularMatrixError,
)

RANK_TOL = 1e-12
ORTHO_TOL = 1e-8


class SparseColumn(NamedTuple):
    """One column: strictly increasing row indices and their observed values."""

    rows: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    @classmethod
    def empty(cls) -> "SparseColumn":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))


class SparseColMatrix:
    """Column-major sparse matrix with an explicit observation mask.

    ``indptr``, ``indices`` and ``data`` follow the usual CSC conventions.
    Row indices inside a column must be strictly increasing and values must
    lie in [0, 1].
    """

    __slots__ = ("m", "n", "indptr", "indices", "data")

    def __init__(self, m: int, n: int, indptr, indices, data, check: bool = True):
        self.m = int(m)
        self.n = int(n)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        if check:
            self._validate()

    def _validate(self) -> None:
        if self.m < 0 or self.n < 0:
            raise InvalidArgumentError("negative matrix dimension")
        if self.indptr.shape != (self.n + 1,) or self.indptr[0] != 0:
            raise InvalidArgumentError("indptr must have length n + 1 and start at 0")
        if np.any(np.diff(self.indptr) < 0) or self.indptr[-1] != self.indices.size:
            raise InvalidArgumentError("indptr is not a valid column pointer array")
        if self.indices.size != self.data.size:
            raise InvalidArgumentError("indices and data differ in length")
        if self.indices.size:
            if self.indices.min() < 0 or self.indices.max() >= self.m:
                raise InvalidArgumentError("row index out of range")
            step = np.diff(self.indices)
            # a non-increasing step is only legal where a new column starts
            starts = np.zeros(self.indices.size, dtype=bool)
            starts[self.indptr[1:-1][self.indptr[1:-1] < self.indices.size]] = True
            if np.any((step <= 0) & ~starts[1:]):
                raise InvalidArgumentError("row indices must be strictly increasing within a column")
            if not np.all(np.isfinite(self.data)) or self.data.min() < 0.0 or self.data.max() > 1.0:
                raise InvalidArgumentError("observed values must lie in [0, 1]")

    # construction helpers

    @classmethod
    def from_columns(cls, m: int, columns: Iterable[SparseColumn]) -> "SparseColMatrix":
        rows, vals, indptr = [], [], [0]
        for col in columns:
            rows.append(np.asarray(col.rows, dtype=np.int64))
            vals.append(np.asarray(col.values, dtype=np.float64))
            indptr.append(indptr[-1] + rows[-1].size)
        if rows:
            indices, data = np.concatenate(rows), np.concatenate(vals)
        else:
            indices, data = np.empty(0, np.int64), np.empty(0, np.float64)
        return cls(m, len(indptr) - 1, indptr, indices, data)

    @classmethod
    def from_dense(cls, y: np.ndarray, mask: np.ndarray | None = None) -> "SparseColMatrix":
        y = np.asarray(y, dtype=np.float64)
        if mask is None:
            mask = np.ones(y.shape, dtype=bool)
        cols, rows = np.nonzero(mask.T)
        indptr = np.zeros(y.shape[1] + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=y.shape[1]), out=indptr[1:])
        return cls(y.shape[0], y.shape[1], indptr, rows, y[rows, cols])

    @classmethod
    def empty(cls, m: int, n: int) -> "SparseColMatrix":
        return cls(m, n, np.zeros(n + 1, np.int64), np.empty(0, np.int64), np.empty(0))

    # accessors

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def column(self, j: int) -> SparseColumn:
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return SparseColumn(self.indices[lo:hi], self.data[lo:hi])

    def columns(self) -> Iterator[SparseColumn]:
        for j in range(self.n):
            yield self.column(j)

    def col_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row_counts(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.m)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.indices, np.repeat(np.arange(self.n), self.col_counts())] = True
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.indices, np.repeat(np.arange(self.n), self.col_counts())] = self.data
        return out

    def to_scipy(self) -> scipy.sparse.csc_matrix:
        return scipy.sparse.csc_matrix(
            (self.data, self.indices, self.indptr), shape=self.shape
        )

    def keep_entries(self, keep: np.ndarray) -> "SparseColMatrix":
        """Return a copy holding only the entries flagged in ``keep`` (entry order)."""
        col_of = np.repeat(np.arange(self.n), self.col_counts())
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(col_of[keep], minlength=self.n), out=indptr[1:])
        return SparseColMatrix(
            self.m, self.n, indptr, self.indices[keep], self.data[keep], check=False
        )

    def drop_rows(self, rows: np.ndarray) -> "SparseColMatrix":
        """Empty the given rows (boolean mask of length m); shape is preserved."""
        return self.keep_entries(~np.asarray(rows, dtype=bool)[self.indices])

    def drop_columns(self, cols: np.ndarray) -> "SparseColMatrix":
        """Empty the given columns (boolean mask of length n); shape is preserved."""
        col_of = np.repeat(np.arange(self.n), self.col_counts())
        return self.keep_entries(~np.asarray(cols, dtype=bool)[col_of])

    def permute_rows(self, perm: np.ndarray) -> "SparseColMatrix":
        """Row ``i`` of the result is row ``perm[i]`` of ``self``."""
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        cols = [self.column(j) for j in range(self.n)]
        out = []
        for c in cols:
            new_rows = inverse[c.rows]
            order = np.argsort(new_rows, kind="stable")
            out.append(SparseColumn(new_rows[order], c.values[order]))
        return SparseColMatrix.from_columns(self.m, out)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseColMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"SparseColMatrix(m={self.m}, n={self.n}, nnz={self.nnz})"


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def _as_dense(a) -> np.ndarray:
    if isinstance(a, SparseColMatrix):
        return a.to_dense()
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidArgumentError("expected a 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("matrix contains non-finite values")
    return a


def clamp(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Entrywise projection of ``a`` onto [lo, hi]."""
    if lo > hi:
        raise InvalidArgumentError(f"clamp bounds out of order: lo={lo} > hi={hi}")
    return np.clip(np.asarray(a, dtype=np.float64), lo, hi)


def qr_decompose(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with a nonnegative diagonal on R.

    Raises :class:`RankDeficiencyError` carrying the first column whose
    diagonal falls below ``1e-12 * max|a|``.
    """
    a = _as_dense(a)
    m, k = a.shape
    if m < k:
        raise InvalidArgumentError(f"qr_decompose needs rows >= cols, got {m}x{k}")
    q, r = np.linalg.qr(a)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    q *= signs
    r *= signs[:, None]
    threshold = RANK_TOL * (np.abs(a).max() if a.size else 0.0)
    diag = np.diag(r)
    bad = np.flatnonzero((diag < threshold) | (diag == 0.0))
    if bad.size:
        raise RankDeficiencyError(int(bad[0]))
    return q, np.triu(r)


def _orthonormalize(y: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Orthonormalize ``y``, refilling dependent columns from ``rng``."""
    refilled = False
    y = y.copy()
    for _ in range(4 * y.shape[1] + 8):
        try:
            q, _ = qr_decompose(y)
            return q, refilled
        except RankDeficiencyError as exc:
            refilled = True
            scale = max(np.abs(y).max(), 1.0)
            y[:, exc.column] = scale * rng.standard_normal(y.shape[0])
    raise NonConvergenceError("could not orthonormalize after repeated refills")


def _check_symmetric(phi) -> None:
    if scipy.sparse.issparse(phi):
        diff = abs(phi - phi.T)
        asym = diff.max() if diff.nnz else 0.0
        scale = abs(phi).max() if phi.nnz else 0.0
    else:
        asym = np.abs(phi - phi.T).max() if phi.size else 0.0
        scale = np.abs(phi).max() if phi.size else 0.0
    if asym > 1e-10 * max(1.0, scale):
        raise InvalidArgumentError(f"matrix is not symmetric (max asymmetry {asym:.3g})")


def power_qr(phi, k: int, iterations: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal iteration: ``iterations`` rounds of multiply-then-QR.

    ``phi`` may be a dense array or a scipy sparse matrix. Columns that
    collapse (input rank below ``k``) are refilled with fresh Gaussian
    entries and a :class:`DegenerateSubspaceWarning` is emitted once.
    """
    if not scipy.sparse.issparse(phi):
        phi = _as_dense(phi)
    ell = phi.shape[0]
    if phi.shape != (ell, ell):
        raise InvalidArgumentError("power_qr needs a square matrix")
    if not 1 <= k <= ell:
        raise InvalidArgumentError(f"need 1 <= k <= {ell}, got k={k}")
    if iterations < 1:
        raise InvalidArgumentError("iterations must be >= 1")
    _check_symmetric(phi)

    q, degenerate = _orthonormalize(rng.standard_normal((ell, k)), rng)
    for _ in range(iterations):
        q, refilled = _orthonormalize(np.asarray(phi @ q), rng)
        degenerate |= refilled
    if degenerate:
        warnings.warn(
            "orthogonal iteration lost rank; degenerate columns were re-randomized",
            DegenerateSubspaceWarning,
            stacklevel=2,
        )
    return q


def _check_orthonormal(v: np.ndarray, name: str) -> None:
    gram = v.T @ v
    err = np.abs(gram - np.eye(v.shape[1])).max() if v.size else 0.0
    if err > ORTHO_TOL:
        raise InvalidArgumentError(f"{name} columns are not orthonormal (error {err:.3g})")


def subspace_distance(v: np.ndarray, vhat: np.ndarray) -> float:
    """Sine of the largest principal angle between span(v) and span(vhat)."""
    v = _as_dense(v)
    vhat = _as_dense(vhat)
    if v.shape != vhat.shape:
        raise InvalidArgumentError(f"shape mismatch {v.shape} vs {vhat.shape}")
    _check_orthonormal(v, "v")
    _check_orthonormal(vhat, "vhat")
    # ||(I - P_vhat) v||_2 == ||v^T vhat_perp||_2 and stays accurate for small angles
    resid = v - vhat @ (vhat.T @ v)
    if not resid.size:
        return 0.0
    top = np.linalg.norm(resid, 2)
    return float(min(1.0, max(0.0, top)))


def _normalize_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.abs(u).argmax(axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, v * signs


def truncated_svd(a, k: int) -> SvdResult:
    """Top-``k`` singular triplets of a dense or sparse matrix.

    Small problems go through LAPACK; larger ones with few requested triplets
    use ARPACK with a fixed start vector so results are reproducible.
    """
    m, n = a.shape
    if not 1 <= k <= min(m, n):
        raise InvalidArgumentError(f"need 1 <= k <= {min(m, n)}, got k={k}")
    use_arpack = k < min(m, n) // 4 and min(m, n) > 200
    try:
        if use_arpack:
            op = a.to_scipy() if isinstance(a, SparseColMatrix) else _as_dense(a)
            v0 = np.random.default_rng(0).standard_normal(min(m, n))
            u, s, vt = scipy.sparse.linalg.svds(op, k=k, v0=v0, tol=0, maxiter=20 * min(m, n))
            order = np.argsort(s)[::-1]
            u, s, vt = u[:, order], s[order], vt[order]
        else:
            u, s, vt = np.linalg.svd(_as_dense(a), full_matrices=False)
            u, s, vt = u[:, :k], s[:k], vt[:k]
    except (np.linalg.LinAlgError, scipy.sparse.linalg.ArpackNoConvergence) as exc:
        raise NonConvergenceError(f"SVD did not converge: {exc}") from exc
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u)) and np.all(np.isfinite(vt))):
        raise NonConvergenceError("SVD produced non-finite values")
    u, v = _normalize_signs(u, vt.T)
    return SvdResult(np.ascontiguousarray(u), np.maximum(s, 0.0), np.ascontiguousarray(v))


def upper_tri_inverse(r: np.ndarray) -> np.ndarray:
    r = _as_dense(r)
    k = r.shape[0]
    if r.shape != (k, k):
        raise InvalidArgumentError("upper_tri_inverse needs a square matrix")
    threshold = RANK_TOL * (np.abs(r).max() if r.size else 0.0)
    diag = np.abs(np.diag(r))
    bad = np.flatnonzero((diag <= threshold) | (diag == 0.0))
    if bad.size:
        raise SingularMatrixError(int(bad[0]))
    return scipy.linalg.solve_triangular(r, np.eye(k), lower=False)

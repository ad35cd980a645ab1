"""Synthetic ground truth, the noisy Bernoulli observation model and file formats.

Two text formats live here:

* the column stream (``smcs 1``), read strictly once, column after column;
* the dense matrix file (``smcd 1``) used for ground truth and oracle output.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import InvalidArgumentError, NonConvergenceError, StreamParseError
from .linalg import SparseColMatrix, SparseColumn, SvdResult, truncated_svd

STREAM_MAGIC = "smcs"
DENSE_MAGIC = "smcd"
FORMAT_VERSION = "1"


@dataclass(frozen=True)
class GroundTruth:
    m: int
    n: int
    k: int
    matrix: np.ndarray
    svd: SvdResult


@dataclass(frozen=True)
class NoiseSpec:
    amplitude: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.amplitude < 1.0:
            raise InvalidArgumentError(f"noise amplitude must lie in [0, 1), got {self.amplitude}")


@dataclass(frozen=True)
class StreamHeader:
    m: int
    n: int
    version: str = FORMAT_VERSION


def gen_low_rank(m: int, n: int, k: int, seed: int) -> GroundTruth:
    """Average of ``k`` outer products of uniform [0, 1] vectors.

    Every entry stays in [0, 1] and the rank is exactly ``k`` almost surely.
    """
    if not (1 <= k and 2 * k <= min(m, n)):
        raise InvalidArgumentError(f"need 1 <= k <= min(m, n)/2, got m={m}, n={n}, k={k}")
    rng = np.random.default_rng(seed)
    left = rng.random((m, k))
    right = rng.random((n, k))
    matrix = np.clip(left @ right.T / k, 0.0, 1.0)
    svd = truncated_svd(matrix, k)
    fro = np.linalg.norm(matrix)
    if np.linalg.norm(matrix - svd.reconstruct()) > 1e-8 * fro:
        raise NonConvergenceError("rank-k factorization of the ground truth is inaccurate")
    if fro**2 < 0.01 * m * n:
        raise NonConvergenceError("generated matrix has too little energy")
    return GroundTruth(m, n, k, matrix, svd)


def ground_truth_from_matrix(matrix: np.ndarray, k: int) -> GroundTruth:
    """Wrap an existing dense matrix (e.g. read from disk) as a GroundTruth."""
    matrix = np.asarray(matrix, dtype=np.float64)
    m, n = matrix.shape
    return GroundTruth(m, n, k, matrix, truncated_svd(matrix, k))


def apply_noise(gt: GroundTruth, spec: NoiseSpec) -> np.ndarray:
    """Return M + X with X uniform on [-a, a], a = sigma * min(M, 1 - M)."""
    if spec.amplitude == 0.0:
        return gt.matrix.copy()
    rng = np.random.default_rng(spec.seed)
    half_width = spec.amplitude * np.minimum(gt.matrix, 1.0 - gt.matrix)
    noise = rng.uniform(-1.0, 1.0, size=gt.matrix.shape) * half_width
    # clip only absorbs round-off; the law already keeps M + X inside [0, 1]
    return np.clip(gt.matrix + noise, 0.0, 1.0)


def sample_entries(y: np.ndarray, delta: float, seed: int) -> SparseColMatrix:
    """Keep each entry independently with probability ``delta``."""
    if not 0.0 < delta <= 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1], got {delta}")
    y = np.asarray(y, dtype=np.float64)
    if y.size and (y.min() < 0.0 or y.max() > 1.0):
        raise InvalidArgumentError("entries must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    mask = rng.random(y.shape) < delta
    return SparseColMatrix.from_dense(y, mask)


def shuffle_columns(a: SparseColMatrix, seed: int) -> tuple[SparseColMatrix, np.ndarray]:
    """Randomly permute columns; returns the matrix and the permutation used."""
    perm = np.random.default_rng(seed).permutation(a.n)
    return SparseColMatrix.from_columns(a.m, (a.column(j) for j in perm)), perm


def format_value(x: float) -> str:
    """Shortest round-trip positional decimal (``1.0`` -> ``1``)."""
    return np.format_float_positional(float(x), unique=True, trim="-")


def stream_write(a: SparseColMatrix, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{STREAM_MAGIC} {FORMAT_VERSION}\n{a.m} {a.n}\n")
        for t, col in enumerate(a.columns()):
            lines = [f"c {t} {col.nnz}"]
            lines.extend(f"{r} {format_value(v)}" for r, v in zip(col.rows.tolist(), col.values))
            fh.write("\n".join(lines) + "\n")
        fh.write("end\n")


class ColumnStream:
    """One-pass iterator over the columns of a stream file.

    Columns come out strictly in file order. Iterating again after the first
    pass yields nothing: exhaustion is permanent and the file is closed.
    """

    def __init__(self, path: str | os.PathLike):
        self._fh: io.TextIOBase | None = open(path, "r", encoding="utf-8")
        self._line = 0
        self.header = self._read_header()
        self.columns_read = 0
        self._gen = self._columns()

    def _next_line(self) -> str:
        raw = self._fh.readline()
        self._line += 1
        if not raw:
            raise StreamParseError(self._line, "unexpected end of file")
        return raw.rstrip("\n")

    def _read_header(self) -> StreamHeader:
        first = self._next_line().split(" ")
        if first != [STREAM_MAGIC, FORMAT_VERSION]:
            raise StreamParseError(self._line, f"expected '{STREAM_MAGIC} {FORMAT_VERSION}' header")
        dims = self._ints(self._next_line(), 2)
        if min(dims) < 1:
            raise StreamParseError(self._line, "dimensions must be >= 1")
        return StreamHeader(dims[0], dims[1])

    def _ints(self, text: str, count: int) -> list[int]:
        parts = text.split(" ")
        if len(parts) != count:
            raise StreamParseError(self._line, f"expected {count} integers, got {text!r}")
        try:
            return [int(p) for p in parts]
        except ValueError:
            raise StreamParseError(self._line, f"bad integer in {text!r}") from None

    def _columns(self) -> Iterator[SparseColumn]:
        m, n = self.header.m, self.header.n
        for t in range(n):
            tag, *rest = self._next_line().split(" ")
            if tag != "c" or len(rest) != 2:
                raise StreamParseError(self._line, f"expected column record 'c {t} <nnz>'")
            idx, nnz = self._ints(" ".join(rest), 2)
            if idx != t:
                raise StreamParseError(self._line, f"column index {idx} out of sequence (expected {t})")
            if not 0 <= nnz <= m:
                raise StreamParseError(self._line, f"entry count {nnz} out of range")
            rows = np.empty(nnz, dtype=np.int64)
            vals = np.empty(nnz, dtype=np.float64)
            prev = -1
            for i in range(nnz):
                parts = self._next_line().split(" ")
                if len(parts) != 2:
                    raise StreamParseError(self._line, "expected '<row> <value>'")
                try:
                    r, v = int(parts[0]), float(parts[1])
                except ValueError:
                    raise StreamParseError(self._line, "bad row or value") from None
                if not 0 <= r < m:
                    raise StreamParseError(self._line, f"row index {r} out of range")
                if r <= prev:
                    raise StreamParseError(self._line, "row indices must be strictly increasing")
                if not 0.0 <= v <= 1.0:
                    raise StreamParseError(self._line, f"value {parts[1]} outside [0, 1]")
                rows[i], vals[i], prev = r, v, r
            self.columns_read += 1
            yield SparseColumn(rows, vals)
        if self._next_line() != "end":
            raise StreamParseError(self._line, "expected 'end'")
        self.close()

    def __iter__(self) -> "ColumnStream":
        return self

    def __next__(self) -> SparseColumn:
        return next(self._gen)

    @property
    def exhausted(self) -> bool:
        return self._fh is None

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def stream_read(path: str | os.PathLike) -> tuple[StreamHeader, ColumnStream]:
    stream = ColumnStream(path)
    return stream.header, stream


def read_sparse(path: str | os.PathLike) -> SparseColMatrix:
    """Load a whole stream file into memory (oracle and shuffling only)."""
    with ColumnStream(path) as stream:
        return SparseColMatrix.from_columns(stream.header.m, list(stream))


def write_dense(matrix: np.ndarray, path: str | os.PathLike) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{DENSE_MAGIC} {FORMAT_VERSION}\n{matrix.shape[0]} {matrix.shape[1]}\n")
        for row in matrix:
            fh.write(" ".join(format_value(v) for v in row) + "\n")
        fh.write("end\n")


def parse_matrix_block(lines: list[str], start: int, rows: int, cols: int) -> np.ndarray:
    """Parse ``rows`` lines of ``cols`` floats; ``start`` is the 1-based line number."""
    out = np.empty((rows, cols))
    for i in range(rows):
        if i >= len(lines):
            raise StreamParseError(start + i, "unexpected end of file")
        parts = lines[i].split(" ") if cols else []
        if len(parts) != cols:
            raise StreamParseError(start + i, f"expected {cols} values")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise StreamParseError(start + i, "bad numeric value") from None
        if not np.all(np.isfinite(out[i])):
            raise StreamParseError(start + i, "non-finite value")
    return out


def read_dense(path: str | os.PathLike) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != f"{DENSE_MAGIC} {FORMAT_VERSION}":
        raise StreamParseError(1, f"expected '{DENSE_MAGIC} {FORMAT_VERSION}' header")
    try:
        m, n = (int(p) for p in lines[1].split(" "))
    except (IndexError, ValueError):
        raise StreamParseError(2, "expected '<m> <n>'") from None
    matrix = parse_matrix_block(lines[2:], 3, m, n)
    if len(lines) != m + 3 or lines[m + 2] != "end":
        raise StreamParseError(m + 3, "expected 'end'")
    return matrix

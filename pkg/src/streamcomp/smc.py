"""One-pass streaming matrix completion.

The first ``ell`` columns form a batch that yields reference columns ``W``;
every later column is projected on ``W`` once and then discarded. Only
O(k(m + n)) values survive the batch phase: ``W``, the accumulator ``I``
and one k-vector per consumed column.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    DegenerateSubspaceWarning,
    InsufficientDataError,
    InvalidArgumentError,
    RankDeficiencyError,
    SequencingError,
    SingularFactorError,
    SingularMatrixError,
    StateError,
)
from .linalg import SparseColMatrix, SparseColumn, clamp, qr_decompose, upper_tri_inverse
from .spca import SpcaConfig, estimate_delta, spca
from .split import SplitParams, column_rng, split_column, split_matrix

PHASES = ("batch", "stream", "finalize")

# tags mixed into the run seed so each random consumer gets its own stream
_BATCH_SPLIT_TAG = 1
_SPCA_TAG = 2
_STREAM_TAG = 3


def suggest_ell(k: int, delta: float, m: int) -> int:
    """Batch size ``max(ceil(k / (delta ln m)), ceil(4 k ln m))``."""
    if m < 2:
        raise InvalidArgumentError("suggest_ell needs m >= 2")
    log_m = math.log(m)
    return max(math.ceil(k / (delta * log_m)), math.ceil(4 * k * log_m))


@dataclass(frozen=True)
class SmcConfig:
    k: int
    ell: int
    seed: int = 0
    trim_constant: float = 10.0
    b2_row_cap: int = 2
    b2_col_multiplier: float = 10.0

    def __post_init__(self):
        if not 1 <= self.k <= self.ell:
            raise InvalidArgumentError(f"need 1 <= k <= ell, got k={self.k}, ell={self.ell}")


@dataclass
class ResourceReport:
    """Stored-value and operation counters.

    Sparse (index, value) pairs and dense reals count 1 each; a multiply-add
    counts as one flop. ``index_bits`` estimates the extra bits needed for
    sparse row indices at the sparse peak.
    """

    peak_sparse_entries: int = 0
    peak_dense_values: int = 0
    peak_total: int = 0
    current_sparse: int = 0
    current_dense: int = 0
    flops: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0))
    columns_consumed: int = 0
    batch_peak_sparse: int = 0
    stream_peak_sparse: int = 0
    max_column_nnz: int = 0
    phi_nnz: int = 0
    index_bits: int = 0
    phase: str = "batch"
    frozen: bool = False

    def _check(self) -> None:
        if self.frozen:
            raise StateError("resource counters are frozen")

    def _update_peaks(self) -> None:
        self.peak_sparse_entries = max(self.peak_sparse_entries, self.current_sparse)
        self.peak_dense_values = max(self.peak_dense_values, self.current_dense)
        self.peak_total = max(self.peak_total, self.current_sparse + self.current_dense)
        if self.phase == "batch":
            self.batch_peak_sparse = max(self.batch_peak_sparse, self.current_sparse)
        elif self.phase == "stream":
            self.stream_peak_sparse = max(self.stream_peak_sparse, self.current_sparse)

    def alloc_sparse(self, count: int) -> None:
        self._check()
        self.current_sparse += int(count)
        self._update_peaks()

    def release_sparse(self, count: int) -> None:
        self._check()
        self.current_sparse -= int(count)
        if self.current_sparse < 0:
            raise StateError("released more sparse storage than allocated")

    def alloc_dense(self, count: int) -> None:
        self._check()
        self.current_dense += int(count)
        self._update_peaks()

    def release_dense(self, count: int) -> None:
        self._check()
        self.current_dense -= int(count)
        if self.current_dense < 0:
            raise StateError("released more dense storage than allocated")

    def add_flops(self, phase: str, count: int) -> None:
        self._check()
        self.flops[phase] += int(count)

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    def as_dict(self) -> dict[str, int]:
        return {
            "peak_sparse_entries": self.peak_sparse_entries,
            "peak_dense_values": self.peak_dense_values,
            "peak_total": self.peak_total,
            "flops_batch": self.flops["batch"],
            "flops_stream": self.flops["stream"],
            "flops_finalize": self.flops["finalize"],
            "columns_consumed": self.columns_consumed,
            "batch_peak_sparse": self.batch_peak_sparse,
            "stream_peak_sparse": self.stream_peak_sparse,
            "max_column_nnz": self.max_column_nnz,
            "phi_nnz": self.phi_nnz,
            "index_bits": self.index_bits,
        }


@dataclass
class SmcState:
    config: SmcConfig
    m: int
    delta_hat: float
    w: np.ndarray
    i_hat: np.ndarray
    resources: ResourceReport
    n_expected: int | None = None
    phase: str = "streaming"
    warnings: list[str] = field(default_factory=list)
    _v_rows: np.ndarray = field(default=None, repr=False)

    @property
    def columns_consumed(self) -> int:
        return self.resources.columns_consumed

    @property
    def v_rows(self) -> np.ndarray:
        """Row estimates for the columns consumed so far (view, columns_consumed x k)."""
        return self._v_rows[: self.columns_consumed]

    def _append_v_row(self, row: np.ndarray) -> None:
        t = self.columns_consumed
        if t == self._v_rows.shape[0]:
            grown = np.zeros((max(1, 2 * t), self.config.k))
            grown[:t] = self._v_rows
            self.resources.alloc_dense(grown.size)
            self.resources.release_dense(self._v_rows.size)
            self._v_rows = grown
        self._v_rows[t] = row


@dataclass
class CompletionResult:
    u_hat: np.ndarray
    v_hat: np.ndarray
    r_hat: np.ndarray
    resources: ResourceReport
    delta_hat: float
    effective_rank: int
    warnings: list[str] = field(default_factory=list)

    @property
    def rank_deficient(self) -> bool:
        return self.effective_rank < self.u_hat.shape[1]


def _record_warnings(caught, sink: list[str]) -> None:
    for w in caught:
        if issubclass(w.category, DegenerateSubspaceWarning):
            sink.append(str(w.message))
        else:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)


def init_batch(batch: SparseColMatrix, config: SmcConfig, n_expected: int | None = None) -> SmcState:
    """Process the first ``ell`` columns and enter the streaming phase."""
    if batch.n != config.ell:
        raise InvalidArgumentError(f"batch has {batch.n} columns, expected ell={config.ell}")
    if n_expected is not None and n_expected < config.ell:
        raise InvalidArgumentError(f"ell={config.ell} exceeds n={n_expected}")
    m, k = batch.m, config.k
    meter = ResourceReport()
    notes: list[str] = []
    meter.alloc_sparse(batch.nnz)
    meter.max_column_nnz = int(batch.col_counts().max(initial=0))

    delta_hat = estimate_delta(batch)
    copies = split_matrix(batch, SplitParams(4, 4, delta_hat, seed=_mix(config.seed, _BATCH_SPLIT_TAG)))
    meter.alloc_sparse(sum(c.nnz for c in copies))
    b1, b2, b3, b4 = copies

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        q = spca(
            b1,
            SpcaConfig(k, trim_constant=config.trim_constant),
            np.random.default_rng([config.seed, _SPCA_TAG]),
            delta_hat=delta_hat,
            meter=meter,
        )
    _record_warnings(caught, notes)

    # keep only light rows, then only columns below the density cap
    trimmed = b2.drop_rows(b2.row_counts() > config.b2_row_cap)
    trimmed = trimmed.drop_columns(trimmed.col_counts() > config.b2_col_multiplier * m * delta_hat)
    meter.alloc_sparse(trimmed.nnz)
    if trimmed.nnz == 0:
        notes.append("reference batch is empty after trimming; W is zero")

    w = np.asarray(trimmed.to_scipy() @ q)
    meter.alloc_dense(w.size)
    meter.add_flops("batch", trimmed.nnz * k)

    capacity = n_expected if n_expected is not None else 2 * config.ell
    v_rows = np.zeros((capacity, k))
    meter.alloc_dense(v_rows.size)
    v_rows[: config.ell] = np.asarray(b3.to_scipy().T @ w)
    meter.add_flops("batch", b3.nnz * k)

    i_hat = np.asarray(b4.to_scipy() @ v_rows[: config.ell])
    meter.alloc_dense(i_hat.size)
    meter.add_flops("batch", b4.nnz * k)

    meter.index_bits = meter.batch_peak_sparse * max(1, math.ceil(math.log2(max(m, 2))))
    # batch-only artifacts leave memory: the raw batch, its copies, the trimmed copy and Q
    meter.release_sparse(batch.nnz + sum(c.nnz for c in copies) + trimmed.nnz)
    meter.release_dense(q.size)
    meter.columns_consumed = config.ell
    meter.phase = "stream"

    return SmcState(
        config=config,
        m=m,
        delta_hat=delta_hat,
        w=w,
        i_hat=i_hat,
        resources=meter,
        n_expected=n_expected,
        warnings=notes,
        _v_rows=v_rows,
    )


def _mix(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1, dtype=np.uint64)[0])


def ingest_column(state: SmcState, col: SparseColumn, t: int) -> SmcState:
    """Consume column ``t``: one row estimate plus a rank-1 update of I."""
    if state.phase != "streaming":
        raise StateError(f"cannot ingest a column in phase '{state.phase}'")
    if t != state.columns_consumed:
        raise SequencingError(f"expected column {state.columns_consumed}, got {t}")
    if state.n_expected is not None and t >= state.n_expected:
        raise SequencingError(f"column {t} exceeds the declared n={state.n_expected}")
    if col.nnz and (col.rows.max() >= state.m or col.rows.min() < 0):
        raise InvalidArgumentError("row index out of range")
    meter, k = state.resources, state.config.k
    meter.alloc_sparse(col.nnz)
    meter.max_column_nnz = max(meter.max_column_nnz, col.nnz)

    rng = column_rng(_mix(state.config.seed, _STREAM_TAG), t)
    first, second = split_column(col, SplitParams(2, 4, state.delta_hat), rng)
    meter.alloc_sparse(first.nnz + second.nnz)
    meter.release_sparse(col.nnz)

    v_t = first.values @ state.w[first.rows] if first.nnz else np.zeros(k)
    if second.nnz:
        state.i_hat[second.rows] += np.outer(second.values, v_t)
    meter.add_flops("stream", (first.nnz + second.nnz) * k)
    meter.release_sparse(first.nnz + second.nnz)

    state._append_v_row(v_t)
    meter.columns_consumed += 1
    return state


def gram_schmidt_R(v_hat: np.ndarray) -> np.ndarray:
    """``R`` with ``v_hat @ R`` orthonormal (inverse of the QR triangle)."""
    try:
        _, r = qr_decompose(v_hat)
    except RankDeficiencyError as exc:
        raise SingularFactorError(exc.column, f"row-vector estimate is rank deficient at column {exc.column}") from None
    r_hat = upper_tri_inverse(r)
    basis = v_hat @ r_hat
    err = np.abs(basis.T @ basis - np.eye(r.shape[0]))
    if err.max() > 1e-8:
        worst = int(np.unravel_index(err.argmax(), err.shape)[1])
        raise SingularFactorError(worst, f"row-vector estimate is ill-conditioned at column {worst}")
    return r_hat


def finalize(state: SmcState) -> CompletionResult:
    """Orthonormalize the row estimates and form the left factor."""
    if state.phase != "streaming":
        raise StateError(f"cannot finalize in phase '{state.phase}'")
    if state.n_expected is not None and state.columns_consumed != state.n_expected:
        raise SequencingError(
            f"finalize after {state.columns_consumed} of {state.n_expected} columns"
        )
    meter, k, m = state.resources, state.config.k, state.m
    meter.phase = "finalize"
    v_hat = state.v_rows.copy()
    n = v_hat.shape[0]
    meter.alloc_dense(v_hat.size)
    meter.release_dense(state._v_rows.size)

    keep = list(range(k))
    r_sub = None
    while keep:
        try:
            r_sub = gram_schmidt_R(v_hat[:, keep])
            break
        except SingularMatrixError as exc:
            dropped = keep.pop(exc.index if exc.index < len(keep) else -1)
            state.warnings.append(f"dropped dependent row-vector column {dropped}")
    r_hat = np.zeros((k, k))
    if r_sub is not None:
        r_hat[np.ix_(keep, keep)] = r_sub
    kk = len(keep)
    meter.alloc_dense(k * k)
    meter.add_flops("finalize", 2 * n * kk * kk + kk**3)

    u_hat = (4.0 / state.delta_hat) * (state.i_hat @ r_hat @ r_hat.T)
    meter.alloc_dense(u_hat.size)
    meter.add_flops("finalize", 2 * m * k * k)
    meter.release_dense(state.i_hat.size + state.w.size)
    meter.frozen = True
    state.phase = "finalized"
    return CompletionResult(
        u_hat=u_hat,
        v_hat=v_hat,
        r_hat=r_hat,
        resources=meter,
        delta_hat=state.delta_hat,
        effective_rank=kk,
        warnings=list(state.warnings),
    )


def materialize(result: CompletionResult) -> np.ndarray:
    """Dense completed matrix ``clamp(U V^T, 0, 1)``."""
    return clamp(result.u_hat @ result.v_hat.T, 0.0, 1.0)


def run_one_pass(
    stream: Iterable[SparseColumn],
    config: SmcConfig,
    m: int | None = None,
    n: int | None = None,
) -> CompletionResult:
    """Drive the full pipeline over a column iterator, touching each column once.

    ``m`` and ``n`` default to ``stream.header`` when the stream has one.
    """
    header = getattr(stream, "header", None)
    if m is None:
        if header is None:
            raise InvalidArgumentError("row count m is required for a header-less stream")
        m = header.m
    if n is None and header is not None:
        n = header.n
    if n is not None and config.ell > n:
        raise InsufficientDataError(f"ell={config.ell} exceeds the {n} available columns")

    columns: Iterator[SparseColumn] = iter(stream)
    batch = []
    for col in columns:
        batch.append(col)
        if len(batch) == config.ell:
            break
    if len(batch) < config.ell:
        raise InsufficientDataError(f"stream ended after {len(batch)} columns; ell={config.ell}")

    state = init_batch(SparseColMatrix.from_columns(m, batch), config, n_expected=n)
    del batch
    for col in columns:
        ingest_column(state, col, state.columns_consumed)
    if n is not None and state.columns_consumed != n:
        raise InsufficientDataError(f"stream yielded {state.columns_consumed} columns, header says {n}")
    return finalize(state)

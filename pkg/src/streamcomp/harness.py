"""Experiment plumbing: synthetic runs, the full-memory oracle, metrics and sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InvalidArgumentError, RankDeficiencyError, SmcError, StreamParseError
from .linalg import SparseColMatrix, SparseColumn, clamp, qr_decompose, subspace_distance, truncated_svd
from .observe import (
    GroundTruth,
    NoiseSpec,
    apply_noise,
    format_value,
    gen_low_rank,
    parse_matrix_block,
    sample_entries,
)
from .smc import CompletionResult, SmcConfig, materialize, run_one_pass, suggest_ell

log = logging.getLogger(__name__)

FACTORS_MAGIC = "smcf 1"


@dataclass(frozen=True)
class ExperimentConfig:
    m: int
    n: int
    k: int
    delta: float
    noise: float = 0.0
    ell: int | str = "auto"
    seed: int = 0
    output_format: str = "json"

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise InvalidArgumentError("m and n must be >= 1")
        if not 1 <= self.k or 2 * self.k > min(self.m, self.n):
            raise InvalidArgumentError(f"need 1 <= k <= min(m, n)/2, got k={self.k}")
        if not 0.0 < self.delta <= 1.0:
            raise InvalidArgumentError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0.0 <= self.noise < 1.0:
            raise InvalidArgumentError(f"noise must lie in [0, 1), got {self.noise}")
        if self.ell != "auto" and not (isinstance(self.ell, int) and self.k <= self.ell <= self.n):
            raise InvalidArgumentError(f"ell must be 'auto' or an integer in [k, n], got {self.ell!r}")
        if self.output_format not in ("json", "csv"):
            raise InvalidArgumentError(f"unknown output format {self.output_format!r}")

    def resolved_ell(self) -> int:
        if self.ell != "auto":
            return int(self.ell)
        return min(self.n, max(self.k, suggest_ell(self.k, self.delta, self.m)))

    def smc_config(self) -> SmcConfig:
        return SmcConfig(k=self.k, ell=self.resolved_ell(), seed=self.seed)


def regime_warnings(m: int, n: int, k: int, delta: float) -> list[str]:
    """Finite-scale reading of the sampling-rate assumption (factor-of-4 margins)."""
    out = []
    log_m = math.log(max(m, 2))
    needed = 4 * k * max(k / n, log_m**2 / m, k * log_m / m)
    if delta < needed:
        out.append(f"delta={delta} is below the recommended regime (about {needed:.3g})")
    return out


@dataclass(frozen=True)
class DerivedSeeds:
    truth: int
    noise: int
    sample: int


def derive_seeds(seed: int) -> DerivedSeeds:
    truth, noise, sample = np.random.SeedSequence(seed).generate_state(3, dtype=np.uint32)
    return DerivedSeeds(int(truth), int(noise), int(sample))


def generate(m: int, n: int, k: int, delta: float, noise: float, seed: int) -> tuple[GroundTruth, SparseColMatrix]:
    """Ground truth plus its noisy, subsampled observation."""
    seeds = derive_seeds(seed)
    gt = gen_low_rank(m, n, k, seeds.truth)
    y = apply_noise(gt, NoiseSpec(noise, seeds.noise))
    return gt, sample_entries(y, delta, seeds.sample)


def oracle_complete(a: SparseColMatrix, delta: float, k: int) -> np.ndarray:
    """Full-memory spectral baseline: clamp of the rank-k truncation of A / delta."""
    if not 0.0 < delta <= 1.0:
        raise InvalidArgumentError(f"delta must lie in (0, 1], got {delta}")
    svd = truncated_svd(a, k)
    return clamp(svd.reconstruct() / delta, 0.0, 1.0)


@dataclass
class EvalReport:
    rel_mse: float
    abs_mse: float
    v_subspace_error: float | None = None
    oracle_rel_mse: float | None = None
    resources: dict | None = None
    wall_time: float | None = None


def _v_error(gt: GroundTruth, v_hat: np.ndarray) -> float:
    k = v_hat.shape[1]
    try:
        basis, _ = qr_decompose(v_hat)
    except RankDeficiencyError:
        # a span of lower dimension cannot contain the k-dimensional target
        return 1.0
    return subspace_distance(gt.svd.v[:, :k], basis)


def rel_mse(truth: np.ndarray, estimate: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - truth) ** 2 / np.linalg.norm(truth) ** 2)


def evaluate(gt: GroundTruth, m_hat: np.ndarray, result: CompletionResult | None = None) -> EvalReport:
    m_hat = np.asarray(m_hat, dtype=np.float64)
    if m_hat.shape != gt.matrix.shape:
        raise InvalidArgumentError(f"estimate shape {m_hat.shape} does not match truth {gt.matrix.shape}")
    err = float(np.linalg.norm(m_hat - gt.matrix) ** 2)
    fro = float(np.linalg.norm(gt.matrix) ** 2)
    report = EvalReport(rel_mse=err / fro, abs_mse=err / (gt.m * gt.n))
    if result is not None:
        report.v_subspace_error = _v_error(gt, result.v_hat)
        report.resources = result.resources.as_dict()
    return report


def run_experiment(cfg: ExperimentConfig, with_oracle: bool = False, timing: bool = False) -> EvalReport:
    for note in regime_warnings(cfg.m, cfg.n, cfg.k, cfg.delta):
        log.warning(note)
    gt, a = generate(cfg.m, cfg.n, cfg.k, cfg.delta, cfg.noise, cfg.seed)
    start = time.perf_counter()
    result = run_one_pass(a.columns(), cfg.smc_config(), m=cfg.m, n=cfg.n)
    elapsed = time.perf_counter() - start
    report = evaluate(gt, materialize(result), result)
    if with_oracle:
        report.oracle_rel_mse = rel_mse(gt.matrix, oracle_complete(a, cfg.delta, cfg.k))
    if timing:
        report.wall_time = elapsed
    return report


@dataclass
class SweepRow:
    config: ExperimentConfig
    report: EvalReport | None = None
    error: str | None = None


def _run_row(args) -> SweepRow:
    cfg, with_oracle, timing = args
    try:
        return SweepRow(cfg, run_experiment(cfg, with_oracle, timing))
    except SmcError as exc:
        return SweepRow(cfg, error=f"{type(exc).__name__}: {exc}")


def sweep(
    configs: Sequence[ExperimentConfig],
    with_oracle: bool = False,
    timing: bool = False,
    workers: int = 1,
) -> list[SweepRow]:
    """Run every config independently; rows come back in input order."""
    if not configs:
        raise InvalidArgumentError("sweep needs at least one config")
    jobs = [(cfg, with_oracle, timing) for cfg in configs]
    if workers <= 1:
        return [_run_row(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_row, jobs))


def parse_sweep_spec(text: str) -> list[ExperimentConfig]:
    """One config per line: ``m n k delta noise ell seed``; ``#`` starts a comment."""
    configs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 7:
            raise StreamParseError(lineno, "expected 'm n k delta noise ell seed'")
        try:
            m, n, k = (int(p) for p in parts[:3])
            delta, noise = float(parts[3]), float(parts[4])
            ell = parts[5] if parts[5] == "auto" else int(parts[5])
            seed = int(parts[6])
        except ValueError:
            raise StreamParseError(lineno, f"bad value in {line!r}") from None
        try:
            configs.append(ExperimentConfig(m, n, k, delta, noise, ell, seed))
        except InvalidArgumentError as exc:
            raise StreamParseError(lineno, str(exc)) from None
    if not configs:
        raise StreamParseError(1, "sweep spec holds no configs")
    return configs


# reports

RESOURCE_FIELDS = (
    "peak_sparse_entries",
    "peak_dense_values",
    "peak_total",
    "flops_batch",
    "flops_stream",
    "flops_finalize",
    "columns_consumed",
)


def _flat(report: EvalReport | None, timing: bool) -> dict:
    row = {"rel_mse": None, "abs_mse": None, "v_subspace_error": None, "oracle_rel_mse": None}
    row.update(dict.fromkeys(RESOURCE_FIELDS))
    if report is not None:
        row.update({k: getattr(report, k) for k in ("rel_mse", "abs_mse", "v_subspace_error", "oracle_rel_mse")})
        if report.resources:
            row.update({k: report.resources[k] for k in RESOURCE_FIELDS})
    if timing:
        row["wall_time"] = None if report is None else report.wall_time
    return row


def sweep_records(rows: Iterable[SweepRow], timing: bool = False) -> list[dict]:
    records = []
    for row in rows:
        cfg = row.config
        rec = {
            "m": cfg.m, "n": cfg.n, "k": cfg.k, "delta": cfg.delta, "noise": cfg.noise,
            "ell": cfg.resolved_ell(), "seed": cfg.seed,
        }
        rec.update(_flat(row.report, timing))
        rec["error"] = row.error
        records.append(rec)
    return records


def report_record(report: EvalReport, timing: bool = False) -> dict:
    return _flat(report, timing)


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(records: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(records[0].keys())
    for rec in records:
        writer.writerow(_csv_cell(v) for v in rec.values())
    return buf.getvalue()


def to_json(records: list[dict] | dict) -> str:
    return json.dumps(records, indent=2) + "\n"


def from_csv(text: str) -> list[dict]:
    """Inverse of :func:`to_csv` for numeric records (empty cell -> None)."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        parsed = {}
        for key, val in rec.items():
            if val == "":
                parsed[key] = None
            else:
                try:
                    parsed[key] = int(val)
                except ValueError:
                    try:
                        parsed[key] = float(val)
                    except ValueError:
                        parsed[key] = val
        out.append(parsed)
    return out


# factors file

@dataclass
class Factors:
    u_hat: np.ndarray
    v_hat: np.ndarray
    r_hat: np.ndarray
    resources: dict = field(default_factory=dict)

    def materialize(self) -> np.ndarray:
        return clamp(self.u_hat @ self.v_hat.T, 0.0, 1.0)


def _block(name: str, a: np.ndarray) -> list[str]:
    lines = [f"{name} {a.shape[0]} {a.shape[1]}"]
    lines.extend(" ".join(format_value(v) for v in row) for row in a)
    return lines


def write_factors(result: CompletionResult, path: str | os.PathLike, v_order: np.ndarray | None = None) -> None:
    """``v_order`` maps stream position -> original column when columns were shuffled."""
    v_hat = result.v_hat
    if v_order is not None:
        v_hat = np.empty_like(result.v_hat)
        v_hat[v_order] = result.v_hat
    lines = [FACTORS_MAGIC]
    lines += _block("uhat", result.u_hat)
    lines += _block("vhat", v_hat)
    lines += _block("rhat", result.r_hat)
    lines.append("resources")
    extras = {"delta_hat": format_value(result.delta_hat), "effective_rank": result.effective_rank}
    for key, val in {**result.resources.as_dict(), **extras}.items():
        lines.append(f"{key} {val}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_factors(path: str | os.PathLike) -> Factors:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != FACTORS_MAGIC:
        raise StreamParseError(1, f"expected '{FACTORS_MAGIC}' header")
    pos = 1
    blocks = {}
    for name in ("uhat", "vhat", "rhat"):
        if pos >= len(lines):
            raise StreamParseError(pos + 1, f"missing '{name}' block")
        parts = lines[pos].split(" ")
        if len(parts) != 3 or parts[0] != name:
            raise StreamParseError(pos + 1, f"expected '{name} <rows> <cols>'")
        try:
            rows, cols = int(parts[1]), int(parts[2])
        except ValueError:
            raise StreamParseError(pos + 1, "bad block dimensions") from None
        blocks[name] = parse_matrix_block(lines[pos + 1 : pos + 1 + rows], pos + 2, rows, cols)
        pos += 1 + rows
    resources = {}
    if pos < len(lines):
        if lines[pos] != "resources":
            raise StreamParseError(pos + 1, "expected 'resources'")
        for i in range(pos + 1, len(lines)):
            parts = lines[i].split(" ")
            if len(parts) != 2:
                raise StreamParseError(i + 1, "expected '<name> <value>'")
            try:
                resources[parts[0]] = int(parts[1])
            except ValueError:
                try:
                    resources[parts[0]] = float(parts[1])
                except ValueError:
                    raise StreamParseError(i + 1, "bad resource value") from None
    u, v, r = blocks["uhat"], blocks["vhat"], blocks["rhat"]
    if u.shape[1] != v.shape[1] or r.shape != (u.shape[1], u.shape[1]):
        raise StreamParseError(1, "factor shapes are inconsistent")
    return Factors(u, v, r, resources)


def resolve_auto_ell(
    columns: Iterator[SparseColumn], k: int, m: int, n: int
) -> tuple[int, list[SparseColumn]]:
    """Pick ell on the fly: buffer columns until the buffer reaches ``suggest_ell``.

    The sampling rate in ``suggest_ell`` is estimated from the buffered columns,
    so no column is read twice.
    """
    buffered: list[SparseColumn] = []
    observed = 0
    for col in columns:
        buffered.append(col)
        observed += col.nnz
        if len(buffered) >= n:
            break
        if len(buffered) >= k and observed:
            rate = observed / (m * len(buffered))
            if len(buffered) >= min(n, suggest_ell(k, rate, max(m, 2))):
                break
    return len(buffered), buffered

"""Command-line front end.

Exit codes: 0 success, 2 invalid arguments, 3 parse error, 4 numerical failure.
"""

from __future__ import annotations

import functools
import itertools
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import harness
from .errors import InvalidArgumentError, SmcError
from .observe import (
    ColumnStream,
    ground_truth_from_matrix,
    read_dense,
    read_sparse,
    shuffle_columns,
    stream_write,
    write_dense,
)
from .smc import SmcConfig, run_one_pass

log = logging.getLogger("streamcomp")


def _guard(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except SmcError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        out.write_text(text, encoding="utf-8")


def _parse_ell(value: str) -> int | str:
    if value == "auto":
        return value
    try:
        ell = int(value)
    except ValueError:
        raise click.BadParameter("expected an integer or 'auto'") from None
    if ell < 1:
        raise click.BadParameter("ell must be >= 1")
    return ell


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress and regime warnings.")
def main(verbose: bool):
    """One-pass streaming matrix completion."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@main.command()
@click.option("--m", "m", type=int, required=True)
@click.option("--n", "n", type=int, required=True)
@click.option("--k", "k", type=int, required=True)
@click.option("--delta", type=float, required=True)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--truth-out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Ground-truth path (default: OUT.truth).")
@_guard
def gen(m, n, k, delta, noise, seed, out, truth_out):
    """Write a synthetic column stream and its dense ground truth."""
    harness.ExperimentConfig(m, n, k, delta, noise, "auto", seed)
    for note in harness.regime_warnings(m, n, k, delta):
        log.warning(note)
    gt, a = harness.generate(m, n, k, delta, noise, seed)
    stream_write(a, out)
    write_dense(gt.matrix, truth_out or out.with_name(out.name + ".truth"))


@main.command()
@click.option("--stream", "stream_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--k", "k", type=int, required=True)
@click.option("--ell", default="auto", show_default=True, help="Batch size or 'auto'.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--shuffle", "shuffle_seed", type=int, default=None,
              help="Permute columns with this seed first (loads the whole file).")
@click.option("--trim-constant", type=float, default=10.0, show_default=True)
@click.option("--b2-row-cap", type=int, default=2, show_default=True)
@click.option("--b2-col-multiplier", type=float, default=10.0, show_default=True)
@_guard
def complete(stream_path, k, ell, seed, out, shuffle_seed, trim_constant, b2_row_cap, b2_col_multiplier):
    """Run one-pass completion and write the factors file."""
    ell = _parse_ell(ell)
    order = None
    if shuffle_seed is not None:
        matrix, order = shuffle_columns(read_sparse(stream_path), shuffle_seed)
        m, n, columns = matrix.m, matrix.n, matrix.columns()
    else:
        stream = ColumnStream(stream_path)
        m, n, columns = stream.header.m, stream.header.n, stream
    if ell == "auto":
        ell, buffered = harness.resolve_auto_ell(iter(columns), k, m, n)
        columns = itertools.chain(buffered, columns)
        log.info("auto batch size: ell=%d", ell)
    if not 1 <= k <= ell:
        raise InvalidArgumentError(f"need 1 <= k <= ell, got k={k}, ell={ell}")
    config = SmcConfig(k, ell, seed, trim_constant, b2_row_cap, b2_col_multiplier)
    result = run_one_pass(columns, config, m=m, n=n)
    for note in result.warnings:
        log.warning(note)
    harness.write_factors(result, out, v_order=order)


@main.command()
@click.option("--stream", "stream_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--delta", type=float, required=True)
@click.option("--k", "k", type=int, required=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@_guard
def oracle(stream_path, delta, k, out):
    """Full-memory spectral baseline on the same stream file."""
    a = read_sparse(stream_path)
    write_dense(harness.oracle_complete(a, delta, k), out)


def _load_estimate(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.readline().rstrip("\n")
    if head == harness.FACTORS_MAGIC:
        return harness.read_factors(path)
    return read_dense(path)


@main.command(name="eval")
@click.option("--truth", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--estimate", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@_guard
def evaluate_cmd(truth, estimate, fmt, out):
    """Compare a factors file or dense estimate against the ground truth."""
    matrix = read_dense(truth)
    est = _load_estimate(estimate)
    if isinstance(est, harness.Factors):
        if est.u_hat.shape[0] != matrix.shape[0] or est.v_hat.shape[0] != matrix.shape[1]:
            raise InvalidArgumentError("factor shapes do not match the ground truth")
        gt = ground_truth_from_matrix(matrix, est.u_hat.shape[1])
        report = harness.evaluate(gt, est.materialize())
        report.v_subspace_error = harness._v_error(gt, est.v_hat)
        report.resources = est.resources or None
    else:
        gt = ground_truth_from_matrix(matrix, 1)
        report = harness.evaluate(gt, np.asarray(est))
    record = harness.report_record(report)
    _emit(harness.to_json(record) if fmt == "json" else harness.to_csv([record]), out)


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="csv", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--oracle/--no-oracle", "with_oracle", default=False, help="Also run the spectral baseline.")
@click.option("--timing", is_flag=True, help="Add wall-clock time (makes output non-reproducible).")
@click.option("--workers", type=int, default=1, show_default=True)
@_guard
def sweep(spec_path, fmt, out, with_oracle, timing, workers):
    """Run one experiment per spec line and emit a table."""
    configs = harness.parse_sweep_spec(spec_path.read_text(encoding="utf-8"))
    rows = harness.sweep(configs, with_oracle=with_oracle, timing=timing, workers=workers)
    records = harness.sweep_records(rows, timing=timing)
    _emit(harness.to_json(records) if fmt == "json" else harness.to_csv(records), out)


if __name__ == "__main__":
    main()

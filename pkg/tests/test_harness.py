import json

import numpy as np
import pytest

from oracles import jacobi_truncation
from streamcomp.errors import InvalidArgumentError, StreamParseError
from streamcomp.harness import (
    EvalReport,
    ExperimentConfig,
    evaluate,
    from_csv,
    generate,
    oracle_complete,
    parse_sweep_spec,
    read_factors,
    regime_warnings,
    rel_mse,
    run_experiment,
    sweep,
    sweep_records,
    to_csv,
    write_factors,
)
from streamcomp.linalg import SparseColMatrix, clamp
from streamcomp.observe import gen_low_rank
from streamcomp.smc import SmcConfig, materialize, run_one_pass, suggest_ell


class TestExperimentConfig:
    def test_auto_ell(self):
        cfg = ExperimentConfig(2000, 2000, 2, 0.05)
        assert cfg.resolved_ell() == suggest_ell(2, 0.05, 2000)

    def test_auto_ell_capped_by_n(self):
        assert ExperimentConfig(1000, 50, 2, 0.01).resolved_ell() == 50

    @pytest.mark.parametrize(
        "kwargs",
        [dict(delta=0.0), dict(delta=1.2), dict(noise=1.0), dict(ell=1), dict(ell=500), dict(k=60)],
    )
    def test_invalid(self, kwargs):
        base = dict(m=100, n=100, k=2, delta=0.1)
        base.update(kwargs)
        with pytest.raises(InvalidArgumentError):
            ExperimentConfig(**base)

    def test_regime_warnings(self):
        assert regime_warnings(100, 100, 2, 0.001)
        assert not regime_warnings(4000, 4000, 2, 0.5)


class TestOracle:
    def test_full_observation_exact(self):
        gt, a = generate(120, 90, 3, 1.0, 0.0, 0)
        assert rel_mse(gt.matrix, oracle_complete(a, 1.0, 3)) <= 1e-12

    def test_full_rank_truncation(self):
        y = np.random.default_rng(1).random((12, 8))
        a = SparseColMatrix.from_dense(y)
        np.testing.assert_allclose(oracle_complete(a, 0.5, 8), clamp(y / 0.5, 0.0, 1.0), atol=1e-12)

    def test_matches_jacobi_truncation(self):
        _, a = generate(30, 20, 2, 0.5, 0.1, 3)
        expected = clamp(jacobi_truncation(a.to_dense(), 2) / 0.5, 0.0, 1.0)
        np.testing.assert_allclose(oracle_complete(a, 0.5, 2), expected, atol=1e-10)


class TestEvaluate:
    def setup_method(self):
        self.gt = gen_low_rank(40, 30, 2, seed=2)

    def test_perfect(self):
        rep = evaluate(self.gt, self.gt.matrix)
        assert rep.rel_mse == 0.0 and rep.abs_mse == 0.0

    def test_zero_estimate(self):
        assert evaluate(self.gt, np.zeros((40, 30))).rel_mse == pytest.approx(1.0, abs=1e-15)

    def test_abs_rel_identity(self):
        est = np.random.default_rng(0).random((40, 30))
        rep = evaluate(self.gt, est)
        scale = np.linalg.norm(self.gt.matrix) ** 2 / (40 * 30)
        assert rep.abs_mse == pytest.approx(rep.rel_mse * scale, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            evaluate(self.gt, np.zeros((30, 40)))

    def test_pure(self):
        est = np.random.default_rng(1).random((40, 30))
        assert evaluate(self.gt, est) == evaluate(self.gt, est)

    def test_subspace_error_from_result(self):
        gt, a = generate(400, 400, 2, 0.3, 0.0, 5)
        result = run_one_pass(a.columns(), SmcConfig(2, 80, seed=1), m=400)
        rep = evaluate(gt, materialize(result), result)
        assert 0.0 <= rep.v_subspace_error <= 1.0
        assert rep.resources["columns_consumed"] == 400


class TestSweep:
    def test_single_row_equals_direct_run(self):
        cfg = ExperimentConfig(200, 200, 2, 0.2, 0.0, 50, 3)
        (row,) = sweep([cfg])
        assert row.error is None
        assert row.report == run_experiment(cfg)

    def test_duplicates_identical(self):
        cfg = ExperimentConfig(200, 200, 2, 0.2, 0.1, "auto", 4)
        first, second = sweep([cfg, cfg])
        assert first.report == second.report

    def test_parallel_matches_serial(self):
        cfgs = [ExperimentConfig(150, 150, 2, 0.3, 0.0, 40, s) for s in range(3)]
        serial = sweep(cfgs)
        parallel = sweep(cfgs, workers=2)
        assert [r.report for r in serial] == [r.report for r in parallel]

    def test_row_failure_recorded(self):
        good = ExperimentConfig(150, 150, 2, 0.3, 0.0, 40, 0)
        # no entries observed at this rate, so the batch is degenerate
        bad = ExperimentConfig(20, 20, 1, 1e-9, 0.0, 5, 0)
        rows = sweep([bad, good])
        assert rows[0].error and rows[0].report is None
        assert rows[1].error is None

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            sweep([])

    def test_csv_json_agree(self):
        cfgs = [ExperimentConfig(150, 150, 2, 0.3, 0.1, "auto", s) for s in range(2)]
        records = sweep_records(sweep(cfgs, with_oracle=True))
        assert from_csv(to_csv(records)) == json.loads(json.dumps(records))

    def test_spec_parsing(self):
        text = "# m n k delta noise ell seed\n500 500 2 0.05 0 auto 1\n\n1000 800 3 0.1 0.2 120 7  # tail\n"
        a, b = parse_sweep_spec(text)
        assert (a.m, a.ell, a.seed) == (500, "auto", 1)
        assert (b.n, b.k, b.noise, b.ell) == (800, 3, 0.2, 120)

    @pytest.mark.parametrize("text, line", [("1 2 3\n", 1), ("# c\n100 100 2 x 0 auto 0\n", 2), ("", 1)])
    def test_spec_errors(self, text, line):
        with pytest.raises(StreamParseError) as info:
            parse_sweep_spec(text)
        assert info.value.line == line


class TestFactorsFile:
    def test_round_trip(self, tmp_path):
        gt, a = generate(60, 50, 2, 0.4, 0.0, 1)
        result = run_one_pass(a.columns(), SmcConfig(2, 20), m=60)
        path = tmp_path / "f.smcf"
        write_factors(result, path)
        back = read_factors(path)
        assert np.array_equal(back.u_hat, result.u_hat)
        assert np.array_equal(back.v_hat, result.v_hat)
        assert np.array_equal(back.r_hat, result.r_hat)
        assert np.array_equal(back.materialize(), materialize(result))
        assert back.resources["columns_consumed"] == 50
        text = path.read_text().splitlines()
        assert text[0] == "smcf 1" and text[1] == "uhat 60 2"
        assert "vhat 50 2" in text and "rhat 2 2" in text and "resources" in text

    def test_bad_header(self, tmp_path):
        path = tmp_path / "x"
        path.write_text("smcz 1\n")
        with pytest.raises(StreamParseError):
            read_factors(path)


def test_eval_report_defaults():
    rep = EvalReport(0.1, 0.01)
    assert rep.oracle_rel_mse is None and rep.wall_time is None

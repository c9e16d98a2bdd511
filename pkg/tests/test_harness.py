"""Tests for harness module."""

import json
import math
from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from factorlab.blocks import build_blocks_1d
from factorlab.config import BatchConfig, GeneratorConfig, load_batch_config
from factorlab.errors import RecipeError
from factorlab.harness import batch, exact_recheck, generate_operator, run, summarize, summarize_blocks
from factorlab.opnorm import OperatorRep, op_norm
from factorlab.seqspace import SpaceSpec, read_matrix, write_matrix


class TestGenerateOperator:
    """Tests for generate_operator recipes."""

    @pytest.mark.unit
    def test_identity_and_zero(self, linf64):
        """Test the deterministic recipes."""
        identity = generate_operator(GeneratorConfig(recipe="identity"), linf64)
        zero = generate_operator(GeneratorConfig(recipe="zero"), linf64)
        np.testing.assert_array_equal(identity.toarray(), np.eye(64))
        assert not zero.toarray().any()
        assert identity.is_sparse

    @pytest.mark.unit
    def test_scaled_identity(self, linf64):
        """Test c·Id."""
        T = generate_operator(GeneratorConfig(recipe="scaled_identity", c=-0.5), linf64)
        np.testing.assert_array_equal(T.toarray(), -0.5 * np.eye(64))

    @pytest.mark.unit
    def test_coordinate_projection_is_diagonal_and_seeded(self, linf64):
        """Test a coordinate projection is a 0/1 diagonal fixed by the seed."""
        recipe = GeneratorConfig(recipe="coordinate_projection", density=0.5)
        first = generate_operator(recipe, linf64, seed=3).toarray()
        again = generate_operator(recipe, linf64, seed=3).toarray()
        other = generate_operator(recipe, linf64, seed=4).toarray()
        np.testing.assert_array_equal(first, again)
        assert not np.array_equal(first, other)
        np.testing.assert_array_equal(first, np.diag(np.diag(first)))
        assert set(np.unique(first)) <= {0.0, 1.0}

    @pytest.mark.unit
    def test_random_rank_k_projection(self):
        """Test the oblique projection is idempotent with rank k."""
        space = SpaceSpec.lp(2.0, 12)
        T = generate_operator(GeneratorConfig(recipe="random_rank_k_projection", k=3), space, seed=1).toarray()
        np.testing.assert_allclose(T @ T, T, atol=1e-8)
        assert np.linalg.matrix_rank(T, tol=1e-8) == 3

    @pytest.mark.unit
    def test_rank_larger_than_dimension(self):
        """Test k > dim is rejected."""
        with pytest.raises(RecipeError):
            generate_operator(GeneratorConfig(recipe="random_rank_k_projection", k=13), SpaceSpec.lp(2.0, 12))

    @pytest.mark.unit
    def test_random_contraction_meets_cap(self):
        """Test the contraction is scaled to the requested norm on ℓ^∞, where the norm is exact."""
        space = SpaceSpec.lp(math.inf, 16)
        T = generate_operator(GeneratorConfig(recipe="random_contraction", norm_cap=0.75), space, seed=2)
        estimate = op_norm(T)
        assert estimate.exact
        assert estimate.upper == pytest.approx(0.75)

    @pytest.mark.unit
    def test_from_file(self, tmp_path):
        """Test a matrix file is read and its shape checked."""
        space = SpaceSpec.lp(1.0, 3)
        path = write_matrix(tmp_path / "T.txt", np.arange(9.0).reshape(3, 3))
        T = generate_operator(GeneratorConfig(recipe="from_file", path=str(path)), space)
        np.testing.assert_array_equal(T.toarray(), read_matrix(path))
        with pytest.raises(RecipeError):
            generate_operator(GeneratorConfig(recipe="from_file", path=str(path)), SpaceSpec.lp(1.0, 4))


class TestRun:
    """Tests for single runs."""

    @pytest.mark.unit
    def test_identity_run_passes(self, make_run_config, tmp_path):
        """Test the identity run passes and writes its report."""
        report = run(make_run_config(), tmp_path)
        assert report.verdict == "pass"
        assert report.failure is None
        assert report.selection.branch == "T"
        assert report.blocks.count == 8
        assert report.blocks.invariant_violations == []

        written = json.loads((tmp_path / "report.json").read_text())
        assert written["verdict"] == "pass"
        assert written["schema_version"] == 1
        assert written["config"]["space"]["p"] == "inf"

    @pytest.mark.unit
    def test_replay_is_byte_identical(self, make_run_config):
        """Test the same config and seed give the same report."""
        config = make_run_config(generator={"recipe": "coordinate_projection", "density": 0.3}, seed=11)
        assert run(config).to_json() == run(config).to_json()

    @pytest.mark.unit
    def test_wall_time_only_when_requested(self, make_run_config):
        """Test wall time stays out of reports by default."""
        assert run(make_run_config()).wall_time_s is None
        assert run(make_run_config(record_wall_time=True)).wall_time_s >= 0

    @pytest.mark.unit
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_coordinate_projections_pass(self, make_run_config, seed):
        """Test coordinate projections factor the identity through T or Id − T."""
        report = run(make_run_config(generator={"recipe": "coordinate_projection", "density": 0.5}, seed=seed))
        assert report.verdict == "pass", report.failure or [c.name for c in report.verification.failed_checks()]

    @pytest.mark.unit
    def test_dimension_too_small_fails_at_plan(self, make_run_config):
        """Test a short truncation is reported as a plan failure."""
        report = run(make_run_config(space={"kind": "lp", "p": "inf", "dim": 20}))
        assert report.verdict == "fail"
        assert report.failure.stage == "plan"
        assert report.failure.error == "DimensionTooSmall"
        assert report.failure.context["required_dim"] == 48
        assert report.blocks is None

    @pytest.mark.unit
    def test_retention_failure_at_select(self, make_run_config):
        """Test an unreachable min_retained is reported as a select failure."""
        report = run(make_run_config(min_retained=9))
        assert report.failure.stage == "select"
        assert report.failure.error == "RetentionImpossible"
        assert report.blocks is not None

    @pytest.mark.unit
    def test_recipe_failure_at_generate(self, make_run_config, tmp_path):
        """Test a mis-shaped operator file is reported as a generate failure."""
        path = write_matrix(tmp_path / "T.txt", np.eye(3))
        report = run(make_run_config(generator={"recipe": "from_file", "path": str(path)}))
        assert report.failure.stage == "generate"
        assert report.failure.error == "RecipeError"

    @pytest.mark.unit
    def test_export_operators(self, make_run_config, tmp_path):
        """Test M and N are written next to the report."""
        run(make_run_config(export_operators=True), tmp_path)
        M = read_matrix(tmp_path / "M.txt")
        N = read_matrix(tmp_path / "N.txt")
        assert M.shape == (64, 8)
        assert N.shape == (8, 64)
        np.testing.assert_allclose(N @ M, np.eye(8), atol=1e-12)

    @pytest.mark.unit
    def test_exact_recheck(self, make_run_config):
        """Test the rational re-verification passes on the identity."""
        report = run(make_run_config(), exact=True)
        assert report.exact_recheck is not None
        assert report.exact_recheck.passed
        assert report.exact_recheck.checked > 0
        assert report.verdict == "pass"

    @pytest.mark.unit
    def test_trace_operation_is_used(self, make_run_config):
        """Test runs are wrapped in a span that receives the verdict."""
        span = MagicMock()
        with patch("factorlab.harness.trace_operation") as mock_trace:
            mock_trace.return_value.__enter__.return_value = span
            run(make_run_config())
        names = [call.args[0] for call in mock_trace.call_args_list]
        assert "harness.run" in names
        span.set_attribute.assert_any_call("verdict", "pass")

    @pytest.mark.unit
    def test_spans_carry_seed_and_stage(self, make_run_config):
        """Test every span opened during a run is tagged with its seed, run name and pipeline stage."""
        tracer = MagicMock()
        span = tracer.start_as_current_span.return_value.__enter__.return_value
        with patch("factorlab.telemetry.get_tracer", return_value=tracer):
            run(make_run_config(seed=7))
        opened = [c.args[0] for c in tracer.start_as_current_span.call_args_list]
        attributes = dict(zip(opened, [c.args[0] for c in span.set_attributes.call_args_list]))
        assert attributes["harness.run"] == {"factorlab.seed": 7, "factorlab.run": "identity-linf64", "target_blocks": 8}
        assert attributes["blocks.build_1d"]["factorlab.stage"] == "blocks"
        assert attributes["factor.assemble"]["factorlab.stage"] == "assemble"
        assert all(a["factorlab.seed"] == 7 for a in attributes.values())

    @pytest.mark.unit
    def test_report_ignores_global_numpy_state(self, make_run_config):
        """Test a large sparse ℓ^2 run gives the same report whatever np.random was seeded with."""
        config = make_run_config(
            space={"kind": "lp", "p": 2, "dim": 2048},
            generator={"recipe": "coordinate_projection", "density": 0.5},
            seed=3,
        )
        outputs = set()
        for global_seed in (1, 2):
            np.random.seed(global_seed)
            outputs.add(run(config).to_json())
        assert len(outputs) == 1

    @pytest.mark.unit
    def test_cert_rtol_reaches_block_builder(self, make_run_config):
        """Test tolerances.cert_rtol is the slack every certificate of the run is checked with."""
        with patch("factorlab.harness.build_blocks_1d", wraps=build_blocks_1d) as builder:
            report = run(make_run_config(tolerances={"cert_rtol": 1e-12}))
        assert builder.call_args.kwargs["rtol"] == 1e-12
        assert report.verdict == "pass"


class TestSummaries:
    """Tests for block summaries and the exact recheck."""

    @pytest.mark.unit
    def test_summarize_blocks(self, linf64, identity_blocks):
        """Test the block summary lists pairs and compresses the admissible tail."""
        summary = summarize_blocks(identity_blocks, OperatorRep.identity(linf64))
        assert summary.kind == "one_parameter"
        assert summary.pairs[0] == [1, 2]
        assert summary.final_admissible == {"all": [[17, 64]]}
        assert len(summary.past) == len(summary.future) == 8
        assert summary.rows is None

    @pytest.mark.unit
    def test_summarize_two_parameter_blocks(self, two_parameter_blocks):
        """Test two-parameter summaries carry rows and per-row futures."""
        summary = summarize_blocks(two_parameter_blocks, OperatorRep.identity(two_parameter_blocks.space))
        assert summary.kind == "two_parameter"
        assert summary.rows == [1, 1, 2, 1, 2, 3]
        assert summary.inner_pairs[0] == [1, 2]
        assert all(record.row is not None for record in summary.future)

    @pytest.mark.unit
    def test_exact_recheck_on_random_diagonal(self):
        """Test rational arithmetic confirms a floating-point block system."""
        space = SpaceSpec.lp(math.inf, 48)
        T = OperatorRep(np.diag(np.random.default_rng(7).uniform(-1, 1, size=48)), space, space)
        recheck = exact_recheck(build_blocks_1d(T, space, 6, reserve=12))
        assert recheck.passed, recheck.failures


class TestBatch:
    """Tests for batches."""

    @pytest.mark.unit
    def test_seed_sweep(self, make_run_config, tmp_path):
        """Test a seed sweep writes one report per run and a summary."""
        config = BatchConfig(base=make_run_config(), seeds={"start": 0, "count": 3})
        reports, summary = batch(config, tmp_path)
        assert [r.config["seed"] for r in reports] == [0, 1, 2]
        assert summary.run_count == 3
        assert summary.pass_count == 3
        assert summary.pass_rate == 1.0
        assert summary.failures == []
        for index in (1, 2, 3):
            assert (tmp_path / f"run-{index:04d}" / "report.json").exists()
        assert json.loads((tmp_path / "summary.json").read_text())["pass_count"] == 3

    @pytest.mark.unit
    def test_workers_keep_config_order(self, make_run_config):
        """Test concurrent batches report in config order."""
        config = BatchConfig(base=make_run_config(), runs=[{"seed": 5}, {"target_blocks": 4}, {"seed": 9}])
        reports, _ = batch(config, workers=3)
        assert [r.config["seed"] for r in reports] == [5, 0, 9]
        assert reports[1].blocks.count == 4

    @pytest.mark.unit
    def test_summarize_counts_failures(self, make_run_config):
        """Test failures are listed with their index, seed and stage."""
        reports = [run(make_run_config()), run(make_run_config(min_retained=9, seed=4))]
        summary = summarize(reports)
        assert summary.pass_count == 1
        assert summary.pass_rate == 0.5
        assert len(summary.failures) == 1
        failure = summary.failures[0]
        assert (failure.index, failure.seed, failure.stage) == (2, 4, "select")
        assert summary.worst_residual is not None

    @pytest.mark.unit
    def test_empty_summary(self):
        """Test an empty batch has rate zero and no worst values."""
        summary = summarize([])
        assert summary.run_count == 0
        assert summary.pass_rate == 0.0
        assert summary.worst_defect is None


class TestAcceptance:
    """End-to-end runs at realistic sizes."""

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(200))
    def test_linf_coordinate_projections(self, make_run_config, seed):
        """Test ℓ^∞_2048 with 32 blocks passes for seeded coordinate projections."""
        config = make_run_config(
            space={"kind": "lp", "p": "inf", "dim": 2048},
            generator={"recipe": "coordinate_projection", "density": 0.5},
            target_blocks=32,
            seed=seed,
        )
        report = run(config)
        assert report.verdict == "pass", report.failure
        assert report.verification.norm_products["M·N"].upper <= 48

    @pytest.mark.slow
    def test_two_parameter_coordinate_projection(self, make_run_config):
        """Test ℓ^1(ℓ^∞_512) with 16 rows and 24 blocks passes."""
        config = make_run_config(
            space={"kind": "lp_sum", "p": 1, "inner_p": "inf", "dim": 512, "outer_dim": 16},
            generator={"recipe": "coordinate_projection", "density": 0.5},
            target_blocks=24,
        )
        report = run(config, exact=True)
        assert report.verdict == "pass", report.failure
        assert report.blocks.kind == "two_parameter"
        assert report.exact_recheck.passed

    @pytest.mark.slow
    def test_two_parameter_random_contraction(self, make_run_config):
        """Test a dense contraction on ℓ^1(ℓ^∞_256)_2 factors the identity through Id − T."""
        config = make_run_config(
            space={"kind": "lp_sum", "p": 1, "inner_p": "inf", "dim": 256, "outer_dim": 2},
            generator={"recipe": "random_contraction", "norm_cap": 0.5},
            target_blocks=3,
            reserve=0,
        )
        for seed in (0, 1):
            report = run(config.model_copy(update={"seed": seed}))
            assert report.verdict == "pass", report.failure or [c.name for c in report.verification.failed_checks()]
            assert report.operator["nnz"] == 512 * 512
            assert report.blocks.kind == "two_parameter"
            assert report.blocks.rows == [1, 1, 2]
            assert report.selection.branch == "Id_minus_T"

    @pytest.mark.slow
    def test_dense_budget_limits_fail_in_blocks(self):
        """Test the shipped dense cells run out of indices while building blocks, as their config documents."""
        config = load_batch_config(Path(__file__).resolve().parents[1] / "configs" / "dense-budget-limits.yaml")
        reports, summary = batch(config)
        assert summary.pass_count == 0
        assert [(r.failure.stage, r.failure.error) for r in reports] == [("blocks", "BudgetExhausted")] * 2

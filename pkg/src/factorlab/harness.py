"""Experiment driver: operator recipes, single runs, batches and their reports.

All randomness of a run derives from ``config.seed`` through a
``numpy.random.SeedSequence`` split per stage, so replays are byte-identical
as long as ``record_wall_time`` stays off.
"""

from __future__ import annotations

import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import sparse

from .annihilate import exact_future_achieved, exact_worst_sign_discrepancy
from .blocks import BlockSystem, BlockSystem2D, build_blocks_1d, build_blocks_2d, check_block_system, plan_budget
from .config import BatchConfig, GeneratorConfig, RunConfig
from .errors import FactorLabError, RecipeError
from .factor import assemble, select_H
from .opnorm import OperatorRep, op_norm
from .reports import (
    BatchFailure,
    BatchSummary,
    BlockSummary,
    ExactRecheck,
    FailureRecord,
    FutureRecord,
    PastRecord,
    RunReport,
    SelectionRecord,
    as_intervals,
    jsonable,
)
from .seqspace import SpaceSpec, read_matrix, write_matrix
from .telemetry import enter_stage, run_context, trace_operation

logger = logging.getLogger(__name__)

PROJECTION_CONDITION_CAP = 1e3
PROJECTION_ATTEMPTS = 100


def _random_projection(rng: np.random.Generator, size: int, k: int) -> np.ndarray:
    """Oblique rank-k projection U(VᵀU)⁻¹Vᵀ from Gaussian factors, resampled until cond(VᵀU) ≤ 10³."""
    for _ in range(PROJECTION_ATTEMPTS):
        U = rng.standard_normal((size, k))
        V = rng.standard_normal((size, k))
        core = V.T @ U
        if np.linalg.cond(core) <= PROJECTION_CONDITION_CAP:
            return U @ scipy.linalg.solve(core, V.T)
    raise RecipeError(f"No rank-{k} factors with condition number ≤ {PROJECTION_CONDITION_CAP:g} in {PROJECTION_ATTEMPTS} draws", k=k)


def generate_operator(recipe: GeneratorConfig, space: SpaceSpec, seed: int | np.random.SeedSequence = 0) -> OperatorRep:
    """Build T on ``space`` from a recipe; the result depends only on the recipe, the space and the seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    size = space.size

    with trace_operation("harness.generate_operator", {"recipe": recipe.recipe, "size": size}):
        if recipe.recipe == "identity":
            matrix = sparse.identity(size, format="csr")
        elif recipe.recipe == "zero":
            matrix = sparse.csr_array((size, size))
        elif recipe.recipe == "scaled_identity":
            matrix = recipe.c * sparse.identity(size, format="csr")
        elif recipe.recipe == "coordinate_projection":
            mask = rng.random(size) < recipe.density
            matrix = sparse.diags_array(mask.astype(float), format="csr")
        elif recipe.recipe == "random_rank_k_projection":
            if recipe.k > size:
                raise RecipeError(f"Rank {recipe.k} exceeds the dimension {size} of {space.describe()}", k=recipe.k, size=size)
            matrix = _random_projection(rng, size, recipe.k)
        elif recipe.recipe == "random_contraction":
            matrix = rng.standard_normal((size, size))
            upper = op_norm(OperatorRep(matrix, space, space), seed=int(rng.integers(2**32))).upper
            matrix = matrix * (recipe.norm_cap / upper)
        elif recipe.recipe == "from_file":
            assert recipe.path is not None
            matrix = read_matrix(recipe.path)
            if matrix.shape != (size, size):
                raise RecipeError(
                    f"{recipe.path} holds a {matrix.shape[0]}×{matrix.shape[1]} matrix; {space.describe()} needs {size}×{size}",
                    path=recipe.path,
                )
        else:
            raise RecipeError(f"Unknown operator recipe: {recipe.recipe}")

    return OperatorRep(matrix, space, space)


def summarize_blocks(system: BlockSystem, T: OperatorRep) -> BlockSummary:
    two_parameter = isinstance(system, BlockSystem2D)
    past = [
        PastRecord(
            step=step,
            row=cert.row,
            F=list(cert.F),
            signs=list(cert.signs),
            achieved=cert.achieved,
            eta=cert.eta,
            functional_count=cert.functional_count,
            strategy=cert.strategy,
            past_sum=past_sum,
        )
        for step, (cert, past_sum) in enumerate(zip(system.past_certs, system.past_sums), start=1)
    ]
    if isinstance(system, BlockSystem2D):
        future = [
            FutureRecord(step=step, row=cert.row, kept=len(cert.A), achieved=cert.achieved, eta=cert.eta)
            for step, certs in enumerate(system.future_rows, start=1)
            for cert in certs
        ]
        final = {str(row): as_intervals(indices) for row, indices in sorted(system.families[-1].items())}
    else:
        future = [FutureRecord(step=step, kept=len(cert.A), achieved=cert.achieved, eta=cert.eta) for step, cert in enumerate(system.future_certs, start=1)]
        final = {"all": as_intervals(system.admissible[-1])}

    return BlockSummary(
        kind="two_parameter" if two_parameter else "one_parameter",
        count=len(system),
        pairs=[list(pair) for pair in system.pairs],
        rows=list(system.rows) if isinstance(system, BlockSystem2D) else None,
        inner_pairs=[list(pair) for pair in system.inner_pairs] if isinstance(system, BlockSystem2D) else None,
        eta=list(system.eta.values),
        eta_total=system.eta.total,
        past=past,
        future=future,
        final_admissible=final,
        invariant_violations=check_block_system(system, T),
    )


def exact_recheck(system: BlockSystem) -> ExactRecheck:
    """Re-verify every certificate in rational arithmetic, with no slack."""
    checked, skipped, failures = 0, 0, []

    for step, cert in enumerate(system.past_certs, start=1):
        m = len(cert.F) // 2
        worst = exact_worst_sign_discrepancy(cert.values, m)
        checked += 1
        if worst > Fraction(cert.eta):
            failures.append(f"step {step}: past discrepancy {float(worst):.17g} > {cert.eta:.17g}")
        if cert.values.shape[0]:
            total = sum((abs(Fraction(float(a)) - Fraction(float(b))) for a, b in cert.values), Fraction(0))
            bound = Fraction(system.eta.eta(step))
            checked += 1
            if total > bound:
                failures.append(f"step {step}: summed past pairing {float(total):.17g} > {float(bound):.17g}")

    futures = [cert for certs in system.future_rows for cert in certs] if isinstance(system, BlockSystem2D) else list(system.future_certs)
    for cert in futures:
        achieved = exact_future_achieved(cert)
        if achieved is None:
            skipped += 1
            continue
        checked += 1
        if achieved > Fraction(cert.eta):
            where = f" row {cert.row}" if cert.row is not None else ""
            failures.append(f"future{where}: restricted norm {float(achieved):.17g} > {cert.eta:.17g}")

    return ExactRecheck(checked=checked, skipped=skipped, failures=failures)


def _failure(stage: str, error: Exception) -> FailureRecord:
    context = error.context if isinstance(error, FactorLabError) else {}
    return FailureRecord(stage=stage, error=type(error).__name__, message=str(error), context=jsonable(context))


def write_report(report: RunReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json())
    logger.debug(f"Wrote report to {path}")
    return path


def run(config: RunConfig, out_dir: str | Path | None = None, *, exact: bool | None = None) -> RunReport:
    """plan → generate → blocks → select → assemble → report, capturing the first failing stage."""
    started = time.perf_counter()
    exact = config.exact if exact is None else exact
    generator_seed, norm_sequence = np.random.SeedSequence(config.seed).spawn(2)
    norm_seed = int(norm_sequence.generate_state(1, dtype=np.uint64)[0])

    report = RunReport(config=config.model_dump(mode="json"))
    context = {"seed": config.seed, "run": config.name} if config.name else {"seed": config.seed}
    with run_context(**context), trace_operation("harness.run", {"target_blocks": config.target_blocks}) as span:
        stage = enter_stage("config")
        try:
            space = config.space.to_space().require_ambient()

            stage = enter_stage("plan")
            plan = plan_budget(space, config.target_blocks, config.reserve)

            stage = enter_stage("generate")
            T = generate_operator(config.generator, space, generator_seed)
            nnz = int(T.matrix.nnz) if T.is_sparse else int(np.count_nonzero(T.matrix))
            report.operator = {"recipe": config.generator.recipe, "shape": list(T.shape), "sparse": T.is_sparse, "nnz": nnz}

            stage = enter_stage("blocks")
            builder = build_blocks_2d if space.is_sum else build_blocks_1d
            system = builder(T, space, config.target_blocks, plan=plan, strategy=config.strategy, rtol=config.tolerances.cert_rtol)
            report.blocks = summarize_blocks(system, T)

            stage = enter_stage("select")
            selection = select_H(T, system, config.min_retained)
            report.selection = SelectionRecord(
                branch=selection.H_tag,
                retained=list(selection.retained),
                min_retained=selection.min_retained,
                diag_values=list(selection.diag_values),
                rows=list(selection.rows) if selection.rows is not None else None,
                width=selection.width,
            )

            stage = enter_stage("assemble")
            bundle, verification = assemble(system, T, selection=selection, tolerances=config.tolerances, seed=norm_seed)
            report.verification = verification

            if exact:
                stage = enter_stage("exact_recheck")
                report.exact_recheck = exact_recheck(system)

            if out_dir is not None and config.export_operators:
                stage = enter_stage("export")
                write_matrix(Path(out_dir) / "M.txt", bundle.M.toarray())
                write_matrix(Path(out_dir) / "N.txt", bundle.N.toarray())

        except (FactorLabError, ValueError) as e:
            logger.warning(f"Run failed in stage '{stage}': {e}")
            report.failure = _failure(stage, e)
        except Exception as e:
            logger.error(f"Unexpected error in stage '{stage}': {e}", exc_info=True)
            report.failure = _failure(stage, e)

        if config.record_wall_time:
            report.wall_time_s = time.perf_counter() - started
        if span:
            span.set_attribute("verdict", report.verdict)
            if report.failure is not None:
                span.set_attribute("failed_stage", report.failure.stage)

    if out_dir is not None:
        write_report(report, Path(out_dir) / "report.json")
    logger.info(f"{'✓' if report.verdict == 'pass' else '✗'} Run {config.name or ''} seed {config.seed}: {report.verdict}")
    return report


def summarize(reports: list[RunReport]) -> BatchSummary:
    """Reduce run reports in config order; pass counts come from verdicts only."""
    passed = sum(1 for r in reports if r.verdict == "pass")
    verified = [r.verification for r in reports if r.verification is not None]
    failures = [
        BatchFailure(index=index, seed=r.config["seed"], stage=r.failure.stage, error=r.failure.error, message=r.failure.message)
        for index, r in enumerate(reports, start=1)
        if r.failure is not None
    ]
    failed_checks = Counter(check.name for v in verified for check in v.failed_checks())
    return BatchSummary(
        run_count=len(reports),
        pass_count=passed,
        pass_rate=passed / len(reports) if reports else 0.0,
        worst_residual=max((v.residual_identity for v in verified), default=None),
        worst_defect=max((v.neumann_defect.upper for v in verified), default=None),
        worst_norm_product=max((v.norm_products["M·N"].upper for v in verified), default=None),
        failures=failures,
        failed_checks=dict(sorted(failed_checks.items())),
    )


def batch(config: BatchConfig, out_dir: str | Path | None = None, *, exact: bool | None = None, workers: int | None = None) -> tuple[list[RunReport], BatchSummary]:
    """Run every expanded config (concurrently when workers > 1) and summarize in config order."""
    runs = config.expand()
    workers = workers or config.workers
    root = Path(out_dir) if out_dir is not None else None
    logger.info(f"Starting batch of {len(runs)} runs with {workers} worker(s)")

    def job(item: tuple[int, RunConfig]) -> RunReport:
        index, run_config = item
        return run(run_config, root / f"run-{index:04d}" if root is not None else None, exact=exact)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(job, enumerate(runs, start=1)))

    summary = summarize(reports)
    if root is not None:
        root.mkdir(parents=True, exist_ok=True)
        (root / "summary.json").write_text(summary.to_json())
    logger.info(f"✓ Batch finished: {summary.pass_count}/{summary.run_count} runs passed")
    return reports, summary

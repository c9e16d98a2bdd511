"""Command-line entry point: ``factorlab run|batch|check-lemmas|norms|order``.

Exit status is 0 when every verdict passes, 1 when a run or check fails and
2 for unusable configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import AppConfig, load_app_config, load_batch_config, load_run_config, parse_exponent
from .errors import FactorLabError
from .harness import batch, run
from .lemma_suite import run_lemma_suite
from .opnorm import OperatorRep, op_norm
from .seqspace import SpaceSpec, enumerate_order, read_matrix
from .telemetry import setup_telemetry

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="factorlab", description="Numerical factorization-of-the-identity experiments on truncated sequence spaces.")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Run one configuration and write its report")
    run_parser.add_argument("--config", required=True, type=Path, help="YAML run configuration")
    run_parser.add_argument("--seed", type=int, help="Override the configured seed")
    run_parser.add_argument("--out", type=Path, help="Report directory (default: $FACTORLAB_OUT_DIR)")
    run_parser.add_argument("--exact", action="store_true", help="Recheck every certificate in rational arithmetic")

    batch_parser = commands.add_parser("batch", help="Run a seed sweep or a list of configurations")
    batch_parser.add_argument("--config", required=True, type=Path, help="YAML batch configuration")
    batch_parser.add_argument("--seed", type=int, help="Override the base seed (and the start of a seed sweep)")
    batch_parser.add_argument("--out", type=Path, help="Report directory (default: $FACTORLAB_OUT_DIR)")
    batch_parser.add_argument("--exact", action="store_true", help="Recheck every certificate in rational arithmetic")
    batch_parser.add_argument("--workers", type=int, help="Concurrent runs (default: from the config)")

    lemma_parser = commands.add_parser("check-lemmas", help="Randomized oracle suite for the annihilation procedures")
    lemma_parser.add_argument("--cases", type=int, default=10_000)
    lemma_parser.add_argument("--seed", type=int, default=0)
    lemma_parser.add_argument("--max-dim", type=int, default=12)
    lemma_parser.add_argument("--tol", type=float, default=1e-9)

    norms_parser = commands.add_parser("norms", help="Operator norm of a matrix between sequence spaces")
    norms_parser.add_argument("matrix", type=Path, help="Matrix text file (rows cols header, row-major values)")
    norms_parser.add_argument("--p", required=True, type=parse_exponent, help="Domain exponent (outer exponent for ℓ^p-sums)")
    norms_parser.add_argument("--codomain-p", type=parse_exponent, help="Codomain exponent (default: the domain's)")
    norms_parser.add_argument("--inner-p", type=parse_exponent, help="Inner exponent; makes both spaces ℓ^p-sums")
    norms_parser.add_argument("--codomain-inner-p", type=parse_exponent, help="Codomain inner exponent (default: the domain's)")
    norms_parser.add_argument("--outer-dim", type=int, default=1, help="Number of outer coordinates of both spaces")
    norms_parser.add_argument("--restarts", type=int, default=8)
    norms_parser.add_argument("--seed", type=int, default=0)

    order_parser = commands.add_parser("order", help="Print the first COUNT pairs of the two-parameter order")
    order_parser.add_argument("--count", type=int, default=36)
    return parser


def _run(args: argparse.Namespace, app: AppConfig) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    out_dir = args.out or app.out_dir
    report = run(config, out_dir, exact=True if args.exact else None)
    logger.info(f"Report written to {Path(out_dir) / 'report.json'}")
    return 0 if report.verdict == "pass" else 1


def _batch(args: argparse.Namespace, app: AppConfig) -> int:
    config = load_batch_config(args.config)
    if args.seed is not None:
        config.base.seed = args.seed
        if config.seeds is not None:
            config.seeds.start = args.seed
    _, summary = batch(config, args.out or app.out_dir, exact=True if args.exact else None, workers=args.workers)
    print(summary.to_json(), end="")
    return 0 if summary.pass_count == summary.run_count else 1


def _check_lemmas(args: argparse.Namespace, app: AppConfig) -> int:
    result = run_lemma_suite(cases=args.cases, seed=args.seed, max_dim=args.max_dim, tol=args.tol)
    print(result.model_dump_json(indent=2))
    return 0 if result.passed else 1


def _space(p: float, inner_p: float | None, size: int, outer_dim: int) -> SpaceSpec:
    if inner_p is None:
        return SpaceSpec.lp(p, size)
    if size % outer_dim:
        raise ValueError(f"{size} coordinates do not split into {outer_dim} rows")
    return SpaceSpec.lp_sum(p, SpaceSpec.lp(inner_p, size // outer_dim), outer_dim)


def _norms(args: argparse.Namespace, app: AppConfig) -> int:
    matrix = read_matrix(args.matrix)
    rows, cols = matrix.shape
    codomain_inner = args.codomain_inner_p if args.codomain_inner_p is not None else args.inner_p
    domain = _space(args.p, args.inner_p, cols, args.outer_dim)
    codomain = _space(args.codomain_p if args.codomain_p is not None else args.p, codomain_inner, rows, args.outer_dim)
    estimate = op_norm(OperatorRep(matrix, domain, codomain), restarts=args.restarts, seed=args.seed)
    print(json.dumps({"domain": domain.describe(), "codomain": codomain.describe(), "lower": estimate.lower, "upper": estimate.upper, "exact": estimate.exact}, ensure_ascii=False))
    return 0


def _order(args: argparse.Namespace, app: AppConfig) -> int:
    print(json.dumps([[index.i, index.j] for index in enumerate_order(args.count)]))
    return 0


HANDLERS = {"run": _run, "batch": _batch, "check-lemmas": _check_lemmas, "norms": _norms, "order": _order}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        app = load_app_config()
    except RuntimeError as e:
        print(f"factorlab: {e}", file=sys.stderr)
        return 2

    # stdout carries JSON output only
    logging.basicConfig(
        level=app.log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
    )
    setup_telemetry()

    try:
        return HANDLERS[args.command](args, app)
    except (FactorLabError, ValueError, OSError) as e:
        logger.error(f"factorlab {args.command}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())

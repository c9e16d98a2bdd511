"""factorlab.

Finite-dimensional laboratory for factorizations of the identity through
operators on ℓ^p and ℓ^p(ℓ^q) truncations: block bases built by past and
future annihilation, the operators B, Q, P, M, N and verified reports.
"""

from .blocks import BlockSystem, BlockSystem2D, build_blocks_1d, build_blocks_2d, plan_budget
from .config import AppConfig, BatchConfig, RunConfig, load_app_config, load_batch_config, load_run_config
from .factor import FactorBundle, assemble, select_H
from .harness import batch, generate_operator, run
from .opnorm import NormEstimate, OperatorRep, op_norm
from .seqspace import SpaceSpec, TwoParamIndex, VecRep

__version__ = "0.1.0"

__all__ = [
    "AppConfig",
    "BatchConfig",
    "BlockSystem",
    "BlockSystem2D",
    "FactorBundle",
    "NormEstimate",
    "OperatorRep",
    "RunConfig",
    "SpaceSpec",
    "TwoParamIndex",
    "VecRep",
    "assemble",
    "batch",
    "build_blocks_1d",
    "build_blocks_2d",
    "generate_operator",
    "load_app_config",
    "load_batch_config",
    "load_run_config",
    "op_norm",
    "plan_budget",
    "run",
    "select_H",
]

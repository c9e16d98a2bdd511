"""Shared fixtures: small spaces, block systems and run configurations."""

import math

import pytest

from factorlab.blocks import build_blocks_1d, build_blocks_2d
from factorlab.config import RunConfig
from factorlab.opnorm import OperatorRep
from factorlab.seqspace import SpaceSpec


@pytest.fixture
def linf64():
    """ℓ^∞_64, roomy enough for eight blocks with the default reserve."""
    return SpaceSpec.lp(math.inf, 64)


@pytest.fixture
def two_parameter_space():
    """ℓ^1(ℓ^∞_40) with four rows, enough for six blocks over three rows."""
    return SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 40), 4)


@pytest.fixture
def identity_blocks(linf64):
    """Eight blocks built against the identity on ℓ^∞_64."""
    return build_blocks_1d(OperatorRep.identity(linf64), linf64, 8)


@pytest.fixture
def two_parameter_blocks(two_parameter_space):
    """Six blocks over rows 1, 1, 2, 1, 2, 3 of ℓ^1(ℓ^∞_40)."""
    return build_blocks_2d(OperatorRep.identity(two_parameter_space), two_parameter_space, 6)


@pytest.fixture
def make_run_config():
    """Factory for RunConfig objects with overridable fields."""

    def factory(**overrides):
        data = {
            "name": "identity-linf64",
            "space": {"kind": "lp", "p": "inf", "dim": 64},
            "generator": {"recipe": "identity"},
            "target_blocks": 8,
        }
        data.update(overrides)
        return RunConfig.model_validate(data)

    return factory

"""Tests for blocks module."""

import math

import numpy as np
import pytest
from scipy import sparse

from factorlab.blocks import (
    BlockSystem2D,
    EtaSchedule,
    build_blocks_1d,
    build_blocks_2d,
    check_block_system,
    future_tail_bound,
    plan_budget,
)
from factorlab.errors import DimensionMismatch, DimensionTooSmall
from factorlab.opnorm import OperatorRep
from factorlab.seqspace import SpaceSpec


class TestEtaSchedule:
    """Tests for the η schedule."""

    @pytest.mark.unit
    def test_values(self):
        """Test η_i = 4^{−i−1}/K_u."""
        schedule = EtaSchedule(K_u=2.0, length=3)
        assert schedule.values == (1 / 32, 1 / 128, 1 / 512)
        assert schedule.total == pytest.approx(1 / 32 + 1 / 128 + 1 / 512)

    @pytest.mark.unit
    def test_partial_sums_stay_below_limit(self):
        """Test partial sums never exceed K_u⁻¹/12 and reach it to 1e-12; in floats the long sums round onto it."""
        assert EtaSchedule(K_u=1.0, length=10).total < 1 / 12
        for K_u in (1.0, 2.0):
            schedule = EtaSchedule(K_u=K_u, length=40)
            assert schedule.total <= schedule.limit
            assert schedule.total == pytest.approx(schedule.limit, abs=1e-12)
        assert EtaSchedule(K_u=3.5, length=40).total == pytest.approx(1 / 42, abs=1e-12)
        assert EtaSchedule(K_u=1.0, length=40).limit == pytest.approx(1 / 12)

    @pytest.mark.unit
    def test_steps_start_at_one(self):
        """Test step 0 is rejected."""
        with pytest.raises(ValueError):
            EtaSchedule(1.0, 3).eta(0)


class TestPlanBudget:
    """Tests for plan_budget."""

    @pytest.mark.unit
    def test_default_reserve(self, linf64):
        """Test the default reserve is four indices per block."""
        plan = plan_budget(linf64, 8)
        assert plan.reserve == 32
        assert plan.required_dim == 48
        assert plan.keep(1) == 46
        assert plan.keep(8) == 32

    @pytest.mark.unit
    def test_dimension_too_small(self):
        """Test a short truncation reports the dimension it needs."""
        with pytest.raises(DimensionTooSmall) as exc_info:
            plan_budget(SpaceSpec.lp(math.inf, 20), 8)
        assert exc_info.value.required_dim == 48
        assert exc_info.value.context["stage"] == "plan"

    @pytest.mark.unit
    def test_two_parameter_rows(self):
        """Test two-parameter plans need the rows of the first ranks of ≺."""
        inner = SpaceSpec.lp(math.inf, 200)
        assert plan_budget(SpaceSpec.lp_sum(1.0, inner, 6), 24, reserve=0).required_outer_dim == 6
        with pytest.raises(DimensionTooSmall) as exc_info:
            plan_budget(SpaceSpec.lp_sum(1.0, inner, 5), 24, reserve=0)
        assert exc_info.value.required_outer_dim == 6

    @pytest.mark.unit
    def test_invalid_arguments(self, linf64):
        """Test target ≥ 1 and reserve ≥ 0 are enforced."""
        with pytest.raises(ValueError):
            plan_budget(linf64, 0)
        with pytest.raises(ValueError):
            plan_budget(linf64, 2, reserve=-1)


class TestBuildBlocks1D:
    """Tests for the one-parameter construction."""

    @pytest.mark.unit
    def test_identity_takes_consecutive_pairs(self, linf64):
        """Test the identity yields blocks {1,2}, {3,4}, ... with no violations."""
        T = OperatorRep.identity(linf64)
        system = build_blocks_1d(T, linf64, 8)
        assert system.pairs == [(2 * i - 1, 2 * i) for i in range(1, 9)]
        assert system.admissible[-1] == tuple(range(17, 65))
        assert check_block_system(system, T) == []

    @pytest.mark.unit
    def test_averaging_operator(self, linf64):
        """Test an operator killing every block still builds a valid system."""
        T = OperatorRep(np.full((64, 64), 1 / 64), linf64, linf64)
        system = build_blocks_1d(T, linf64, 8)
        assert len(system) == 8
        assert all(cert.achieved == pytest.approx(0.0, abs=1e-15) for cert in system.future_certs)
        assert check_block_system(system, T) == []

    @pytest.mark.unit
    def test_random_diagonal(self):
        """Test a random diagonal operator passes every invariant."""
        space = SpaceSpec.lp(3.0, 48)
        T = OperatorRep(sparse.diags_array(np.random.default_rng(1).uniform(-2, 2, size=48)), space, space)
        system = build_blocks_1d(T, space, 6, reserve=12)
        assert len(system) == 6
        assert check_block_system(system, T) == []

    @pytest.mark.unit
    def test_block_vectors(self, linf64):
        """Test b_j and b_j* carry +1 at k₀ and −1 at k₁."""
        system = build_blocks_1d(OperatorRep.identity(linf64), linf64, 2)
        b = system.b(2)
        assert b.side == "predual"
        assert b.coords[2] == 1.0 and b.coords[3] == -1.0
        assert np.count_nonzero(b.coords) == 2
        assert system.b_star(2).side == "dual"

    @pytest.mark.unit
    def test_tampered_system_is_detected(self, linf64):
        """Test overlapping blocks are reported."""
        T = OperatorRep.identity(linf64)
        system = build_blocks_1d(T, linf64, 3)
        system.pairs[1] = system.pairs[0]
        violations = check_block_system(system, T)
        assert "blocks are not pairwise disjoint" in violations

    @pytest.mark.unit
    def test_operator_must_act_on_space(self, linf64):
        """Test T must map the space to itself."""
        T = OperatorRep.identity(SpaceSpec.lp(math.inf, 63))
        with pytest.raises(DimensionMismatch):
            build_blocks_1d(T, linf64, 2)

    @pytest.mark.unit
    def test_flat_space_required(self, two_parameter_space):
        """Test two-parameter spaces are routed to build_blocks_2d."""
        with pytest.raises(ValueError):
            build_blocks_1d(OperatorRep.identity(two_parameter_space), two_parameter_space, 2)

    @pytest.mark.unit
    def test_future_tail_bound(self, linf64):
        """Test later blocks are invisible to earlier ones up to η_i·‖x‖."""
        T = OperatorRep.identity(linf64)
        system = build_blocks_1d(T, linf64, 5)
        lhs, bound = future_tail_bound(system, T, 2, [0.5, -1.0, 2.0])
        assert lhs <= bound
        assert bound == pytest.approx(system.eta.eta(2) * 2.0)
        with pytest.raises(DimensionMismatch):
            future_tail_bound(system, T, 2, [1.0])


class TestBuildBlocks2D:
    """Tests for the two-parameter construction."""

    @pytest.mark.unit
    def test_identity_follows_precede_order(self, two_parameter_space):
        """Test rows follow ≺ and inner indices increase past the running maximum."""
        T = OperatorRep.identity(two_parameter_space)
        system = build_blocks_2d(T, two_parameter_space, 6)
        assert isinstance(system, BlockSystem2D)
        assert system.rows == [1, 1, 2, 1, 2, 3]
        assert system.inner_pairs == [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12)]
        assert system.pairs[2] == (45, 46)
        assert system.running_max == [2, 4, 6, 8, 10, 12]
        assert check_block_system(system, T) == []

    @pytest.mark.unit
    def test_families_shrink(self, two_parameter_space):
        """Test each J_{k+1,i} sits inside J_{k,i}."""
        T = OperatorRep.identity(two_parameter_space)
        system = build_blocks_2d(T, two_parameter_space, 6)
        for before, after in zip(system.families, system.families[1:]):
            for row, kept in after.items():
                assert set(kept) <= set(before[row])

    @pytest.mark.unit
    def test_two_parameter_space_required(self, linf64):
        """Test flat spaces are routed to build_blocks_1d."""
        with pytest.raises(ValueError):
            build_blocks_2d(OperatorRep.identity(linf64), linf64, 2)

    @pytest.mark.unit
    def test_dimension_too_small(self):
        """Test a 2-d truncation without enough inner indices fails at planning."""
        space = SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 10), 4)
        with pytest.raises(DimensionTooSmall):
            build_blocks_2d(OperatorRep.identity(space), space, 6)

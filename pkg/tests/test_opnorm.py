"""Tests for opnorm module."""

import itertools
import math

import numpy as np
import pytest
from scipy import sparse

from factorlab.errors import DimensionMismatch
from factorlab.opnorm import NormEstimate, OperatorRep, identity_norm, op_norm, restricted_predual_norm
from factorlab.seqspace import SpaceSpec, VecRep, lp_norm


def batch_norms(X, space):
    """Row-wise dual-side norms of a stack of flat coordinate vectors."""
    outer, inner = space.exponents("dual")
    rows = lp_norm(X.reshape(len(X), space.outer_dim, space.dim), inner, axis=2)
    return lp_norm(rows, outer, axis=1)


def brute_force_norm(matrix, domain, codomain, samples=20_000, seed=0):
    """Largest ‖Ax‖/‖x‖ over random sphere points plus the extreme points of ℓ^1 and ℓ^∞ balls."""
    rng = np.random.default_rng(seed)
    n = domain.size
    candidates = [rng.standard_normal((samples, n)), np.eye(n)]
    _, q = domain.exponents("dual")
    if math.isinf(q):
        candidates.append(np.array(list(itertools.product((-1.0, 1.0), repeat=n))))
    X = np.vstack(candidates)
    return float((batch_norms(X @ np.asarray(matrix).T, codomain) / batch_norms(X, domain)).max())


class TestNormEstimate:
    """Tests for the NormEstimate bracket."""

    @pytest.mark.unit
    def test_exact_estimate(self):
        """Test an exact estimate has lower == upper."""
        estimate = NormEstimate.exactly(2.5)
        assert estimate.lower == estimate.upper == estimate.value == 2.5
        assert estimate.exact
        assert str(estimate) == "2.5 (exact)"

    @pytest.mark.unit
    def test_invalid_bracket(self):
        """Test lower > upper is rejected."""
        with pytest.raises(ValueError, match="Invalid bracket"):
            NormEstimate(2.0, 1.0)

    @pytest.mark.unit
    def test_exact_requires_equal_ends(self):
        """Test exact with a gap is rejected."""
        with pytest.raises(ValueError):
            NormEstimate(1.0, 2.0, exact=True)

    @pytest.mark.unit
    def test_product(self):
        """Test products multiply both ends."""
        product = NormEstimate(1.0, 2.0) * NormEstimate.exactly(3.0)
        assert (product.lower, product.upper, product.exact) == (3.0, 6.0, False)


class TestOperatorRep:
    """Tests for OperatorRep."""

    @pytest.mark.unit
    def test_shape_mismatch(self):
        """Test the matrix must map the domain to the codomain."""
        with pytest.raises(DimensionMismatch):
            OperatorRep(np.eye(3), SpaceSpec.lp(2.0, 2), SpaceSpec.lp(2.0, 2))

    @pytest.mark.unit
    def test_sparse_kept_sparse(self):
        """Test sparse input stays sparse."""
        space = SpaceSpec.lp(1.0, 4)
        A = OperatorRep(sparse.identity(4), space, space)
        assert A.is_sparse
        np.testing.assert_array_equal(A.toarray(), np.eye(4))

    @pytest.mark.unit
    def test_apply_to_vector(self):
        """Test calling an operator maps a VecRep into the codomain."""
        space = SpaceSpec.lp(2.0, 2)
        A = OperatorRep(np.array([[0.0, 1.0], [1.0, 0.0]]), space, space)
        np.testing.assert_array_equal(A(VecRep(np.array([1.0, 2.0]), space)).coords, [2.0, 1.0])

    @pytest.mark.unit
    def test_compose_checks_spaces(self):
        """Test composition needs matching intermediate spaces."""
        A = OperatorRep(np.ones((2, 3)), SpaceSpec.lp(2.0, 3), SpaceSpec.lp(2.0, 2))
        with pytest.raises(DimensionMismatch):
            A @ A
        B = OperatorRep(np.ones((3, 2)), SpaceSpec.lp(2.0, 2), SpaceSpec.lp(2.0, 3))
        np.testing.assert_array_equal((A @ B).toarray(), np.full((2, 2), 3.0))


class TestOpNorm:
    """Tests for op_norm."""

    @pytest.mark.unit
    @pytest.mark.parametrize(
        "space",
        [
            SpaceSpec.lp(1.0, 5),
            SpaceSpec.lp(2.0, 5),
            SpaceSpec.lp(3.0, 5),
            SpaceSpec.lp(math.inf, 5),
            SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 3), 2),
            SpaceSpec.lp_sum(2.0, SpaceSpec.lp(3.0, 3), 2),
        ],
        ids=lambda space: space.describe(),
    )
    def test_identity_has_norm_one(self, space):
        """Test the identity has norm exactly 1 on every space."""
        estimate = op_norm(OperatorRep.identity(space))
        assert estimate.lower == pytest.approx(1.0)
        assert estimate.upper == pytest.approx(1.0)

    @pytest.mark.unit
    def test_max_row_sum_on_linf(self):
        """Test diag(3, 1) on ℓ^∞_2 has norm 3."""
        space = SpaceSpec.lp(math.inf, 2)
        estimate = op_norm(OperatorRep(np.diag([3.0, 1.0]), space, space))
        assert estimate == NormEstimate.exactly(3.0)

    @pytest.mark.unit
    def test_max_column_sum_on_l1(self):
        """Test the all-ones 2×2 matrix on ℓ^1_2 has norm 2, confirmed on the extreme points."""
        space = SpaceSpec.lp(1.0, 2)
        ones = np.ones((2, 2))
        estimate = op_norm(OperatorRep(ones, space, space))
        assert estimate == NormEstimate.exactly(2.0)
        assert brute_force_norm(ones, space, space, samples=0) == pytest.approx(2.0)

    @pytest.mark.unit
    def test_spectral_norm_on_l2(self):
        """Test ℓ^2 → ℓ^2 is the largest singular value."""
        rng = np.random.default_rng(3)
        matrix = rng.normal(size=(6, 4))
        estimate = op_norm(OperatorRep(matrix, SpaceSpec.lp(2.0, 4), SpaceSpec.lp(2.0, 6)))
        assert estimate.exact
        assert estimate.upper == pytest.approx(np.linalg.norm(matrix, 2), rel=1e-10)

    @pytest.mark.unit
    def test_mixed_exact_cases(self):
        """Test ℓ^1(ℓ^1) domains and ℓ^∞(ℓ^∞) codomains are computed exactly."""
        rng = np.random.default_rng(4)
        matrix = rng.normal(size=(6, 6))
        l1 = SpaceSpec.lp_sum(1.0, SpaceSpec.lp(1.0, 3), 2)
        linf = SpaceSpec.lp_sum(math.inf, SpaceSpec.lp(math.inf, 3), 2)
        from_l1 = op_norm(OperatorRep(matrix, l1, linf))
        assert from_l1.exact
        assert from_l1.upper == pytest.approx(np.abs(matrix).max())
        into_linf = op_norm(OperatorRep(matrix, linf, linf))
        assert into_linf.exact
        assert into_linf.upper == pytest.approx(np.abs(matrix).sum(axis=1).max())

    @pytest.mark.unit
    def test_sparse_spectral_norm_ignores_global_seed(self):
        """Test the large sparse ℓ^2 path gives the same bits whatever the global numpy state."""
        space_in, space_out = SpaceSpec.lp(2.0, 8), SpaceSpec.lp(2.0, 2048)
        matrix = sparse.random(2048, 8, density=0.05, random_state=np.random.default_rng(9), format="csr")
        A = OperatorRep(matrix, space_in, space_out)
        values = set()
        for global_seed in (0, 1, 2, 3):
            np.random.seed(global_seed)
            values.add(op_norm(A, seed=17).upper)
        assert len(values) == 1
        assert values.pop() == pytest.approx(np.linalg.norm(matrix.toarray(), 2), rel=1e-10)

    @pytest.mark.unit
    def test_l1_outer_block_diagonal_is_exact(self):
        """Test a block-diagonal operator on ℓ^1(ℓ^∞) has the largest inner max-row-sum as its exact norm."""
        space = SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 3), 2)
        rng = np.random.default_rng(12)
        first, second = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        matrix = np.block([[first, np.zeros((3, 3))], [np.zeros((3, 3)), second]])
        estimate = op_norm(OperatorRep(matrix, space, space))
        assert estimate.exact
        expected = max(np.abs(first).sum(axis=1).max(), np.abs(second).sum(axis=1).max())
        assert estimate.upper == pytest.approx(expected)

    @pytest.mark.unit
    def test_l1_outer_dense_matches_vertices(self):
        """Test a dense operator on a small ℓ^1(ℓ^∞) is exact and equals the best sign vertex of one input block."""
        space = SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 3), 2)
        matrix = np.random.default_rng(13).normal(size=(6, 6))
        estimate = op_norm(OperatorRep(matrix, space, space))
        assert estimate.exact

        best = 0.0
        for block in range(2):
            for signs in itertools.product((-1.0, 1.0), repeat=3):
                x = np.zeros(6)
                x[3 * block : 3 * block + 3] = signs
                best = max(best, batch_norms((matrix @ x)[None, :], space)[0])
        assert estimate.upper == pytest.approx(best)

    @pytest.mark.unit
    def test_l1_outer_large_inner_dimension_stays_bracketed(self):
        """Test blocks too wide to enumerate fall back to a bracket."""
        space = SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 30), 2)
        matrix = np.random.default_rng(14).normal(size=(60, 60))
        estimate = op_norm(OperatorRep(matrix, space, space))
        assert not estimate.exact
        assert estimate.lower <= estimate.upper

    @pytest.mark.unit
    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, math.inf])
    def test_coordinate_projection_has_norm_one(self, p):
        """Test a nonzero 0/1 diagonal has norm exactly 1."""
        space = SpaceSpec.lp(p, 6)
        estimate = op_norm(OperatorRep(np.diag([0.0, 1.0, 1.0, 0.0, 1.0, 0.0]), space, space))
        assert estimate.lower == pytest.approx(1.0)
        assert estimate.upper == pytest.approx(1.0)

    @pytest.mark.unit
    def test_zero_operator(self):
        """Test the zero operator has norm 0."""
        space = SpaceSpec.lp(3.0, 4)
        assert op_norm(OperatorRep(np.zeros((4, 4)), space, space)) == NormEstimate.exactly(0.0)

    @pytest.mark.slow
    @pytest.mark.parametrize(
        "domain,codomain",
        [
            (SpaceSpec.lp(3.0, 3), SpaceSpec.lp(3.0, 3)),
            (SpaceSpec.lp(1.5, 4), SpaceSpec.lp(1.5, 4)),
            (SpaceSpec.lp(math.inf, 3), SpaceSpec.lp(2.0, 3)),
            (SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 2), 2), SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 2), 2)),
            (SpaceSpec.lp_sum(2.0, SpaceSpec.lp(3.0, 2), 2), SpaceSpec.lp_sum(2.0, SpaceSpec.lp(3.0, 2), 2)),
        ],
        ids=lambda space: space.describe(),
    )
    def test_bracket_contains_brute_force(self, domain, codomain):
        """Test brute force never beats the upper bound, and power iteration finds the maximum of nonnegative matrices."""
        rng = np.random.default_rng(11)
        for trial in range(3):
            matrix = rng.normal(size=(codomain.size, domain.size))
            estimate = op_norm(OperatorRep(matrix, domain, codomain), seed=trial)
            brute = brute_force_norm(matrix, domain, codomain, seed=trial)
            assert brute <= estimate.upper + 1e-9
            assert estimate.lower <= estimate.upper

            positive = np.abs(matrix)
            estimate = op_norm(OperatorRep(positive, domain, codomain), seed=trial)
            brute = brute_force_norm(positive, domain, codomain, seed=trial)
            assert brute <= estimate.upper + 1e-9
            if not domain.is_sum:
                assert estimate.lower >= brute * (1 - 1e-3)

    @pytest.mark.unit
    @pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
    def test_submultiplicative_upper_bounds(self, p):
        """Test upper(AB) ≤ upper(A)·upper(B) on random pairs."""
        rng = np.random.default_rng(5)
        space = SpaceSpec.lp(p, 5)
        for _ in range(20):
            A = OperatorRep(rng.normal(size=(5, 5)), space, space)
            B = OperatorRep(rng.normal(size=(5, 5)), space, space)
            assert op_norm(A @ B).upper <= op_norm(A).upper * op_norm(B).upper + 1e-9

    @pytest.mark.unit
    def test_identity_between_exponents(self):
        """Test ‖Id: ℓ^a_n → ℓ^b_n‖ = n^{1/b − 1/a} when b < a."""
        assert identity_norm(2.0, 1.0, 4) == pytest.approx(2.0)
        assert identity_norm(math.inf, 1.0, 4) == pytest.approx(4.0)
        assert identity_norm(1.0, 2.0, 4) == 1.0


class TestRestrictedPredualNorm:
    """Tests for restricted_predual_norm."""

    @pytest.mark.unit
    def test_empty_set(self):
        """Test restricting to ∅ gives 0."""
        assert restricted_predual_norm([1.0, 2.0, 3.0], [], SpaceSpec.lp(math.inf, 3)) == 0.0

    @pytest.mark.unit
    def test_linf_dual_is_l1_mass(self):
        """Test an ℓ^∞ dual restricts to the ℓ^1 mass, matching the best sign vector."""
        phi = np.array([1.0, 0.5, 0.02, 0.03])
        space = SpaceSpec.lp(math.inf, 4)
        value = restricted_predual_norm(phi, {3, 4}, space)
        assert value == pytest.approx(0.05)
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=2)))
        assert float((signs @ phi[2:]).max()) == pytest.approx(value)

    @pytest.mark.unit
    def test_l2_dual(self):
        """Test an ℓ^2 dual restricts to the Euclidean norm, never beaten by unit vectors."""
        phi = VecRep(np.array([0.0, 3.0, 4.0]), SpaceSpec.lp(2.0, 3))
        value = restricted_predual_norm(phi, {2, 3})
        assert value == pytest.approx(5.0)
        rng = np.random.default_rng(0)
        samples = rng.normal(size=(1000, 2))
        samples /= lp_norm(samples, 2.0, axis=1)[:, None]
        assert np.abs(samples @ np.array([3.0, 4.0])).max() <= value + 1e-12

    @pytest.mark.unit
    def test_two_parameter_pairs(self):
        """Test pairs (i, j) address row-major coordinates of a two-parameter space."""
        space = SpaceSpec.lp_sum(1.0, SpaceSpec.lp(math.inf, 2), 2)
        phi = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert restricted_predual_norm(phi, {(1, 2), (2, 2)}, space) == pytest.approx(4.0)

    @pytest.mark.unit
    def test_requires_space_for_raw_coordinates(self):
        """Test raw coordinates need an explicit space."""
        with pytest.raises(ValueError):
            restricted_predual_norm([1.0], {1})

    @pytest.mark.unit
    @pytest.mark.parametrize("p", [math.inf, 1.0, 3.0])
    def test_monotone_in_the_index_set(self, p):
        """Test A ⊆ A′ implies the restricted norm does not decrease, on all subsets of 8 indices."""
        rng = np.random.default_rng(2)
        space = SpaceSpec.lp(p, 8)
        phi = rng.normal(size=8)
        for r in range(8):
            for A in itertools.combinations(range(1, 9), r):
                base = restricted_predual_norm(phi, A, space)
                for extra in set(range(1, 9)) - set(A):
                    assert restricted_predual_norm(phi, set(A) | {extra}, space) >= base - 1e-15

"""Operator norms between truncated sequence spaces.

Exact values where the extreme points of the unit ball make them cheap
(ℓ^1 domains, ℓ^∞ codomains, ℓ^2 → ℓ^2); otherwise a certified bracket:
an interpolation / block-majorant upper bound and a Boyd-style power
iteration lower bound.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.linalg import svds

from .errors import DimensionMismatch
from .seqspace import SpaceSpec, VecRep, conjugate, index_array, lp_norm, norming_vector, pair_positions, space_norm, space_norming_vector

logger = logging.getLogger(__name__)

EXACT_RTOL = 1e-12
DENSE_SVD_LIMIT = 1024
VERTEX_WORK_LIMIT = 4_000_000


@dataclass(frozen=True, eq=False)
class OperatorRep:
    """A matrix acting on dual-side coordinates: rows index the codomain, columns the domain.

    Two-parameter spaces are flattened row-major.  ``matrix`` may be a dense
    array or any scipy sparse matrix (kept as CSR).
    """

    matrix: Any
    domain: SpaceSpec
    codomain: SpaceSpec

    def __post_init__(self) -> None:
        matrix = sparse.csr_array(self.matrix, dtype=float) if sparse.issparse(self.matrix) else np.atleast_2d(np.asarray(self.matrix, dtype=float))
        expected = (self.codomain.size, self.domain.size)
        if matrix.shape != expected:
            raise DimensionMismatch(
                f"Matrix of shape {matrix.shape} does not map {self.domain.describe()} to {self.codomain.describe()}",
                expected=list(expected),
                got=list(matrix.shape),
            )
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls, space: SpaceSpec) -> OperatorRep:
        return cls(sparse.identity(space.size, format="csr"), space, space)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.matrix)

    def apply(self, x: Any) -> np.ndarray:
        return np.asarray(self.matrix @ np.asarray(x, dtype=float))

    def apply_transpose(self, z: Any) -> np.ndarray:
        return np.asarray(self.matrix.T @ np.asarray(z, dtype=float))

    def __call__(self, v: VecRep) -> VecRep:
        if v.space != self.domain:
            raise DimensionMismatch(f"Operator expects vectors of {self.domain.describe()}, got {v.space.describe()}")
        return VecRep(self.apply(v.flat).reshape(self.codomain.shape), self.codomain, v.side)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.array(self.matrix)

    def compose(self, other: OperatorRep) -> OperatorRep:
        """self ∘ other."""
        if other.codomain != self.domain:
            raise DimensionMismatch(f"Cannot compose: {other.codomain.describe()} feeds into {self.domain.describe()}")
        return OperatorRep(self.matrix @ other.matrix, other.domain, self.codomain)

    def __matmul__(self, other: OperatorRep) -> OperatorRep:
        return self.compose(other)


@dataclass(frozen=True)
class NormEstimate:
    lower: float
    upper: float
    exact: bool = False

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise ValueError(f"Invalid bracket: lower {self.lower} > upper {self.upper}")
        if self.exact and self.lower != self.upper:
            raise ValueError("An exact estimate must have lower == upper")

    @classmethod
    def exactly(cls, value: float) -> NormEstimate:
        return cls(float(value), float(value), True)

    @property
    def value(self) -> float:
        return self.upper

    def __mul__(self, other: NormEstimate) -> NormEstimate:
        return NormEstimate(self.lower * other.lower, self.upper * other.upper, self.exact and other.exact)

    def __str__(self) -> str:
        if self.exact:
            return f"{self.upper:.12g} (exact)"
        return f"[{self.lower:.12g}, {self.upper:.12g}]"


def identity_norm(a: float, b: float, n: int) -> float:
    """‖Id : ℓ^a_n → ℓ^b_n‖."""
    if b >= a:
        return 1.0
    inv_b = 0.0 if math.isinf(b) else 1.0 / b
    inv_a = 0.0 if math.isinf(a) else 1.0 / a
    return float(n ** (inv_b - inv_a))


def _group(length: int, keys: np.ndarray, values: np.ndarray, p: float) -> np.ndarray:
    if math.isinf(p):
        out = np.zeros(length)
        np.maximum.at(out, keys, values)
        return out
    if p == 1:
        return np.bincount(keys, weights=values, minlength=length)
    return np.bincount(keys, weights=values**p, minlength=length) ** (1.0 / p)


@dataclass
class _BlockStats:
    """Per-block reductions of |A|, blocks being (output outer index, input outer index)."""

    col_inner: np.ndarray  # (Mo, size_in): inner ℓ^r norm of each column within each output block
    row_inner: np.ndarray  # (size_out, Ni): inner predual norm of each row within each input block
    col_r: np.ndarray
    row_q: np.ndarray
    col_sum: np.ndarray
    row_sum: np.ndarray


def _block_stats(matrix: Any, domain: SpaceSpec, codomain: SpaceSpec) -> _BlockStats:
    _, q = domain.exponents("dual")
    _, r = codomain.exponents("dual")
    Mo, n_out, Ni, n_in = codomain.outer_dim, codomain.dim, domain.outer_dim, domain.dim
    size_out, size_in = codomain.size, domain.size

    coo = sparse.coo_array(matrix)
    rows = np.asarray(coo.row, dtype=np.int64)
    cols = np.asarray(coo.col, dtype=np.int64)
    vals = np.abs(np.asarray(coo.data, dtype=float))
    col_keys = (rows // n_out) * size_in + cols
    row_keys = rows * Ni + cols // n_in

    col_inner = _group(Mo * size_in, col_keys, vals, r).reshape(Mo, size_in)
    row_inner = _group(size_out * Ni, row_keys, vals, conjugate(q)).reshape(size_out, Ni)
    col_abs = _group(Mo * size_in, col_keys, vals, 1).reshape(Mo, size_in)
    row_abs = _group(size_out * Ni, row_keys, vals, 1).reshape(size_out, Ni)
    return _BlockStats(
        col_inner=col_inner,
        row_inner=row_inner,
        col_r=col_inner.reshape(Mo, Ni, n_in).max(axis=2),
        row_q=row_inner.reshape(Mo, n_out, Ni).max(axis=1),
        col_sum=col_abs.reshape(Mo, Ni, n_in).max(axis=2),
        row_sum=row_abs.reshape(Mo, n_out, Ni).max(axis=1),
    )


def _block_bound(col_r: Any, row_q: Any, col_sum: Any, row_sum: Any, q: float, r: float, n_in: int, n_out: int) -> np.ndarray:
    """Upper bound for ‖A‖_{ℓ^q_{n_in} → ℓ^r_{n_out}} from column/row reductions (elementwise)."""
    col_r, row_q = np.asarray(col_r, dtype=float), np.asarray(row_q, dtype=float)
    if q == 1:
        return col_r
    if math.isinf(r):
        return row_q
    bounds = [
        col_r * identity_norm(q, 1, n_in),
        row_q * identity_norm(math.inf, r, n_out),
    ]
    for s in (q, r):
        theta = 0.0 if math.isinf(s) else 1.0 / s
        interpolated = np.power(col_sum, theta) * np.power(row_sum, 1.0 - theta)
        bounds.append(interpolated * identity_norm(q, s, n_in) * identity_norm(s, r, n_out))
    return np.minimum.reduce(bounds)


def _majorant_norm(beta: np.ndarray, P: float, R: float) -> float:
    """Upper bound of ‖β‖_{ℓ^P → ℓ^R} for a small nonnegative matrix β."""
    return float(
        _block_bound(
            lp_norm(beta, R, axis=0).max(initial=0.0),
            lp_norm(beta, conjugate(P), axis=1).max(initial=0.0),
            beta.sum(axis=0).max(initial=0.0),
            beta.sum(axis=1).max(initial=0.0),
            P,
            R,
            beta.shape[1],
            beta.shape[0],
        )
    )


def _spectral_norm(matrix: Any, seed: int = 0) -> float:
    if min(matrix.shape) == 0:
        return 0.0
    if sparse.issparse(matrix):
        if matrix.nnz == 0:
            return 0.0
        if max(matrix.shape) > DENSE_SVD_LIMIT and min(matrix.shape) > 2:
            # ARPACK draws its start vector from the global numpy state unless given one
            v0 = np.random.Generator(np.random.PCG64(seed)).standard_normal(min(matrix.shape))
            return float(svds(matrix, k=1, v0=v0, return_singular_vectors=False)[0])
        matrix = matrix.toarray()
    return float(scipy.linalg.svdvals(matrix)[0])


def _sign_vertices(n: int) -> np.ndarray:
    """The 2^(n−1) sign vectors of ℓ^∞_n up to a global sign, one per row."""
    codes = np.arange(2 ** (n - 1), dtype=np.int64)[:, None]
    return 1.0 - 2.0 * ((codes >> np.arange(n)) & 1)


def _outer_l1_norm(A: OperatorRep, seed: int) -> float | None:
    """Exact norm on an ℓ^1-sum domain, or None when some input block has no exact formula.

    The unit ball of ℓ^1(X) is the convex hull of the unit balls of its
    blocks, so ‖A‖ is the largest norm of A restricted to one input block.
    A block feeding a single output block reduces to an inner norm; a block
    spread over several output blocks is handled by enumerating the sign
    vertices of a small ℓ^∞ inner ball.
    """
    dom, cod = A.domain, A.codomain
    _, q = dom.exponents("dual")
    R, r = cod.exponents("dual")
    n_in, n_out = dom.dim, cod.dim

    coo = sparse.coo_array(A.matrix)
    nonzero = coo.data != 0
    in_blocks = np.asarray(coo.col[nonzero], dtype=np.int64) // n_in
    out_blocks = np.asarray(coo.row[nonzero], dtype=np.int64) // n_out
    pairs = np.unique(in_blocks * cod.outer_dim + out_blocks)

    best = 0.0
    for n in np.unique(pairs // cod.outer_dim):
        touched = pairs[pairs // cod.outer_dim == n] % cod.outer_dim
        columns = slice(n * n_in, (n + 1) * n_in)
        if touched.size == 1:
            m = int(touched[0])
            block = A.matrix[m * n_out : (m + 1) * n_out, columns]
            dense = block.toarray() if sparse.issparse(block) else np.asarray(block)
            if q == 1:
                value = float(lp_norm(dense, r, axis=0).max(initial=0.0))
            elif math.isinf(r):
                value = float(lp_norm(dense, conjugate(q), axis=1).max(initial=0.0))
            elif q == 2 and r == 2:
                value = _spectral_norm(dense, seed)
            else:
                return None
        elif math.isinf(q) and 2 ** (n_in - 1) * touched.size * n_out * n_in <= VERTEX_WORK_LIMIT:
            rows = np.concatenate([np.arange(m * n_out, (m + 1) * n_out) for m in touched])
            block = A.matrix[rows][:, columns]
            dense = block.toarray() if sparse.issparse(block) else np.asarray(block)
            images = (_sign_vertices(n_in) @ dense.T).reshape(-1, touched.size, n_out)
            value = float(lp_norm(lp_norm(images, r, axis=2), R, axis=1).max(initial=0.0))
        else:
            return None
        best = max(best, value)
    return best


def _upper_bound(A: OperatorRep, stats: _BlockStats, seed: int = 0) -> tuple[float, bool]:
    dom, cod = A.domain, A.codomain
    P, q = dom.exponents("dual")
    R, r = cod.exponents("dual")

    if q == 1 and (not dom.is_sum or P == 1):
        column_norms = lp_norm(stats.col_inner, R, axis=0)
        return float(column_norms.max(initial=0.0)), True
    if math.isinf(r) and (not cod.is_sum or math.isinf(R)):
        row_norms = lp_norm(stats.row_inner, conjugate(P), axis=1)
        return float(row_norms.max(initial=0.0)), True
    if not dom.is_sum and not cod.is_sum and q == 2 and r == 2:
        return _spectral_norm(A.matrix, seed), True
    if dom.is_sum and P == 1:
        outer = _outer_l1_norm(A, seed)
        if outer is not None:
            return outer, True

    beta = _block_bound(stats.col_r, stats.row_q, stats.col_sum, stats.row_sum, q, r, dom.dim, cod.dim)
    if not dom.is_sum and not cod.is_sum:
        return float(beta[0, 0]), False
    return _majorant_norm(beta, P if dom.is_sum else 1.0, R if cod.is_sum else 1.0), False


def _candidate_starts(A: OperatorRep, stats: _BlockStats) -> list[np.ndarray]:
    """Deterministic starts: the heaviest column, and per input block the norming vector of its heaviest row."""
    dom, cod = A.domain, A.codomain
    _, q = dom.exponents("dual")
    R, _ = cod.exponents("dual")
    starts = []

    column_norms = lp_norm(stats.col_inner, R, axis=0)
    if column_norms.size:
        e = np.zeros(dom.size)
        e[int(np.argmax(column_norms))] = 1.0
        starts.append(e)

    for n in range(dom.outer_dim):
        block = slice(n * dom.dim, (n + 1) * dom.dim)
        heaviest = int(np.argmax(stats.row_inner[:, n]))
        if stats.row_inner[heaviest, n] == 0:
            continue
        selector = np.zeros(cod.size)
        selector[heaviest] = 1.0
        row = A.apply_transpose(selector)
        x = np.zeros(dom.size)
        x[block] = norming_vector(row[block], q)
        starts.append(x)
    return starts


def _boyd_iteration(A: OperatorRep, x0: np.ndarray, tol: float, max_iter: int) -> float:
    dom, cod = A.domain, A.codomain
    size = space_norm(x0, dom)
    if size == 0:
        return 0.0
    x = x0 / size
    value = space_norm(A.apply(x), cod)
    for _ in range(max_iter):
        z = space_norming_vector(A.apply(x), cod, "predual")
        x_next = space_norming_vector(A.apply_transpose(z), dom, "dual")
        next_value = space_norm(A.apply(x_next), cod)
        if next_value <= value * (1.0 + tol):
            return max(value, next_value)
        x, value = x_next, next_value
    return value


def op_norm(A: OperatorRep, *, restarts: int = 8, tol: float = 1e-10, max_iter: int = 100, seed: int = 0) -> NormEstimate:
    """
    Norm of ``A`` from its domain to its codomain, exact or bracketed.

    Closed forms are used where one applies: ℓ^1 domains, ℓ^∞ codomains,
    ℓ^2 → ℓ^2, and ℓ^1-sum domains whose input blocks are small or touch one
    output block. Otherwise the upper end is a block majorant and the lower
    end the best power iteration over deterministic and seeded starts.

    Args:
        A: Operator whose domain and codomain fix the norms
        restarts: Number of seeded random starts for the power iteration
        tol: Relative change below which one power iteration stops
        max_iter: Iteration cap per start
        seed: Seed for every random draw, including the ARPACK start vector

    Returns:
        NormEstimate with ``exact`` set when the bracket closes
    """
    stats = _block_stats(A.matrix, A.domain, A.codomain)
    upper, exact = _upper_bound(A, stats, seed)
    if exact:
        return NormEstimate.exactly(upper)

    rng = np.random.Generator(np.random.PCG64(seed))
    starts = _candidate_starts(A, stats) + [rng.standard_normal(A.domain.size) for _ in range(restarts)]
    lower = 0.0
    for x0 in starts:
        lower = max(lower, _boyd_iteration(A, x0, tol, max_iter))
        if upper - lower <= EXACT_RTOL * max(1.0, upper):
            break

    if lower > upper * (1.0 + 1e-9) + 1e-15:
        logger.warning(f"Power iteration exceeded the upper bound ({lower} > {upper}) on {A.domain.describe()} → {A.codomain.describe()}")
    if upper - lower <= EXACT_RTOL * max(1.0, upper):
        return NormEstimate.exactly(upper)
    return NormEstimate(min(lower, upper), upper)


def _column_norms(X: np.ndarray, space: SpaceSpec) -> np.ndarray:
    outer, inner = space.exponents("dual")
    if not space.is_sum:
        return lp_norm(X, inner, axis=0)
    return lp_norm(lp_norm(X.reshape(space.outer_dim, space.dim, -1), inner, axis=1), outer, axis=0)


def restricted_op_norm(A: OperatorRep, basis: Any, *, samples: int = 64, **options: Any) -> NormEstimate:
    """Norm of ``A`` on the span of the columns of ``basis`` (domain coordinates).

    The upper end is the norm on the whole domain.  The lower end is the
    best ratio ‖Ay‖/‖y‖ over the basis vectors, sign patterns of them and
    Gaussian combinations, drawn from ``options["seed"]``.
    """
    Y = basis.toarray() if sparse.issparse(basis) else np.atleast_2d(np.asarray(basis, dtype=float))
    if Y.shape[0] != A.domain.size:
        raise DimensionMismatch(f"Basis vectors have {Y.shape[0]} coordinates, {A.domain.describe()} has {A.domain.size}")
    upper = op_norm(A, **options).upper
    count = Y.shape[1]
    if count == 0:
        return NormEstimate.exactly(0.0)

    rng = np.random.Generator(np.random.PCG64(options.get("seed", 0)))
    coefficients = np.hstack([np.eye(count), rng.choice([-1.0, 1.0], size=(count, samples)), rng.standard_normal((count, samples))])
    vectors = Y @ coefficients
    sizes = _column_norms(vectors, A.domain)
    images = _column_norms(np.asarray(A.matrix @ vectors), A.codomain)
    ratios = np.divide(images, sizes, out=np.zeros_like(images), where=sizes > 0)
    lower = min(float(ratios.max(initial=0.0)), upper)
    if upper - lower <= EXACT_RTOL * max(1.0, upper):
        return NormEstimate.exactly(upper)
    return NormEstimate(lower, upper)


def restricted_predual_norm(phi: VecRep | Any, A: Iterable[Any], space: SpaceSpec | None = None) -> float:
    """sup over the unit ball of S* of |⟨φ, P_A x*⟩|: the predual norm of φ restricted to A.

    ``A`` holds 1-based indices for flat spaces and (i, j) pairs for two-parameter spaces.
    """
    if isinstance(phi, VecRep):
        space = space or phi.space
        coords = phi.flat
    else:
        if space is None:
            raise ValueError("A space is required when phi is given as raw coordinates")
        coords = np.asarray(phi, dtype=float).reshape(-1)
    positions = pair_positions(A, space) if space.is_sum else index_array(A, space.size)
    restricted = np.zeros(space.size)
    restricted[positions - 1] = coords[positions - 1]
    return space_norm(restricted, space, "predual")

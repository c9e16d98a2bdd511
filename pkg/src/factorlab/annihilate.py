"""Subspace annihilation: certificate-producing finite versions of the past and future lemmata.

*Past* annihilation picks 2m fresh indices whose coordinates nearly agree
under every previously built functional, so every zero-sum signed
combination of them is almost invisible to the past.  *Future* annihilation
keeps as many admissible indices as possible while the restricted predual
norm of one functional stays below η.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import defaultdict
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Literal

import numpy as np

from .config import Tolerances
from .errors import BudgetExhausted, DimensionMismatch, InsufficientIndices, NotEnoughSets
from .opnorm import restricted_predual_norm
from .seqspace import SpaceSpec, VecRep, index_array, lp_norm

logger = logging.getLogger(__name__)

Strategy = Literal["auto", "bucket", "best_pair"]

# Relative slack for floating-point certificates when no run tolerances are given; the exact recheck uses none.
DEFAULT_RTOL: float = Tolerances.model_fields["cert_rtol"].default


def within(achieved: float, eta: float, rtol: float = DEFAULT_RTOL) -> bool:
    return achieved <= eta * (1.0 + rtol)


@dataclass(frozen=True, eq=False)
class PastCertificate:
    F: tuple[int, ...]
    signs: tuple[int, ...]
    achieved: float
    eta: float
    functional_count: int
    strategy: str
    values: np.ndarray = field(repr=False)
    row: int | None = None
    rtol: float = DEFAULT_RTOL

    @property
    def holds(self) -> bool:
        return within(self.achieved, self.eta, self.rtol) and sum(self.signs) == 0


@dataclass(frozen=True, eq=False)
class FutureCertificate:
    A: tuple[int, ...]
    achieved: float
    eta: float
    phi: np.ndarray = field(repr=False)
    predual_exponent: float = 1.0
    row: int | None = None
    rtol: float = DEFAULT_RTOL

    @property
    def holds(self) -> bool:
        return within(self.achieved, self.eta, self.rtol)


@dataclass(frozen=True)
class ConditionCCertificate:
    sets: tuple[tuple[int, ...], ...]
    coefficients: tuple[Fraction, ...]
    theta: Fraction
    achieved: Fraction

    @property
    def holds(self) -> bool:
        return sum(abs(a) for a in self.coefficients) == 1 and self.achieved <= self.theta


def enumerate_zero_sum_signs(size: int) -> Iterator[tuple[int, ...]]:
    """Every ±1 pattern of even length ``size`` whose entries sum to zero."""
    if size % 2:
        return
    for plus in itertools.combinations(range(size), size // 2):
        chosen = set(plus)
        yield tuple(1 if k in chosen else -1 for k in range(size))


def worst_sign_discrepancy(values: Any, m: int) -> float:
    """max over functionals and zero-sum sign patterns of |Σ ε_k v_k|.

    ``values`` has one row per functional and 2m columns.  For a fixed row the
    worst pattern puts +1 on the m largest values and −1 on the m smallest.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == 0:
        return 0.0
    ordered = np.sort(values, axis=1)
    return float((ordered[:, -m:].sum(axis=1) - ordered[:, :m].sum(axis=1)).max())


def exact_worst_sign_discrepancy(values: Any, m: int) -> Fraction:
    """Same quantity in rational arithmetic over the binary values of the inputs."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    worst = Fraction(0)
    for row in values:
        ordered = sorted(Fraction(float(v)) for v in row)
        worst = max(worst, sum(ordered[-m:], Fraction(0)) - sum(ordered[:m], Fraction(0)))
    return worst


def _bucket(indices: np.ndarray, values: np.ndarray, m: int, eta: float) -> np.ndarray | None:
    """Positions of the 2m indices from the lexicographically first full bucket class, or None.

    Buckets are the half-open intervals [w(ℓ−1), wℓ) with w = η/2m, taken
    simultaneously for every functional.  Labels stay floats: at widths
    near 1e-20 they run far past the int64 range.
    """
    width = eta / (2 * m)
    labels = np.floor(values / width)
    classes: dict[tuple[float, ...], list[int]] = defaultdict(list)
    for position in range(indices.size):
        classes[tuple(labels[:, position].tolist())].append(position)
    full = [members[: 2 * m] for members in classes.values() if len(members) >= 2 * m]
    if not full:
        return None
    return np.array(min(full, key=lambda members: tuple(indices[members])))


def _anchored_window(indices: np.ndarray, values: np.ndarray, m: int, eta: float, rtol: float) -> np.ndarray | None:
    """First 2m positions within η/2m of an anchor under every functional, anchors tried in index order.

    Any two such values differ by at most η/m, so the top-m minus bottom-m
    sum of each row stays below η.
    """
    radius = eta / (2 * m) * (1.0 + rtol)
    for anchor in range(indices.size):
        gaps = np.abs(values - values[:, [anchor]]).max(axis=0, initial=0.0)
        close = np.flatnonzero(gaps <= radius)
        if close.size >= 2 * m:
            return close[: 2 * m]
    return None


def _best_pair(indices: np.ndarray, values: np.ndarray, eta: float, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Lexicographically first pair (k, k′) with max_j |v_j(k) − v_j(k′)| ≤ η."""
    limit = eta * (1.0 + rtol)
    for first in range(indices.size - 1):
        gaps = np.abs(values[:, first + 1 :] - values[:, [first]]).max(axis=0, initial=0.0)
        feasible = np.flatnonzero(gaps <= limit)
        if feasible.size:
            return np.array([first, first + 1 + int(feasible[0])])
    raise InsufficientIndices(
        f"Every pair of the {indices.size} admissible indices differs by more than η = {eta:.3g} under some functional",
        admissible=int(indices.size),
        m=1,
        eta=eta,
    )


def resolve_strategy(strategy: Strategy | None, m: int) -> Literal["bucket", "best_pair"]:
    if strategy in (None, "auto"):
        return "best_pair" if m == 1 else "bucket"
    if strategy == "best_pair" and m != 1:
        raise ValueError("The best_pair strategy only applies to m = 1")
    if strategy not in ("bucket", "best_pair"):
        raise ValueError(f"Unknown past-annihilation strategy: {strategy!r}")
    return strategy


def past_from_values(
    indices: Any,
    values: Any,
    m: int,
    eta: float,
    strategy: Strategy | None = None,
    row: int | None = None,
    rtol: float = DEFAULT_RTOL,
) -> PastCertificate:
    """Core of past annihilation on a (functionals × admissible indices) value table.

    When the bucket pigeonhole comes up empty, or its class misses η after
    rounding, the pair scan (m = 1) or the anchored window (m > 1) gets a
    turn before the step is declared infeasible.
    """
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}")
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values, dtype=float).reshape(-1, indices.size)
    chosen_strategy: str = resolve_strategy(strategy, m)
    if indices.size < 2 * m:
        raise InsufficientIndices(f"Need {2 * m} admissible indices, only {indices.size} remain", admissible=int(indices.size), m=m, eta=eta)

    if values.shape[0] == 0:
        positions = np.arange(2 * m)
    elif chosen_strategy == "best_pair":
        positions = _best_pair(indices, values, eta, rtol)
    else:
        positions = _bucket(indices, values, m, eta)
        if positions is None or not within(worst_sign_discrepancy(values[:, positions], m), eta, rtol):
            logger.debug(f"Bucket class of width {eta / (2 * m):.3g} missed; scanning {indices.size} indices directly")
            if m == 1:
                positions, chosen_strategy = _best_pair(indices, values, eta, rtol), "best_pair"
            else:
                positions, chosen_strategy = _anchored_window(indices, values, m, eta, rtol), "window"
        if positions is None:
            raise InsufficientIndices(
                f"Neither a bucket of width {eta / (2 * m):.3g} nor an anchored window holds {2 * m} of the {indices.size} admissible indices",
                admissible=int(indices.size),
                m=m,
                eta=eta,
            )

    selected = values[:, positions]
    achieved = worst_sign_discrepancy(selected, m)
    certificate = PastCertificate(
        F=tuple(int(k) for k in indices[positions]),
        signs=(1,) * m + (-1,) * m,
        achieved=achieved,
        eta=float(eta),
        functional_count=int(values.shape[0]),
        strategy=chosen_strategy,
        values=selected,
        row=row,
        rtol=rtol,
    )
    if not certificate.holds:
        raise InsufficientIndices(f"Selected indices {certificate.F} reach {achieved:.3g} > η = {eta:.3g}", achieved=achieved, eta=eta)
    return certificate


def _functional_matrix(functionals: Sequence[VecRep | Any]) -> tuple[np.ndarray, SpaceSpec | None]:
    spaces = {f.space for f in functionals if isinstance(f, VecRep)}
    if len(spaces) > 1:
        raise DimensionMismatch("All functionals must live in one space")
    rows = [f.flat if isinstance(f, VecRep) else np.asarray(f, dtype=float).reshape(-1) for f in functionals]
    if rows and len({row.size for row in rows}) > 1:
        raise DimensionMismatch("Functionals have different lengths")
    return (np.vstack(rows) if rows else np.zeros((0, 0))), (spaces.pop() if spaces else None)


def past_annihilate(
    lambda0: Iterable[int],
    functionals: Sequence[VecRep | Any],
    m: int,
    eta: float,
    strategy: Strategy | None = None,
    *,
    rtol: float = DEFAULT_RTOL,
) -> PastCertificate:
    """
    Choose F ⊆ Λ₀ with |F| = 2m so every zero-sum signing of F is η-small on every functional.

    Args:
        lambda0: Candidate indices, 1-based
        functionals: Row vectors the signings are paired with
        m: Half the size of F
        eta: Target bound on the summed pairing
        strategy: Pigeonhole strategy; "auto" picks bucket with scan fallbacks
        rtol: Relative slack allowed when the certificate is checked

    Raises:
        InsufficientIndices: When no strategy finds a subset under η
    """
    matrix, space = _functional_matrix(functionals)
    size = space.size if space is not None else (matrix.shape[1] if matrix.size else None)
    lam = np.fromiter((int(k) for k in lambda0), dtype=np.int64)
    lam = np.unique(lam) if size is None else index_array(lam, size)
    values = matrix[:, lam - 1] if matrix.shape[0] else np.zeros((0, lam.size))
    return past_from_values(lam, values, m, eta, strategy, rtol=rtol)


def past_annihilate_2d(
    row: int,
    lambda0: Iterable[int],
    vectors: Sequence[VecRep],
    M: int,
    eta: float,
    strategy: Strategy | None = None,
    *,
    rtol: float = DEFAULT_RTOL,
) -> PastCertificate:
    """Past annihilation against the row-``row`` slices ⟨f_{row,k}, y_ℓ⟩ of two-parameter vectors."""
    lam = np.unique(np.fromiter((int(k) for k in lambda0), dtype=np.int64))
    if not vectors:
        return past_from_values(lam, np.zeros((0, lam.size)), M, eta, strategy, row=row, rtol=rtol)
    space = vectors[0].space
    if not space.is_sum or any(v.space != space for v in vectors):
        raise DimensionMismatch("past_annihilate_2d needs vectors of one two-parameter space")
    if not 1 <= row <= space.outer_dim:
        raise DimensionMismatch(f"Row {row} is outside 1..{space.outer_dim}")
    lam = index_array(lam, space.dim)
    values = np.vstack([v.coords[row - 1, lam - 1] for v in vectors])
    return past_from_values(lam, values, M, eta, strategy, row=row, rtol=rtol)


def _greedy_keep(lam: np.ndarray, phi: np.ndarray, predual_exponent: float, eta: float, rtol: float) -> np.ndarray:
    """Largest prefix of Λ ordered by (|φ_k|, k) whose restricted ℓ^{p′} norm is ≤ η."""
    magnitudes = np.abs(phi[lam - 1])
    order = np.lexsort((lam, magnitudes))
    ordered = magnitudes[order]
    if math.isinf(predual_exponent):
        prefix_norms = np.maximum.accumulate(ordered)
    elif predual_exponent == 1:
        prefix_norms = np.cumsum(ordered)
    else:
        prefix_norms = np.cumsum(ordered**predual_exponent) ** (1.0 / predual_exponent)
    count = int(np.searchsorted(prefix_norms, eta * (1.0 + rtol), side="right"))
    return np.sort(lam[order[:count]])


def future_annihilate(
    lambda_: Iterable[int],
    phi: VecRep | Any,
    eta: float,
    min_keep: int,
    space: SpaceSpec | None = None,
    *,
    rtol: float = DEFAULT_RTOL,
) -> FutureCertificate:
    """Keep a maximum-cardinality A ⊆ Λ with restricted predual norm of φ on A at most η."""
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if min_keep < 0:
        raise ValueError(f"min_keep must be non-negative, got {min_keep}")
    space = phi.space if isinstance(phi, VecRep) else space
    if space is None or space.is_sum:
        raise ValueError("future_annihilate needs a flat space (use future_annihilate_2d for ℓ^p-sums)")
    coords = phi.flat if isinstance(phi, VecRep) else np.asarray(phi, dtype=float).reshape(-1)
    if coords.size != space.size:
        raise DimensionMismatch(f"Functional has {coords.size} coordinates, space has {space.size}")
    lam = index_array(lambda_, space.size)
    predual_exponent = space.exponents("predual")[1]

    kept = _greedy_keep(lam, coords, predual_exponent, eta, rtol)
    if kept.size < min_keep:
        raise BudgetExhausted(
            f"Only {kept.size} of {lam.size} admissible indices fit under η = {eta:.3g}; {min_keep} are needed",
            kept=int(kept.size),
            min_keep=min_keep,
            eta=eta,
        )
    achieved = restricted_predual_norm(coords, kept, space)
    return FutureCertificate(A=tuple(int(k) for k in kept), achieved=achieved, eta=float(eta), phi=coords, predual_exponent=predual_exponent, rtol=rtol)


def future_annihilate_2d(
    lambdas: Mapping[int, Iterable[int]] | Sequence[Iterable[int]],
    phi: VecRep | Any,
    eta: float,
    min_keep: int | Mapping[int, int],
    space: SpaceSpec | None = None,
    *,
    rtol: float = DEFAULT_RTOL,
) -> list[FutureCertificate]:
    """Row-wise future annihilation: for every row i, sup over the unit ball of |⟨φ, R_{{i}×J_i} y⟩| ≤ η."""
    space = phi.space if isinstance(phi, VecRep) else space
    if space is None or not space.is_sum:
        raise ValueError("future_annihilate_2d needs a two-parameter space")
    coords = (phi.coords if isinstance(phi, VecRep) else np.asarray(phi, dtype=float)).reshape(space.outer_dim, space.dim)
    rows = dict(lambdas) if isinstance(lambdas, Mapping) else {i + 1: lam for i, lam in enumerate(lambdas)}
    row_space = SpaceSpec.lp(space.inner_p, space.dim)

    certificates = []
    for row in sorted(rows):
        if not 1 <= row <= space.outer_dim:
            raise DimensionMismatch(f"Row {row} is outside 1..{space.outer_dim}")
        keep = min_keep.get(row, 0) if isinstance(min_keep, Mapping) else min_keep
        try:
            certificate = future_annihilate(rows[row], coords[row - 1], eta, keep, space=row_space, rtol=rtol)
        except BudgetExhausted as e:
            raise e.with_context(row=row)
        certificates.append(
            FutureCertificate(
                A=certificate.A,
                achieved=certificate.achieved,
                eta=certificate.eta,
                phi=certificate.phi,
                predual_exponent=certificate.predual_exponent,
                row=row,
                rtol=rtol,
            )
        )
    return certificates


def exact_future_achieved(certificate: FutureCertificate) -> Fraction | None:
    """Rational restricted norm for ℓ^1 / ℓ^∞ preduals; None where the norm is irrational in general."""
    magnitudes = [Fraction(abs(float(certificate.phi[k - 1]))) for k in certificate.A]
    if certificate.predual_exponent == 1:
        return sum(magnitudes, Fraction(0))
    if math.isinf(certificate.predual_exponent):
        return max(magnitudes, default=Fraction(0))
    return None


def _as_fraction(theta: float | Fraction | str) -> Fraction:
    if isinstance(theta, float):
        return Fraction(repr(theta))
    return Fraction(theta)


def condition_c_certificate_linf(
    sets: Sequence[Iterable[int]],
    vectors: Sequence[VecRep | Any],
    theta: float | Fraction | str,
) -> ConditionCCertificate:
    """Constructive condition (C) on ℓ^∞: a_j = 1/N for the first N = ⌈1/θ⌉ disjoint sets.

    Because the sets are disjoint the combination Σ a_j P_{A_j} x_j has sup
    norm max_j ‖P_{A_j} x_j‖_∞ / N ≤ 1/N ≤ θ, computed exactly.
    """
    theta_q = _as_fraction(theta)
    if not 0 < theta_q <= 1:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    normalized = [tuple(sorted({int(k) for k in s})) for s in sets]
    seen: set[int] = set()
    for s in normalized:
        if seen.intersection(s):
            raise ValueError("Condition (C) sets must be pairwise disjoint")
        seen.update(s)
    if len(vectors) != len(normalized):
        raise DimensionMismatch(f"{len(normalized)} sets but {len(vectors)} vectors")

    N = math.ceil(1 / theta_q)
    if len(normalized) < N:
        raise NotEnoughSets(f"θ = {theta_q} needs N = {N} disjoint sets, got {len(normalized)}", required=N, supplied=len(normalized))

    coefficients = tuple(Fraction(1, N) if j < N else Fraction(0) for j in range(len(normalized)))
    achieved = Fraction(0)
    for j in range(N):
        coords = vectors[j].flat if isinstance(vectors[j], VecRep) else np.asarray(vectors[j], dtype=float).reshape(-1)
        if lp_norm(coords, math.inf) > 1:
            raise ValueError(f"Vector {j + 1} has sup norm above 1")
        if normalized[j]:
            peak = max(Fraction(abs(float(coords[k - 1]))) for k in normalized[j])
            achieved = max(achieved, peak * coefficients[j])
    return ConditionCCertificate(sets=tuple(normalized), coefficients=coefficients, theta=theta_q, achieved=achieved)

"""Inductive block-basis constructions (one- and two-parameter).

Each step picks a block b_i = s_{k₀} − s_{k₁} (with b_i* of the same
pattern on the dual side) by past annihilation against T b_j*, j < i, and
then shrinks the admissible set by future annihilation of T* b_i.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import sparse

from .annihilate import DEFAULT_RTOL, FutureCertificate, PastCertificate, Strategy, future_annihilate, future_annihilate_2d, past_from_values, within
from .errors import DimensionMismatch, DimensionTooSmall, FactorLabError, InsufficientIndices
from .opnorm import OperatorRep, restricted_predual_norm
from .seqspace import SpaceSpec, VecRep, flat_position, lp_norm, precede_unrank, space_norm
from .telemetry import trace_operation

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EtaSchedule:
    """η_i = K_u⁻¹·4^{−i−1} for i = 1..length."""

    K_u: float
    length: int

    def eta(self, i: int) -> float:
        if i < 1:
            raise ValueError(f"Steps start at 1, got {i}")
        return 4.0 ** (-i - 1) / self.K_u

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(self.eta(i) for i in range(1, self.length + 1))

    @property
    def total(self) -> float:
        return math.fsum(self.values)

    @property
    def limit(self) -> float:
        """Sum of the infinite schedule, K_u⁻¹/12."""
        return 1.0 / (12.0 * self.K_u)


@dataclass(frozen=True)
class BudgetPlan:
    target_blocks: int
    reserve: int
    min_keep: tuple[int, ...]
    required_dim: int
    required_outer_dim: int

    def keep(self, step: int) -> int:
        return self.min_keep[step - 1]


def plan_budget(space: SpaceSpec, target_blocks: int, reserve: int | None = None) -> BudgetPlan:
    """Per-step minimum admissible-set sizes: min_keep(i) = 2·(target − i) + reserve.

    Every step consumes two fresh (inner) indices, so the truncation needs
    2·target + reserve of them; two-parameter spaces also need enough rows
    for the first ``target`` ranks of ≺.
    """
    if target_blocks < 1:
        raise ValueError(f"target_blocks must be at least 1, got {target_blocks}")
    reserve = 4 * target_blocks if reserve is None else reserve
    if reserve < 0:
        raise ValueError(f"reserve must be non-negative, got {reserve}")

    min_keep = tuple(2 * (target_blocks - i) + reserve for i in range(1, target_blocks + 1))
    required_dim = 2 * target_blocks + reserve
    required_outer_dim = max(precede_unrank(k).i for k in range(1, target_blocks + 1)) if space.is_sum else 1

    with trace_operation("blocks.plan_budget", {"target_blocks": target_blocks, "reserve": reserve, "required_dim": required_dim}):
        if space.dim < required_dim or space.outer_dim < required_outer_dim:
            raise DimensionTooSmall(
                f"{space.describe()} cannot host {target_blocks} blocks with reserve {reserve}: "
                f"needs dim ≥ {required_dim}" + (f" and outer_dim ≥ {required_outer_dim}" if space.is_sum else ""),
                required_dim=required_dim,
                required_outer_dim=required_outer_dim if space.is_sum else None,
                stage="plan",
            )
    return BudgetPlan(target_blocks, reserve, min_keep, required_dim, required_outer_dim)


@dataclass
class BlockSystem:
    """Blocks B_j = {k₀ < k₁} (flat 1-based positions) with their certificates.

    b_j lives in the predual and b_j* in the dual; both have coordinates
    +1 at k₀ and −1 at k₁.  ``admissible`` holds A_1 ⊇ A_2 ⊇ ... ⊇ A_{K+1}.
    """

    space: SpaceSpec
    eta: EtaSchedule
    plan: BudgetPlan
    pairs: list[tuple[int, int]] = field(default_factory=list)
    past_certs: list[PastCertificate] = field(default_factory=list)
    past_sums: list[float] = field(default_factory=list)
    admissible: list[tuple[int, ...]] = field(default_factory=list)
    future_certs: list[FutureCertificate] = field(default_factory=list)
    rtol: float = DEFAULT_RTOL

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def ranks(self) -> list[int]:
        return list(range(1, len(self) + 1))

    def synthesis(self, blocks: Sequence[int] | None = None) -> sparse.csr_array:
        """size × K matrix whose columns are the chosen b_j* (1-based block numbers)."""
        chosen = list(range(1, len(self) + 1)) if blocks is None else list(blocks)
        rows, cols, data = [], [], []
        for column, j in enumerate(chosen):
            k0, k1 = self.pairs[j - 1]
            rows += [k0 - 1, k1 - 1]
            cols += [column, column]
            data += [1.0, -1.0]
        return sparse.csr_array((data, (rows, cols)), shape=(self.space.size, len(chosen)))

    def b(self, j: int) -> VecRep:
        return VecRep(self.synthesis([j]).toarray().reshape(self.space.shape), self.space, "predual")

    def b_star(self, j: int) -> VecRep:
        return VecRep(self.synthesis([j]).toarray().reshape(self.space.shape), self.space, "dual")


@dataclass
class BlockSystem2D(BlockSystem):
    """Two-parameter blocks laid out in ≺ order: block k sits in row i of precede_unrank(k).

    ``families[k − 1][i]`` is J_{k,i}; ``future_rows[k − 1]`` holds one
    certificate per row for step k.
    """

    rows: list[int] = field(default_factory=list)
    inner_pairs: list[tuple[int, int]] = field(default_factory=list)
    families: list[dict[int, tuple[int, ...]]] = field(default_factory=list)
    future_rows: list[list[FutureCertificate]] = field(default_factory=list)
    running_max: list[int] = field(default_factory=list)


def _check_operator(T: OperatorRep, space: SpaceSpec) -> None:
    if T.domain != space or T.codomain != space:
        raise DimensionMismatch(f"T must act on {space.describe()}, got {T.domain.describe()} → {T.codomain.describe()}")


def _block_vector(size: int, k0: int, k1: int) -> np.ndarray:
    b = np.zeros(size)
    b[k0 - 1] = 1.0
    b[k1 - 1] = -1.0
    return b


def _past_step(lam: np.ndarray, images: list[np.ndarray], positions: np.ndarray, eta_i: float, step: int, strategy: Strategy | None, row: int | None = None, rtol: float = DEFAULT_RTOL):
    """Past annihilation with η_i split evenly over the i − 1 functionals."""
    values = np.vstack([image[positions - 1] for image in images]) if images else np.zeros((0, lam.size))
    per_functional = eta_i / (step - 1) if step > 1 else eta_i
    return past_from_values(lam, values, 1, per_functional, strategy, row=row, rtol=rtol)


def build_blocks_1d(
    T: OperatorRep,
    space: SpaceSpec,
    target_blocks: int,
    *,
    reserve: int | None = None,
    strategy: Strategy | None = None,
    plan: BudgetPlan | None = None,
    rtol: float = DEFAULT_RTOL,
) -> BlockSystem:
    if space.is_sum:
        raise ValueError("build_blocks_1d needs a flat space; use build_blocks_2d for ℓ^p-sums")
    _check_operator(T, space)
    plan = plan or plan_budget(space, target_blocks, reserve)
    schedule = EtaSchedule(space.K_u, target_blocks)
    system = BlockSystem(space=space, eta=schedule, plan=plan, rtol=rtol)

    A = np.arange(1, space.size + 1, dtype=np.int64)
    system.admissible.append(tuple(int(k) for k in A))
    images: list[np.ndarray] = []

    with trace_operation("blocks.build_1d", {"space": space.describe(), "target_blocks": target_blocks}) as span:
        for i in range(1, target_blocks + 1):
            eta_i = schedule.eta(i)
            try:
                past = _past_step(A, images, A, eta_i, i, strategy, rtol=rtol)
                k0, k1 = past.F
                past_sum = math.fsum(abs(image[k0 - 1] - image[k1 - 1]) for image in images)
                if not within(past_sum, eta_i, rtol):
                    raise InsufficientIndices(f"Summed past pairing {past_sum:.3g} exceeds η_{i} = {eta_i:.3g}", achieved=past_sum, eta=eta_i)
                b = _block_vector(space.size, k0, k1)
                future = future_annihilate(A[A > k1], T.apply_transpose(b), eta_i, plan.keep(i), space=space, rtol=rtol)
            except FactorLabError as e:
                raise e.with_context(step=i, stage="blocks")

            images.append(T.apply(b))
            A = np.asarray(future.A, dtype=np.int64)
            system.pairs.append((k0, k1))
            system.past_certs.append(past)
            system.past_sums.append(past_sum)
            system.future_certs.append(future)
            system.admissible.append(future.A)
            logger.debug(f"Step {i}: B = {{{k0}, {k1}}}, past {past_sum:.3g}, future {future.achieved:.3g}, |A| = {A.size}")

        if span:
            span.set_attribute("blocks", len(system))
            span.set_attribute("final_admissible", int(A.size))
    logger.info(f"✓ Built {len(system)} blocks on {space.describe()}")
    return system


def build_blocks_2d(
    T: OperatorRep,
    space: SpaceSpec,
    target_blocks: int,
    *,
    reserve: int | None = None,
    strategy: Strategy | None = None,
    plan: BudgetPlan | None = None,
    rtol: float = DEFAULT_RTOL,
) -> BlockSystem2D:
    if not space.is_sum:
        raise ValueError("build_blocks_2d needs a two-parameter space")
    _check_operator(T, space)
    plan = plan or plan_budget(space, target_blocks, reserve)
    schedule = EtaSchedule(space.K_u, target_blocks)
    system = BlockSystem2D(space=space, eta=schedule, plan=plan, rtol=rtol)

    order = [precede_unrank(k) for k in range(1, target_blocks + 1)]
    J = {i: np.arange(1, space.dim + 1, dtype=np.int64) for i in range(1, space.outer_dim + 1)}
    system.families.append({i: tuple(int(j) for j in lam) for i, lam in J.items()})
    images: list[np.ndarray] = []
    running = 0

    with trace_operation("blocks.build_2d", {"space": space.describe(), "target_blocks": target_blocks}) as span:
        for k in range(1, target_blocks + 1):
            row = order[k - 1].i
            eta_k = schedule.eta(k)
            lam0 = J[row]
            try:
                past = _past_step(lam0, images, (row - 1) * space.dim + lam0, eta_k, k, strategy, row=row, rtol=rtol)
                f0, f1 = past.F
                k0, k1 = flat_position(row, f0, space), flat_position(row, f1, space)
                past_sum = math.fsum(abs(image[k0 - 1] - image[k1 - 1]) for image in images)
                if not within(past_sum, eta_k, rtol):
                    raise InsufficientIndices(f"Summed past pairing {past_sum:.3g} exceeds η_{k} = {eta_k:.3g}", achieved=past_sum, eta=eta_k)
                running = max(running, f1)
                b = _block_vector(space.size, k0, k1)
                active_rows = {index.i for index in order[k:]}
                keeps = {i: plan.keep(k) if i in active_rows else 0 for i in J}
                futures = future_annihilate_2d({i: lam[lam > running] for i, lam in J.items()}, T.apply_transpose(b), eta_k, keeps, space=space, rtol=rtol)
            except FactorLabError as e:
                raise e.with_context(step=k, rank=k, row=row, stage="blocks")

            images.append(T.apply(b))
            J = {cert.row: np.asarray(cert.A, dtype=np.int64) for cert in futures if cert.row is not None}
            system.pairs.append((k0, k1))
            system.rows.append(row)
            system.inner_pairs.append((f0, f1))
            system.past_certs.append(past)
            system.past_sums.append(past_sum)
            system.future_rows.append(futures)
            system.families.append({i: tuple(int(j) for j in lam) for i, lam in J.items()})
            system.running_max.append(running)
            logger.debug(f"Rank {k}: row {row}, inner pair ({f0}, {f1}), past {past_sum:.3g}, running max {running}")

        if span:
            span.set_attribute("blocks", len(system))
            span.set_attribute("rows_used", len(set(system.rows)))
    logger.info(f"✓ Built {len(system)} two-parameter blocks on {space.describe()} over {len(set(system.rows))} rows")
    return system


def _pairing_matrix(system: BlockSystem, T: OperatorRep) -> np.ndarray:
    """W[i, j] = ⟨b_i, T b_j*⟩."""
    S = system.synthesis()
    return np.asarray((S.T @ np.asarray(T.matrix @ S.toarray())))


def check_block_system(system: BlockSystem, T: OperatorRep, rtol: float | None = None) -> list[str]:
    """Re-derive every construction invariant from the final blocks; returns the violations found.

    Float comparisons use the slack the system was built with unless ``rtol`` overrides it.
    """
    rtol = system.rtol if rtol is None else rtol
    violations: list[str] = []
    K = len(system)
    positions = [k for pair in system.pairs for k in pair]
    if len(set(positions)) != len(positions):
        violations.append("blocks are not pairwise disjoint")
    if any(k0 >= k1 for k0, k1 in system.pairs):
        violations.append("a block is not ordered k₀ < k₁")

    S = system.synthesis()
    gram = (S.T @ S).toarray()
    if not np.array_equal(gram, 2.0 * np.eye(K)):
        violations.append("⟨b_i, b_j*⟩ ≠ 2δ_ij")

    W = _pairing_matrix(system, T)
    for i in range(1, K + 1):
        past_sum = math.fsum(np.abs(W[i - 1, : i - 1]))
        if not within(past_sum, system.eta.eta(i), rtol):
            violations.append(f"step {i}: past sum {past_sum:.3g} > η = {system.eta.eta(i):.3g}")

    T_star_b = np.asarray(T.matrix.T @ S.toarray())
    if isinstance(system, BlockSystem2D):
        _check_two_parameter(system, T_star_b, violations, rtol)
    else:
        for i in range(1, K + 1):
            before, after = set(system.admissible[i - 1]), set(system.admissible[i])
            if not after <= before:
                violations.append(f"step {i}: A_{i + 1} ⊄ A_{i}")
            if not set(system.pairs[i - 1]) <= before:
                violations.append(f"step {i}: B_{i} ⊄ A_{i}")
            if set(system.pairs[i - 1]) & after:
                violations.append(f"step {i}: B_{i} meets A_{i + 1}")
            future = restricted_predual_norm(T_star_b[:, i - 1], system.admissible[i], system.space)
            if not within(future, system.eta.eta(i), rtol):
                violations.append(f"step {i}: future norm {future:.3g} > η = {system.eta.eta(i):.3g}")
    return violations


def _check_two_parameter(system: BlockSystem2D, T_star_b: np.ndarray, violations: list[str], rtol: float) -> None:
    space = system.space
    row_space = SpaceSpec.lp(space.inner_p, space.dim)
    previous_max = 0
    for k in range(1, len(system) + 1):
        row = system.rows[k - 1]
        f0, f1 = system.inner_pairs[k - 1]
        before, after = system.families[k - 1], system.families[k]
        if precede_unrank(k).i != row:
            violations.append(f"rank {k}: block placed in row {row}, ≺ order says {precede_unrank(k).i}")
        if not {f0, f1} <= set(before[row]):
            violations.append(f"rank {k}: B_k ⊄ {{{row}}}×J_{{{k},{row}}}")
        if {f0, f1} & set(after[row]):
            violations.append(f"rank {k}: B_k meets {{{row}}}×J_{{{k + 1},{row}}}")
        if min(f0, f1) <= previous_max:
            violations.append(f"rank {k}: inner indices do not exceed the running max {previous_max}")
        previous_max = max(previous_max, f1)
        slices = T_star_b[:, k - 1].reshape(space.outer_dim, space.dim)
        for i, lam in after.items():
            if not set(lam) <= set(before[i]):
                violations.append(f"rank {k}: J_{{{k + 1},{i}}} ⊄ J_{{{k},{i}}}")
            if lam and min(lam) <= previous_max:
                violations.append(f"rank {k}: J_{{{k + 1},{i}}} keeps indices ≤ the running max")
            future = restricted_predual_norm(slices[i - 1], lam, row_space)
            if not within(future, system.eta.eta(k), rtol):
                violations.append(f"rank {k}, row {i}: future norm {future:.3g} > η = {system.eta.eta(k):.3g}")


def future_tail_bound(system: BlockSystem, T: OperatorRep, i: int, coeffs: Sequence[float] | Any) -> tuple[float, float]:
    """|⟨b_i, T Σ_{j>i} a_j b_j*⟩| and the bound η_i·Σ_rows ‖R_row x‖ it must respect.

    For flat spaces the bound is η_i·‖x‖; for ℓ^p-sums the row norms are
    added up, since the future estimate holds row by row.
    """
    K = len(system)
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
    if coeffs.size != K - i:
        raise DimensionMismatch(f"Expected {K - i} coefficients for the blocks after {i}, got {coeffs.size}")
    x = system.synthesis(range(i + 1, K + 1)) @ coeffs if coeffs.size else np.zeros(system.space.size)
    b_i = system.synthesis([i]).toarray().reshape(-1)
    lhs = abs(float(b_i @ T.apply(x)))
    space = system.space
    if space.is_sum:
        rows = lp_norm(np.asarray(x).reshape(space.outer_dim, space.dim), space.inner_p, axis=1)
        scale = float(rows.sum())
    else:
        scale = space_norm(x, space)
    return lhs, system.eta.eta(i) * scale

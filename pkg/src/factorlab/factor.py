"""Branch selection, the operators B, Q, P, J, V, M, N and the verified factorization Id = N·H·M.

The factored copy E is a space of the same family as S* whose coordinates
are the retained blocks.  Y = span{b_j* : j retained} is identified with E
through B, so that PHJ becomes the matrix G = Q·P·H·B on E and
N = G⁻¹·Q·P.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Literal

import numpy as np
import scipy.linalg
from scipy import sparse

from .blocks import BlockSystem, BlockSystem2D
from .config import Tolerances
from .errors import DefectTooLarge, DimensionMismatch, RetentionImpossible
from .opnorm import NormEstimate, OperatorRep, op_norm, restricted_op_norm
from .reports import CheckRecord, NormRecord, VerificationReport
from .seqspace import SpaceSpec, lp_norm
from .telemetry import trace_operation

logger = logging.getLogger(__name__)

HTag = Literal["T", "Id_minus_T"]


@dataclass(frozen=True)
class Selection:
    """The branch H and the retained blocks, listed in copy order.

    Two-parameter selections list ``retained`` row by row (rank order inside
    a row) so that position (r, c) of the copy is block ``retained[(r−1)·width + c − 1]``.
    """

    H_tag: HTag
    retained: tuple[int, ...]
    diag_values: tuple[float, ...]
    min_retained: int
    copy_space: SpaceSpec
    rows: tuple[int, ...] | None = None
    width: int | None = None


@dataclass(frozen=True, eq=False)
class FactorBundle:
    B: OperatorRep
    Q: OperatorRep
    P: OperatorRep
    J: OperatorRep
    V: OperatorRep
    M: OperatorRep
    N: OperatorRep
    H: OperatorRep
    H_tag: HTag
    J_set: tuple[int, ...]
    diag_values: tuple[float, ...]
    selection: Selection
    G: np.ndarray
    G_inv: OperatorRep
    norms: dict[str, NormEstimate] = field(default_factory=dict)


def operator_H(T: OperatorRep, tag: HTag) -> OperatorRep:
    if tag == "T":
        return T
    if T.is_sparse:
        return OperatorRep(sparse.identity(T.shape[0], format="csr") - T.matrix, T.domain, T.codomain)
    return OperatorRep(np.eye(T.shape[0]) - T.matrix, T.domain, T.codomain)


def _columns(op: OperatorRep, S: sparse.csr_array) -> np.ndarray:
    return np.asarray(op.matrix @ S.toarray())


def _pairing(blocks: BlockSystem, op: OperatorRep, retained: Sequence[int] | None = None) -> np.ndarray:
    """W[a, b] = ⟨b_{r_a}, op b_{r_b}*⟩ over the listed blocks."""
    S = blocks.synthesis(retained)
    return S.toarray().T @ _columns(op, S)


def _block_norm(space: SpaceSpec) -> float:
    # every b_j* is a (+1, −1) pattern inside a single row
    return float(lp_norm(np.array([1.0, -1.0]), space.inner_p))


def _default_retained(blocks: BlockSystem) -> tuple[int, ...]:
    if isinstance(blocks, BlockSystem2D):
        return tuple(sorted(blocks.ranks, key=lambda k: (blocks.rows[k - 1], k)))
    return tuple(blocks.ranks)


def _retained(blocks: BlockSystem, retained: Sequence[int] | None) -> tuple[int, ...]:
    if retained is None:
        return _default_retained(blocks)
    retained = tuple(int(k) for k in retained)
    if not retained:
        raise ValueError("At least one block must be retained")
    if len(set(retained)) != len(retained) or not all(1 <= k <= len(blocks) for k in retained):
        raise ValueError(f"Retained blocks must be distinct ranks in 1..{len(blocks)}")
    return retained


def copy_space_for(blocks: BlockSystem, retained: Sequence[int] | None = None) -> SpaceSpec:
    """The factored copy E carried by the retained blocks."""
    retained = _retained(blocks, retained)
    space = blocks.space
    if not isinstance(blocks, BlockSystem2D):
        return SpaceSpec.lp(space.p, len(retained))
    counts = Counter(blocks.rows[k - 1] for k in retained)
    widths = set(counts.values())
    row_major = sorted(retained, key=lambda k: (blocks.rows[k - 1], k))
    if len(widths) != 1 or list(retained) != row_major:
        raise ValueError("Two-parameter retained blocks must fill a rectangle of rows, listed row by row")
    return SpaceSpec.lp_sum(space.p, SpaceSpec.lp(space.inner_p, widths.pop()), len(counts), space.K_u, space.K_s)


def _select_1d(blocks: BlockSystem, d: np.ndarray, in_T: list[bool], in_C: list[bool], min_retained: int | None) -> Selection:
    K = len(blocks)
    min_retained = math.ceil(K / 2) if min_retained is None else min_retained
    candidates: list[tuple[HTag, list[int]]] = [
        ("T", [j for j in range(1, K + 1) if in_T[j - 1]]),
        ("Id_minus_T", [j for j in range(1, K + 1) if in_C[j - 1]]),
    ]
    for tag, chosen in candidates:
        if len(chosen) >= min_retained:
            return Selection(tag, tuple(chosen), tuple(float(v) for v in d), min_retained, SpaceSpec.lp(blocks.space.p, len(chosen)))
    raise RetentionImpossible(
        f"Neither branch retains {min_retained} of {K} blocks (T: {len(candidates[0][1])}, Id − T: {len(candidates[1][1])})",
        min_retained=min_retained,
        stage="select",
    )


def _trim(sets: dict[int, list[int]]) -> tuple[tuple[int, ...], int, tuple[int, ...]]:
    """Common width w maximizing |rows|·w (ties go to the larger w); keeps the first w blocks of each row."""
    best_w, best_count = 0, -1
    for w in sorted({len(v) for v in sets.values()}, reverse=True):
        count = w * sum(1 for v in sets.values() if len(v) >= w)
        if count > best_count:
            best_w, best_count = w, count
    rows = tuple(sorted(r for r, v in sets.items() if len(v) >= best_w))
    return rows, best_w, tuple(k for r in rows for k in sets[r][:best_w])


def _select_2d(blocks: BlockSystem2D, d: np.ndarray, in_T: list[bool], in_C: list[bool], min_retained: int | None) -> Selection:
    min_retained = 1 if min_retained is None else min_retained
    by_row: dict[int, list[int]] = defaultdict(list)
    for k, row in enumerate(blocks.rows, start=1):
        by_row[row].append(k)

    def large(flags: list[bool]) -> dict[int, list[int]]:
        sets = {row: [k for k in ranks if flags[k - 1]] for row, ranks in by_row.items()}
        return {row: kept for row, kept in sets.items() if kept and len(kept) >= math.ceil(len(by_row[row]) / 2)}

    T_rows, C_rows = large(in_T), large(in_C)
    order: list[tuple[HTag, dict[int, list[int]]]] = [("T", T_rows), ("Id_minus_T", C_rows)]
    if len(T_rows) < math.ceil(len(by_row) / 2):
        order.reverse()

    space = blocks.space
    for tag, sets in order:
        if not sets:
            continue
        rows, width, retained = _trim(sets)
        if len(retained) >= min_retained:
            copy = SpaceSpec.lp_sum(space.p, SpaceSpec.lp(space.inner_p, width), len(rows), space.K_u, space.K_s)
            return Selection(tag, retained, tuple(float(v) for v in d), min_retained, copy, rows=rows, width=width)
    raise RetentionImpossible(
        f"Neither branch retains {min_retained} blocks in a rectangle of rows",
        min_retained=min_retained,
        T_rows=sorted(T_rows),
        complement_rows=sorted(C_rows),
        stage="select",
    )


def select_H(T: OperatorRep, blocks: BlockSystem, min_retained: int | None = None) -> Selection:
    """Pick H ∈ {T, Id − T} with |⟨b_j, H b_j*⟩| ≥ 1 on enough blocks.

    Ties |d_j| = 1 count for T.  The membership tests run in exact rational
    arithmetic on the computed d_j, so every block lies in at least one set.
    """
    if len(blocks) == 0:
        raise ValueError("No blocks to select from")
    if min_retained is not None and min_retained < 1:
        raise ValueError(f"min_retained must be at least 1, got {min_retained}")

    with trace_operation("factor.select_H", {"blocks": len(blocks)}) as span:
        d = np.diag(_pairing(blocks, T, blocks.ranks))
        exact = [Fraction(float(v)) for v in d]
        in_T = [abs(v) >= 1 for v in exact]
        in_C = [abs(2 - v) >= 1 for v in exact]
        if isinstance(blocks, BlockSystem2D):
            selection = _select_2d(blocks, d, in_T, in_C, min_retained)
        else:
            selection = _select_1d(blocks, d, in_T, in_C, min_retained)
        if span:
            span.set_attribute("branch", selection.H_tag)
            span.set_attribute("retained", len(selection.retained))

    logger.info(f"✓ Selected H = {selection.H_tag}, retaining {len(selection.retained)} of {len(blocks)} blocks")
    return selection


def build_B(blocks: BlockSystem, retained: Sequence[int] | None = None, copy_space: SpaceSpec | None = None) -> OperatorRep:
    """B e_j = b_j*/‖b_j*‖, from the copy E into S*."""
    retained = _retained(blocks, retained)
    copy = copy_space or copy_space_for(blocks, retained)
    if copy.size != len(retained):
        raise DimensionMismatch(f"{copy.describe()} cannot carry {len(retained)} blocks")
    S = blocks.synthesis(retained)
    return OperatorRep(S / _block_norm(blocks.space), copy, blocks.space)


def build_Q(blocks: BlockSystem, retained: Sequence[int] | None = None, copy_space: SpaceSpec | None = None) -> OperatorRep:
    """Q x* = Σ_j (‖b_j*‖/|B_j|)·⟨b_j, x*⟩ e_j, from S* onto the copy E."""
    retained = _retained(blocks, retained)
    copy = copy_space or copy_space_for(blocks, retained)
    if copy.size != len(retained):
        raise DimensionMismatch(f"{copy.describe()} cannot carry {len(retained)} blocks")
    S = blocks.synthesis(retained)
    return OperatorRep(S.T * (_block_norm(blocks.space) / 2.0), blocks.space, copy)


def block_diagonal(blocks: BlockSystem, H: OperatorRep, retained: Sequence[int] | None = None) -> np.ndarray:
    """h_j = ⟨b_j, H b_j*⟩ over the retained blocks."""
    retained = _retained(blocks, retained)
    S = blocks.synthesis(retained)
    return (S.toarray() * _columns(H, S)).sum(axis=0)


def build_P(blocks: BlockSystem, H: OperatorRep, retained: Sequence[int] | None = None) -> OperatorRep:
    """P x* = Σ_{j retained} (⟨b_j, x*⟩ / ⟨b_j, H b_j*⟩)·b_j*."""
    retained = _retained(blocks, retained)
    h = block_diagonal(blocks, H, retained)
    if np.any(h == 0):
        vanishing = [k for k, v in zip(retained, h) if v == 0]
        raise ValueError(f"⟨b_j, H b_j*⟩ vanishes for blocks {vanishing}")
    S = blocks.synthesis(retained)
    return OperatorRep(S @ sparse.diags_array(1.0 / h) @ S.T, blocks.space, blocks.space)


def crucial_identity_check(blocks: BlockSystem, H: OperatorRep, retained: Sequence[int] | None = None, samples: int = 100, seed: int = 0) -> float:
    """Largest coordinate gap between PHy − y and its expansion into earlier and later block pairings.

    For y = Σ a_j b_j* the right-hand side is
    Σ_i h_i⁻¹·(Σ_{j≺i} a_j⟨b_i, Hb_j*⟩ + Σ_{j≻i} a_j⟨b_i, Hb_j*⟩)·b_i*,
    "earlier" and "later" referring to block ranks.
    """
    retained = _retained(blocks, retained)
    S = blocks.synthesis(retained).toarray()
    W = S.T @ _columns(H, blocks.synthesis(retained))
    h = np.diag(W).copy()
    ranks = np.asarray(retained)
    earlier = np.where(ranks[:, None] > ranks[None, :], W, 0.0)
    later = np.where(ranks[:, None] < ranks[None, :], W, 0.0)
    P = build_P(blocks, H, retained)

    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(samples):
        a = rng.standard_normal(len(retained))
        y = S @ a
        lhs = P.apply(H.apply(y)) - y
        rhs = S @ ((earlier @ a + later @ a) / h)
        worst = max(worst, float(np.max(np.abs(lhs - rhs), initial=0.0)))
    return worst


def _norm_options(tolerances: Tolerances, seed: int) -> dict[str, Any]:
    return {"restarts": tolerances.power_restarts, "tol": tolerances.power_tol, "max_iter": tolerances.power_max_iter, "seed": seed}


def invert_PHJ(
    blocks: BlockSystem,
    H: OperatorRep,
    retained: Sequence[int] | None = None,
    *,
    copy_space: SpaceSpec | None = None,
    tolerances: Tolerances | None = None,
    seed: int = 0,
) -> tuple[OperatorRep, NormEstimate, np.ndarray]:
    """Inverse of PHJ on Y (in copy coordinates) by a direct solve, with the certified defect ‖PHJ − Id_Y‖.

    Returns (G⁻¹, defect, G).  Raises DefectTooLarge when the defect bracket
    does not stay below the configured ceiling.
    """
    tolerances = tolerances or Tolerances()
    B = build_B(blocks, retained, copy_space)
    Q = build_Q(blocks, retained, copy_space)
    P = build_P(blocks, H, retained)
    E = B.domain

    G = (Q @ (P @ (H @ B))).toarray()
    eye = np.eye(E.size)
    defect = op_norm(OperatorRep(G - eye, E, E), **_norm_options(tolerances, seed))
    if defect.upper > tolerances.defect_ceiling:
        raise DefectTooLarge(
            f"‖PHJ − Id_Y‖ ≤ {defect.upper:.6g} does not stay below {tolerances.defect_ceiling}",
            defect=defect.upper,
            ceiling=tolerances.defect_ceiling,
            stage="assemble",
        )
    G_inv = scipy.linalg.solve(G, eye)
    return OperatorRep(G_inv, E, E), defect, G


def range_projection(bundle: FactorBundle) -> OperatorRep:
    """BQ: the projection of S* onto Y along the kernel of Q."""
    return bundle.B @ bundle.Q


def defect_construction_bound(blocks: BlockSystem) -> float:
    """What the η budget promises for ‖PHJ − Id_Y‖."""
    total = blocks.eta.total
    K_u, K_s = blocks.space.K_u, blocks.space.K_s
    if isinstance(blocks, BlockSystem2D):
        return 2.0 * total + 4.0 * K_u**3 * K_s * total
    return 2.0 * total * (1.0 + K_u)


def _at_most(name: str, measured: float, bound: float, rtol: float = 0.0, detail: str | None = None) -> CheckRecord:
    passed = bool(measured <= bound + rtol * abs(bound))
    return CheckRecord(name=name, measured=float(measured), bound=float(bound), passed=passed, detail=detail)


def _at_least(name: str, measured: float, bound: float, detail: str | None = None) -> CheckRecord:
    return CheckRecord(name=name, measured=float(measured), bound=float(bound), passed=bool(measured >= bound), detail=detail or "lower limit")


def _sparse_deviation(matrix: Any) -> float:
    coo = sparse.coo_array(matrix)
    return float(np.max(np.abs(coo.data), initial=0.0))


def assemble(
    blocks: BlockSystem,
    T: OperatorRep,
    min_retained: int | None = None,
    *,
    selection: Selection | None = None,
    tolerances: Tolerances | None = None,
    seed: int = 0,
) -> tuple[FactorBundle, VerificationReport]:
    """
    Build B, Q, P, M and N for a block system and verify the factorization.

    N·H·M = Id_E holds by construction once (PHJ)⁻¹ exists; every norm bound is
    recorded as a check, so a run can fail verification without raising.

    Args:
        blocks: One- or two-parameter block system for T
        T: Operator the blocks were built for
        min_retained: Lower limit on retained blocks when ``selection`` is not given
        selection: Precomputed branch and retained blocks
        tolerances: Numerical tolerances; defaults to ``Tolerances()``
        seed: Seed for norm estimation and sampled identity checks

    Returns:
        The operator bundle and its verification report

    Raises:
        RetentionImpossible: When too few blocks can be retained
        DefectTooLarge: When ‖PHJ − Id‖ reaches the ceiling
    """
    tolerances = tolerances or Tolerances()
    space = blocks.space
    K_u, K_s = space.K_u, space.K_s
    options = _norm_options(tolerances, seed)

    with trace_operation("factor.assemble", {"space": space.describe(), "blocks": len(blocks)}) as span:
        selection = selection or select_H(T, blocks, min_retained)
        retained, E = selection.retained, selection.copy_space
        H = operator_H(T, selection.H_tag)

        B = build_B(blocks, retained, E)
        Q = build_Q(blocks, retained, E)
        P = build_P(blocks, H, retained)
        h = block_diagonal(blocks, H, retained)
        crucial = crucial_identity_check(blocks, H, retained, tolerances.crucial_samples, seed)
        G_inv, defect, G = invert_PHJ(blocks, H, retained, copy_space=E, tolerances=tolerances, seed=seed)

        QP = Q @ P
        N = OperatorRep(sparse.csr_array(G_inv.matrix) @ QP.matrix, space, E)
        M = J = B
        V = B @ N
        BQ = B @ Q
        eye = np.eye(E.size)

        residual = op_norm(OperatorRep((N @ (H @ M)).toarray() - eye, E, E), **options)
        qb_deviation = float(np.max(np.abs((Q @ B).toarray() - eye), initial=0.0))
        idempotence = _sparse_deviation(BQ.matrix @ BQ.matrix - BQ.matrix)

        norms = {
            "B": op_norm(B, **options),
            "Q": op_norm(Q, **options),
            "Q|_Y": restricted_op_norm(Q, blocks.synthesis(retained), **options),
            "P": op_norm(P, **options),
            "J": op_norm(J, **options),
            "V": op_norm(V, **options),
            "M": op_norm(M, **options),
            "N": op_norm(N, **options),
            "BQ": op_norm(BQ, **options),
        }
        inverse = op_norm(G_inv, **options)
        products = {
            "B·Q|_Y": norms["B"] * norms["Q|_Y"],
            "J·V": norms["J"] * norms["V"],
            "M·N": norms["M"] * norms["N"],
            "B·Q": norms["B"] * norms["Q"],
        }

        construction = defect_construction_bound(blocks)
        inverse_bound = 1.5 if defect.upper <= 1.0 / 3.0 else 1.0 / (1.0 - defect.upper)
        d_exact = [Fraction(v) for v in selection.diag_values]
        totality = min(max(abs(v), abs(2 - v)) for v in d_exact)
        rtol = tolerances.norm_rtol

        checks = [
            _at_least("branch totality", float(totality), 1.0, "min over blocks of max(|d_j|, |2 − d_j|)"),
            _at_least("retained diagonal", float(np.min(np.abs(h))), 1.0 - tolerances.algebraic, "min |⟨b_j, H b_j*⟩| over retained blocks"),
            _at_most("QB = Id", qb_deviation, 1e-12),
            _at_most("residual identity", residual.upper, tolerances.residual, detail="‖N·H·M − Id_E‖"),
            _at_most("crucial identity", crucial, tolerances.algebraic),
            _at_most("range projection idempotence", idempotence, tolerances.algebraic, detail="max |(BQ)² − BQ|"),
            _at_most("neumann defect", defect.upper, 1.0 / 3.0, rtol),
            _at_most("inverse norm", inverse.upper, inverse_bound, rtol, detail="‖(PHJ)⁻¹‖"),
            _at_most("defect construction bound", defect.upper, construction, rtol),
            _at_most("‖B‖", norms["B"].upper, 2 * K_u**2 * K_s, rtol),
            _at_most("‖Q‖", norms["Q"].upper, 2 * K_u * K_s, rtol),
            _at_most("‖B‖·‖Q|_Y‖", products["B·Q|_Y"].upper, 4 * K_u**3 * K_s**2, rtol),
            _at_most("‖P‖", norms["P"].upper, 8 * K_u**4 * K_s**2, rtol),
            _at_most("‖J‖·‖V‖", products["J·V"].upper, 12 * K_u**4 * K_s**2, rtol),
            _at_most("‖M‖·‖N‖", products["M·N"].upper, 48 * K_u**7 * K_s**4, rtol),
            _at_most("‖BQ‖", norms["BQ"].lower, products["B·Q"].upper, rtol, detail="lower bracket of ‖BQ‖ against ‖B‖·‖Q‖"),
        ]

        report = VerificationReport(
            space=space.describe(),
            copy_space=E.describe(),
            branch=selection.H_tag,
            retained=list(retained),
            residual_identity=residual.upper,
            neumann_defect=NormRecord.from_estimate(defect),
            inverse_norm=NormRecord.from_estimate(inverse),
            defect_construction_bound=construction,
            crucial_identity_deviation=crucial,
            idempotence_deviation=idempotence,
            norms={name: NormRecord.from_estimate(estimate) for name, estimate in norms.items()},
            norm_products={name: NormRecord.from_estimate(estimate) for name, estimate in products.items()},
            checks=checks,
        )
        bundle = FactorBundle(
            B=B,
            Q=Q,
            P=P,
            J=J,
            V=V,
            M=M,
            N=N,
            H=H,
            H_tag=selection.H_tag,
            J_set=retained,
            diag_values=tuple(float(v) for v in h),
            selection=selection,
            G=G,
            G_inv=G_inv,
            norms={**norms, "(PHJ)^-1": inverse},
        )

        if span:
            span.set_attribute("branch", selection.H_tag)
            span.set_attribute("residual", residual.upper)
            span.set_attribute("defect", defect.upper)
            span.set_attribute("verdict", report.verdict)

    if report.verdict == "pass":
        logger.info(f"✓ Factorization verified on {E.describe()}: residual {residual.upper:.3g}, ‖M‖·‖N‖ ≤ {products['M·N'].upper:.6g}")
    else:
        failed = ", ".join(check.name for check in report.failed_checks())
        logger.warning(f"Factorization checks failed on {E.describe()}: {failed}")
    return bundle, report

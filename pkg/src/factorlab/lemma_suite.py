"""Randomized oracle suite for the annihilation procedures and the condition-(C) certificate.

Every case is small enough (dim ≤ 12) for exhaustive enumeration: sign
patterns and pairs for past annihilation, subsets and extreme points for
future annihilation.
"""

from __future__ import annotations

import itertools
import logging
import math
from fractions import Fraction

import numpy as np
from pydantic import BaseModel, Field, computed_field

from .annihilate import (
    condition_c_certificate_linf,
    enumerate_zero_sum_signs,
    future_annihilate,
    past_annihilate,
)
from .errors import InsufficientIndices
from .seqspace import SpaceSpec, conjugate, lp_norm, norming_vector
from .telemetry import trace_operation

logger = logging.getLogger(__name__)

CONDITION_C_THETAS = (Fraction(1), Fraction(1, 2), Fraction(1, 4), Fraction(1, 100))
DUAL_EXPONENTS = (math.inf, 1.0, 2.0, 3.0)
RANDOM_UNIT_VECTORS = 256


class ConditionCRecord(BaseModel):
    theta: str
    N: int
    achieved: str
    holds: bool


class LemmaSuiteResult(BaseModel):
    cases: int
    seed: int
    max_dim: int
    checks: dict[str, int] = Field(default_factory=dict)
    skipped: int = 0
    discrepancies: list[str] = Field(default_factory=list)
    condition_c: list[ConditionCRecord] = Field(default_factory=list)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return not self.discrepancies and all(record.holds for record in self.condition_c)


def _count(result: LemmaSuiteResult, name: str) -> None:
    result.checks[name] = result.checks.get(name, 0) + 1


def _past_case(rng: np.random.Generator, case: int, max_dim: int, tol: float, result: LemmaSuiteResult) -> None:
    dim = int(rng.integers(2, max_dim + 1))
    m = 2 if dim >= 4 and rng.random() < 0.3 else 1
    functionals = rng.integers(0, 8, size=(int(rng.integers(0, 4)), dim)) / 8.0
    if rng.random() < 0.5:
        functionals = functionals + rng.normal(scale=0.01, size=functionals.shape)
    eta = float(rng.uniform(0.02, 0.4))
    lambda0 = np.arange(1, dim + 1)
    limit = eta * (1.0 + tol)

    try:
        cert = past_annihilate(lambda0, list(functionals), m, eta, rtol=tol)
    except InsufficientIndices:
        if m == 1:
            _count(result, "past.infeasible_pairs")
            for k0, k1 in itertools.combinations(range(dim), 2):
                if functionals.shape[0] == 0 or np.abs(functionals[:, k0] - functionals[:, k1]).max() <= limit:
                    result.discrepancies.append(f"case {case}: past reported infeasible but pair ({k0 + 1}, {k1 + 1}) meets η = {eta:.6g}")
                    break
        else:
            result.skipped += 1
        return

    if len(cert.F) != 2 * m or not set(cert.F) <= set(lambda0.tolist()):
        result.discrepancies.append(f"case {case}: past returned F = {cert.F} for m = {m}")
        return
    columns = np.asarray(cert.F) - 1
    worst = 0.0
    for signs in enumerate_zero_sum_signs(2 * m):
        if functionals.shape[0]:
            worst = max(worst, float(np.abs(functionals[:, columns] @ np.asarray(signs)).max()))
    _count(result, "past.sign_patterns")
    if worst > eta * (1.0 + tol) or abs(worst - cert.achieved) > tol * max(1.0, worst):
        result.discrepancies.append(f"case {case}: worst zero-sum discrepancy {worst:.12g} vs certificate {cert.achieved:.12g}, η = {eta:.6g}")

    if cert.strategy == "best_pair" and functionals.shape[0]:
        _count(result, "past.lexicographic_pair")
        for k0, k1 in itertools.combinations(range(dim), 2):
            if np.abs(functionals[:, k0] - functionals[:, k1]).max() <= limit:
                if (k0 + 1, k1 + 1) != cert.F:
                    result.discrepancies.append(f"case {case}: best_pair chose {cert.F}, first feasible pair is ({k0 + 1}, {k1 + 1})")
                break


def _subset_aggregates(magnitudes: np.ndarray, predual: float) -> tuple[np.ndarray, np.ndarray]:
    n = magnitudes.size
    bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    if math.isinf(predual):
        totals = (bits * magnitudes).max(axis=1, initial=0.0)
    else:
        totals = (bits @ magnitudes**predual) ** (1.0 / predual)
    return bits.sum(axis=1), totals


def _future_case(rng: np.random.Generator, case: int, max_dim: int, tol: float, result: LemmaSuiteResult) -> None:
    dim = int(rng.integers(2, max_dim + 1))
    p = DUAL_EXPONENTS[int(rng.integers(len(DUAL_EXPONENTS)))]
    space = SpaceSpec.lp(p, dim)
    predual = conjugate(p)
    phi = rng.exponential(scale=0.05, size=dim) * rng.choice([-1.0, 1.0], size=dim)
    phi[rng.random(dim) < 0.2] = 0.0
    lam = np.flatnonzero(rng.random(dim) < 0.8) + 1
    eta = float(rng.uniform(0.01, 0.2))

    cert = future_annihilate(lam, phi, eta, 0, space=space, rtol=tol)
    A = np.asarray(cert.A, dtype=np.int64)
    if not set(cert.A) <= set(lam.tolist()) or cert.achieved > eta * (1.0 + tol):
        result.discrepancies.append(f"case {case}: future certificate A = {cert.A} violates A ⊆ Λ or achieved ≤ η")
        return

    restricted = phi[A - 1] if A.size else np.zeros(0)
    if math.isinf(p):
        _count(result, "future.extreme_points")
        brute = 0.0
        if A.size:
            signs = np.array(list(itertools.product((-1.0, 1.0), repeat=A.size)))
            brute = float((signs @ restricted).max())
    else:
        _count(result, "future.norming_vector")
        brute = float(restricted @ norming_vector(restricted, p)) if A.size else 0.0
        if A.size:
            samples = rng.standard_normal((RANDOM_UNIT_VECTORS, A.size))
            samples /= lp_norm(samples, p, axis=1)[:, None]
            sampled = float(np.abs(samples @ restricted).max())
            if sampled > brute * (1.0 + tol) + tol:
                result.discrepancies.append(f"case {case}: a random unit vector pairs to {sampled:.12g} > {brute:.12g}")
    if abs(brute - cert.achieved) > tol * max(1.0, brute):
        result.discrepancies.append(f"case {case}: future achieved {cert.achieved:.12g}, brute force {brute:.12g} (p = {p})")

    _count(result, "future.maximality")
    sizes, totals = _subset_aggregates(np.abs(phi[lam - 1]), predual)
    best = int(sizes[totals <= eta * (1.0 + tol)].max(initial=0))
    if best != A.size:
        result.discrepancies.append(f"case {case}: future kept {A.size} indices, largest feasible subset has {best} (p = {p})")


def _condition_c(rng: np.random.Generator, result: LemmaSuiteResult) -> None:
    for theta in CONDITION_C_THETAS:
        N = math.ceil(1 / theta)
        width = 2
        sets = [tuple(range(j * width + 1, (j + 1) * width + 1)) for j in range(N)]
        vectors = []
        for s in sets:
            x = np.zeros(N * width)
            x[s[0] - 1] = rng.choice([-1.0, 1.0])
            vectors.append(x)
        cert = condition_c_certificate_linf(sets, vectors, theta)
        holds = cert.holds and cert.achieved == Fraction(1, N) and cert.achieved <= theta
        result.condition_c.append(ConditionCRecord(theta=str(theta), N=N, achieved=str(cert.achieved), holds=holds))


def run_lemma_suite(cases: int = 10_000, seed: int = 0, max_dim: int = 12, tol: float = 1e-9) -> LemmaSuiteResult:
    """Run ``cases`` randomized past and future cases (alternating) plus the condition-(C) thetas."""
    if cases < 0:
        raise ValueError(f"cases must be non-negative, got {cases}")
    if not 2 <= max_dim <= 12:
        raise ValueError(f"max_dim must lie in 2..12 for exhaustive enumeration, got {max_dim}")

    rng = np.random.Generator(np.random.PCG64(seed))
    result = LemmaSuiteResult(cases=cases, seed=seed, max_dim=max_dim)
    with trace_operation("lemma_suite.run", {"cases": cases, "seed": seed, "max_dim": max_dim}) as span:
        for case in range(1, cases + 1):
            if case % 2:
                _past_case(rng, case, max_dim, tol, result)
            else:
                _future_case(rng, case, max_dim, tol, result)
        _condition_c(rng, result)
        if span:
            span.set_attribute("discrepancies", len(result.discrepancies))
            span.set_attribute("passed", result.passed)

    if result.passed:
        logger.info(f"✓ Lemma suite: {cases} cases, no discrepancies ({result.skipped} skipped)")
    else:
        logger.warning(f"Lemma suite found {len(result.discrepancies)} discrepancies in {cases} cases")
    return result

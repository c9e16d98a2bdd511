"""Report schema (schema_version 1) for runs, batches and verification."""

from __future__ import annotations

import math
from collections.abc import Iterable
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, computed_field

SCHEMA_VERSION = 1
RNG_NAME = "numpy.random.PCG64"


def jsonable(value: Any) -> Any:
    """Plain-JSON copy of error context values (numpy scalars, tuples, sets, infinities)."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset, np.ndarray)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else list(value)
        return [jsonable(v) for v in items]
    return str(value)


def as_intervals(indices: Iterable[int]) -> list[list[int]]:
    """Compress sorted indices into closed [start, end] runs."""
    runs: list[list[int]] = []
    for k in sorted(int(i) for i in indices):
        if runs and k == runs[-1][1] + 1:
            runs[-1][1] = k
        else:
            runs.append([k, k])
    return runs


class NormRecord(BaseModel):
    lower: float
    upper: float
    exact: bool

    @classmethod
    def from_estimate(cls, estimate: Any) -> NormRecord:
        return cls(lower=estimate.lower, upper=estimate.upper, exact=estimate.exact)


class CheckRecord(BaseModel):
    name: str
    measured: float
    bound: float
    passed: bool
    detail: str | None = None


class VerificationReport(BaseModel):
    space: str
    copy_space: str
    branch: Literal["T", "Id_minus_T"]
    retained: list[int]
    residual_identity: float
    neumann_defect: NormRecord
    inverse_norm: NormRecord
    defect_construction_bound: float
    crucial_identity_deviation: float
    idempotence_deviation: float
    norms: dict[str, NormRecord]
    norm_products: dict[str, NormRecord]
    checks: list[CheckRecord]

    @computed_field  # type: ignore[prop-decorator]
    @property
    def verdict(self) -> Literal["pass", "fail"]:
        return "pass" if all(check.passed for check in self.checks) else "fail"

    def failed_checks(self) -> list[CheckRecord]:
        return [check for check in self.checks if not check.passed]


class PastRecord(BaseModel):
    step: int
    row: int | None = None
    F: list[int]
    signs: list[int]
    achieved: float
    eta: float
    functional_count: int
    strategy: str
    past_sum: float


class FutureRecord(BaseModel):
    step: int
    row: int | None = None
    kept: int
    achieved: float
    eta: float


class BlockSummary(BaseModel):
    kind: Literal["one_parameter", "two_parameter"]
    count: int
    pairs: list[list[int]]
    rows: list[int] | None = None
    inner_pairs: list[list[int]] | None = None
    eta: list[float]
    eta_total: float
    past: list[PastRecord]
    future: list[FutureRecord]
    final_admissible: dict[str, list[list[int]]]
    invariant_violations: list[str] = Field(default_factory=list)


class SelectionRecord(BaseModel):
    branch: Literal["T", "Id_minus_T"]
    retained: list[int]
    min_retained: int
    diag_values: list[float]
    rows: list[int] | None = None
    width: int | None = None


class ExactRecheck(BaseModel):
    checked: int
    skipped: int
    failures: list[str] = Field(default_factory=list)

    @computed_field  # type: ignore[prop-decorator]
    @property
    def passed(self) -> bool:
        return not self.failures


class FailureRecord(BaseModel):
    stage: str
    error: str
    message: str
    context: dict[str, Any] = Field(default_factory=dict)


class RunReport(BaseModel):
    schema_version: int = SCHEMA_VERSION
    rng: str = RNG_NAME
    config: dict[str, Any]
    operator: dict[str, Any] | None = None
    blocks: BlockSummary | None = None
    selection: SelectionRecord | None = None
    verification: VerificationReport | None = None
    exact_recheck: ExactRecheck | None = None
    failure: FailureRecord | None = None
    wall_time_s: float | None = None

    @computed_field  # type: ignore[prop-decorator]
    @property
    def verdict(self) -> Literal["pass", "fail"]:
        if self.failure is not None or self.verification is None:
            return "fail"
        if self.exact_recheck is not None and not self.exact_recheck.passed:
            return "fail"
        return self.verification.verdict

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


class BatchFailure(BaseModel):
    index: int
    seed: int
    stage: str
    error: str
    message: str


class BatchSummary(BaseModel):
    schema_version: int = SCHEMA_VERSION
    run_count: int
    pass_count: int
    pass_rate: float
    worst_residual: float | None = None
    worst_defect: float | None = None
    worst_norm_product: float | None = None
    failures: list[BatchFailure] = Field(default_factory=list)
    failed_checks: dict[str, int] = Field(default_factory=dict)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"

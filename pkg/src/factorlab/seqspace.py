"""Truncated sequence spaces: norms, pairings, projections and the two-parameter order.

A :class:`SpaceSpec` always describes the *dual* space S* on which operators
act; the predual S carries the conjugate exponents.  Public index sets are
1-based (s_1, s_2, ...) and two-parameter coordinates are stored row-major,
so the pair (i, j) lives at flat position (i − 1)·dim + j.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass
from functools import total_ordering
from math import isqrt
from pathlib import Path
from typing import Any, Literal

import numpy as np
from scipy import sparse

from .errors import DimensionMismatch, IndexOutOfRange

logger = logging.getLogger(__name__)

Side = Literal["dual", "predual"]


def conjugate(p: float) -> float:
    """Conjugate exponent with 1′ = ∞ and ∞′ = 1."""
    if not p >= 1:
        raise ValueError(f"Exponent must lie in [1, ∞], got {p}")
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def format_exponent(p: float) -> str:
    if math.isinf(p):
        return "∞"
    return f"{p:g}"


def lp_norm(x: Any, p: float, axis: int | None = None) -> Any:
    """ℓ^p norm of ``x``, over all entries or along ``axis``."""
    a = np.abs(np.asarray(x, dtype=float))
    if math.isinf(p):
        return a.max(axis=axis, initial=0.0)
    if p == 1:
        return a.sum(axis=axis)
    return np.power(np.power(a, p).sum(axis=axis), 1.0 / p)


@dataclass(frozen=True)
class SpaceSpec:
    """A truncated sequence space ℓ^p_dim or ℓ^p(ℓ^q_dim) with ``outer_dim`` coordinates.

    ``p`` is the exponent of the flat space, or the outer exponent of an
    ℓ^p-sum whose inner space is ``inner``.  The basis constants are declared,
    never estimated.
    """

    p: float
    dim: int
    inner: SpaceSpec | None = None
    outer_dim: int = 1
    K_u: float = 1.0
    K_s: float = 1.0

    def __post_init__(self) -> None:
        if not self.p >= 1:
            raise ValueError(f"Exponent must lie in [1, ∞], got {self.p}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.outer_dim < 1:
            raise ValueError(f"outer_dim must be positive, got {self.outer_dim}")
        if self.K_u < 1 or self.K_s < 1:
            raise ValueError(f"Basis constants must be ≥ 1, got K_u={self.K_u}, K_s={self.K_s}")
        if self.inner is None:
            if self.outer_dim != 1:
                raise ValueError("A flat ℓ^p space has no outer coordinates")
            if self.K_u != 1 or self.K_s != 1:
                raise ValueError("The unit vector basis of ℓ^p is 1-unconditional and 1-subsymmetric: K_u = K_s = 1")
        else:
            if self.inner.inner is not None:
                raise ValueError("Only one level of ℓ^p-sums is supported")
            if self.inner.dim != self.dim:
                raise ValueError(f"dim ({self.dim}) must equal the inner dimension ({self.inner.dim})")

    @classmethod
    def lp(cls, p: float, dim: int) -> SpaceSpec:
        return cls(p=float(p), dim=int(dim))

    @classmethod
    def lp_sum(cls, p_outer: float, inner: SpaceSpec, outer_dim: int, K_u: float = 1.0, K_s: float = 1.0) -> SpaceSpec:
        return cls(p=float(p_outer), dim=inner.dim, inner=inner, outer_dim=int(outer_dim), K_u=float(K_u), K_s=float(K_s))

    @property
    def kind(self) -> Literal["lp", "lp_sum"]:
        return "lp" if self.inner is None else "lp_sum"

    @property
    def is_sum(self) -> bool:
        return self.inner is not None

    @property
    def inner_p(self) -> float:
        return self.p if self.inner is None else self.inner.p

    @property
    def size(self) -> int:
        return self.dim * self.outer_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.dim,) if self.inner is None else (self.outer_dim, self.dim)

    def exponents(self, side: Side = "dual") -> tuple[float, float]:
        """(outer, inner) exponents on the given side; equal for flat spaces."""
        outer, inner = self.p, self.inner_p
        if side == "predual":
            return conjugate(outer), conjugate(inner)
        return outer, inner

    def require_ambient(self) -> SpaceSpec:
        if self.dim < 2:
            raise ValueError(f"An ambient space needs dim ≥ 2, got {self.dim}")
        return self

    def describe(self) -> str:
        if self.inner is None:
            return f"ℓ^{format_exponent(self.p)}_{self.dim}"
        return f"ℓ^{format_exponent(self.p)}(ℓ^{format_exponent(self.inner_p)}_{self.dim})_{self.outer_dim}"


def _as_coords(coords: Any, space: SpaceSpec) -> np.ndarray:
    arr = np.asarray(coords, dtype=float)
    if arr.size != space.size or (arr.ndim > 1 and arr.shape != space.shape):
        raise DimensionMismatch(f"Coordinates of shape {arr.shape} do not fit {space.describe()}", expected=list(space.shape), got=list(arr.shape))
    return arr


def space_norm(coords: Any, space: SpaceSpec, side: Side = "dual") -> float:
    """Norm of raw coordinates in ``space`` (or its predual)."""
    arr = _as_coords(coords, space)
    outer, inner = space.exponents(side)
    if not space.is_sum:
        return float(lp_norm(arr.reshape(-1), inner))
    rows = lp_norm(arr.reshape(space.outer_dim, space.dim), inner, axis=1)
    return float(lp_norm(rows, outer))


def norming_vector(w: Any, p: float) -> np.ndarray:
    """Unit vector x of ℓ^p with ⟨w, x⟩ = ‖w‖_{p′}."""
    w = np.asarray(w, dtype=float).reshape(-1)
    x = np.zeros_like(w)
    if w.size == 0:
        return x
    if not np.any(w):
        x[0] = 1.0
        return x
    if math.isinf(p):
        return np.sign(w)
    if p == 1:
        k = int(np.argmax(np.abs(w)))
        x[k] = np.sign(w[k])
        return x
    q = conjugate(p)
    a = np.abs(w) / lp_norm(w, q)
    return np.sign(w) * np.power(a, q - 1.0)


def space_norming_vector(w: Any, space: SpaceSpec, side: Side = "dual") -> np.ndarray:
    """Flat unit vector of ``space`` on ``side`` attaining the norm of ``w`` (which lives on the other side)."""
    arr = _as_coords(w, space).reshape(-1)
    outer, inner = space.exponents(side)
    if not space.is_sum:
        return norming_vector(arr, inner)
    W = arr.reshape(space.outer_dim, space.dim)
    U = np.vstack([norming_vector(row, inner) for row in W])
    row_norms = lp_norm(W, conjugate(inner), axis=1)
    weights = norming_vector(row_norms, outer)
    return (weights[:, None] * U).reshape(-1)


@total_ordering
@dataclass(frozen=True)
class TwoParamIndex:
    """Coordinate (i, j) of a two-parameter space: i is outer, j is inner."""

    i: int
    j: int

    def __post_init__(self) -> None:
        if self.i < 1 or self.j < 1:
            raise ValueError(f"Two-parameter indices are positive, got ({self.i}, {self.j})")

    @property
    def key(self) -> tuple[int, int]:
        return (self.i + self.j, self.i)

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, TwoParamIndex):
            return NotImplemented
        return self.key < other.key

    def __iter__(self):
        yield self.i
        yield self.j


def _as_index(idx: TwoParamIndex | tuple[int, int]) -> TwoParamIndex:
    return idx if isinstance(idx, TwoParamIndex) else TwoParamIndex(int(idx[0]), int(idx[1]))


def precede_rank(idx: TwoParamIndex | tuple[int, int]) -> int:
    """Rank of (i, j) under ≺, where (i, j) ≺ (i′, j′) iff (i+j, i) <_lex (i′+j′, i′)."""
    idx = _as_index(idx)
    s = idx.i + idx.j
    return (s - 1) * (s - 2) // 2 + idx.i


def precede_unrank(k: int) -> TwoParamIndex:
    if k < 1:
        raise ValueError(f"Ranks start at 1, got {k}")
    t = (isqrt(8 * k + 1) - 1) // 2
    while t * (t + 1) // 2 < k:
        t += 1
    while t > 1 and (t - 1) * t // 2 >= k:
        t -= 1
    i = k - t * (t - 1) // 2
    return TwoParamIndex(i, t + 1 - i)


def enumerate_order(count: int) -> list[TwoParamIndex]:
    return [precede_unrank(k) for k in range(1, count + 1)]


@dataclass(frozen=True, eq=False)
class VecRep:
    """Coordinates of a vector in S* (``side="dual"``) or in S (``side="predual"``)."""

    coords: np.ndarray
    space: SpaceSpec
    side: Side = "dual"

    def __post_init__(self) -> None:
        if self.side not in ("dual", "predual"):
            raise ValueError(f"side must be 'dual' or 'predual', got {self.side!r}")
        arr = _as_coords(self.coords, self.space).reshape(self.space.shape)
        object.__setattr__(self, "coords", arr)

    @property
    def flat(self) -> np.ndarray:
        return self.coords.reshape(-1)

    def with_coords(self, coords: Any) -> VecRep:
        return VecRep(np.asarray(coords, dtype=float).reshape(self.space.shape), self.space, self.side)

    @classmethod
    def zeros(cls, space: SpaceSpec, side: Side = "dual") -> VecRep:
        return cls(np.zeros(space.shape), space, side)

    @classmethod
    def unit(cls, space: SpaceSpec, index: int | tuple[int, int] | TwoParamIndex, side: Side = "dual") -> VecRep:
        flat = np.zeros(space.size)
        if isinstance(index, (tuple, TwoParamIndex)):
            position = pair_positions([index], space)[0]
        else:
            position = index_array([index], space.size)[0]
        flat[position - 1] = 1.0
        return cls(flat.reshape(space.shape), space, side)


def index_array(A: Iterable[int], size: int) -> np.ndarray:
    """Sorted, de-duplicated 1-based indices, validated against 1..size."""
    idx = np.unique(np.fromiter((int(a) for a in A), dtype=np.int64))
    if idx.size and (idx[0] < 1 or idx[-1] > size):
        raise IndexOutOfRange(f"Index set reaches outside 1..{size}", low=int(idx[0]), high=int(idx[-1]))
    return idx


def flat_position(i: int, j: int, space: SpaceSpec) -> int:
    """1-based flat position of the pair (i, j)."""
    if not (1 <= i <= space.outer_dim and 1 <= j <= space.dim):
        raise IndexOutOfRange(f"Pair ({i}, {j}) is outside the {space.outer_dim}×{space.dim} grid", i=i, j=j)
    return (i - 1) * space.dim + j


def pair_positions(K: Iterable[TwoParamIndex | tuple[int, int]], space: SpaceSpec) -> np.ndarray:
    return np.unique(np.fromiter((flat_position(*_as_index(k), space) for k in K), dtype=np.int64))


def norm(v: VecRep) -> float:
    """‖v‖ in v's space on v's side."""
    return space_norm(v.coords, v.space, v.side)


def pair(x: VecRep, f: VecRep) -> float:
    """⟨x, f⟩ for a predual vector and a dual vector of the same space."""
    if x.space != f.space:
        raise DimensionMismatch(f"Cannot pair vectors of {x.space.describe()} and {f.space.describe()}")
    if x.side == f.side:
        raise DimensionMismatch(f"Pairing needs one predual and one dual vector, got two {x.side} vectors")
    return float(np.dot(x.flat, f.flat))


def coord_projection(A: Iterable[int], v: VecRep) -> VecRep:
    """P_A: keep the (flat, 1-based) coordinates in A and zero the rest."""
    idx = index_array(A, v.space.size) - 1
    out = np.zeros(v.space.size)
    out[idx] = v.flat[idx]
    return v.with_coords(out)


def rect_projection(K: Iterable[TwoParamIndex | tuple[int, int]], y: VecRep) -> VecRep:
    """R_K on a two-parameter vector: keep exactly the pairs (i, j) in K."""
    if not y.space.is_sum:
        raise DimensionMismatch(f"rect_projection needs a two-parameter space, got {y.space.describe()}")
    idx = pair_positions(K, y.space) - 1
    out = np.zeros(y.space.size)
    out[idx] = y.flat[idx]
    return y.with_coords(out)


def format_matrix(matrix: Any) -> str:
    """Matrix text format: ``rows cols`` then row-major values, one row per line."""
    if sparse.issparse(matrix):
        matrix = matrix.toarray()
    arr = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [f"{arr.shape[0]} {arr.shape[1]}"]
    lines.extend(" ".join(f"{value:.17g}" for value in row) for row in arr)
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> np.ndarray:
    tokens = text.split()
    if len(tokens) < 2:
        raise DimensionMismatch("Matrix text is missing its 'rows cols' header")
    rows, cols = int(tokens[0]), int(tokens[1])
    values = tokens[2:]
    if len(values) != rows * cols:
        raise DimensionMismatch(f"Header announces {rows}×{cols} = {rows * cols} values, found {len(values)}", rows=rows, cols=cols)
    return np.array(values, dtype=float).reshape(rows, cols)


def read_matrix(path: str | Path) -> np.ndarray:
    return parse_matrix(Path(path).read_text())


def write_matrix(path: str | Path, matrix: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_matrix(matrix))
    logger.debug(f"Wrote matrix to {path}")
    return path


def read_vector(path: str | Path, space: SpaceSpec, side: Side = "dual") -> VecRep:
    matrix = read_matrix(path)
    if matrix.shape[0] != 1:
        raise DimensionMismatch(f"A vector file holds a 1×n matrix, got {matrix.shape[0]}×{matrix.shape[1]}")
    return VecRep(matrix.reshape(-1), space, side)

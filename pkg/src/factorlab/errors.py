"""Exception hierarchy for the factorization pipeline.

Every error raised by a pipeline stage carries a ``context`` dict so the
harness can record where it happened (step, row, rank, stage, ...) without
parsing messages.
"""

from __future__ import annotations

from typing import Any


class FactorLabError(RuntimeError):
    """Base class for all pipeline errors."""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context: dict[str, Any] = dict(context)

    def with_context(self, **context: Any) -> FactorLabError:
        """Attach extra context without overwriting what is already known."""
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self


class DimensionMismatch(FactorLabError, ValueError):
    """Vectors, operators or spaces whose shapes do not agree."""


class IndexOutOfRange(FactorLabError, IndexError):
    """An index set reaches outside 1..dim (or outside the two-parameter grid)."""


class InsufficientIndices(FactorLabError):
    """Past annihilation could not place 2m indices in one bucket at this truncation."""


class BudgetExhausted(FactorLabError):
    """Future annihilation could not keep ``min_keep`` indices under the eta budget."""


class NotEnoughSets(FactorLabError):
    """The condition-(C) certificate needs more disjoint sets than were supplied."""


class DimensionTooSmall(FactorLabError):
    """The truncation cannot host the requested number of blocks."""

    def __init__(self, message: str, required_dim: int, required_outer_dim: int | None = None, **context: Any):
        super().__init__(message, required_dim=required_dim, required_outer_dim=required_outer_dim, **context)
        self.required_dim = required_dim
        self.required_outer_dim = required_outer_dim


class RetentionImpossible(FactorLabError):
    """Neither branch of the H selection retains ``min_retained`` blocks."""


class DefectTooLarge(FactorLabError):
    """‖PHJ − Id_Y‖ is not below 1, so PHJ cannot be inverted with a bounded inverse."""


class RecipeError(FactorLabError):
    """An operator recipe is incompatible with the requested space."""


class ConfigError(FactorLabError):
    """A run or batch configuration file is malformed."""

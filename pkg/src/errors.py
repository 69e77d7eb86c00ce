"""
Exception hierarchy for nof1.

Validation problems derive from ValueError so callers that only care about
bad input can keep catching ValueError; estimation problems are kept apart
because the CLI maps them to a different exit code.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple


class Nof1Error(Exception):
    """Base class for all nof1 errors."""


class ValidationError(Nof1Error, ValueError):
    """An input violates a documented invariant."""


class ConfigError(ValidationError):
    """A configuration document violates its schema."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class IngestError(ValidationError):
    """A panel CSV file violates the panel invariants."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None) -> None:
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class EstimationError(Nof1Error):
    """An estimator cannot be computed from the supplied data."""


class NonEstimableError(EstimationError):
    """Required kernel rows were never observed and no smoothing was requested."""

    def __init__(self, message: str, cells: Sequence[Tuple[Any, ...]] = ()) -> None:
        self.cells: List[Tuple[Any, ...]] = list(cells)
        detail = ""
        if self.cells:
            shown = ", ".join(str(c) for c in self.cells[:10])
            more = f" (+{len(self.cells) - 10} more)" if len(self.cells) > 10 else ""
            detail = f"; unobserved cells: {shown}{more}"
        super().__init__(f"{message}{detail}")


class BootstrapAbortError(EstimationError):
    """Too many bootstrap replicates failed."""

    def __init__(self, failures: int, total: int, reasons: Dict[str, int]) -> None:
        self.failures = failures
        self.total = total
        self.reasons = dict(reasons)
        super().__init__(
            f"{failures} of {total} bootstrap replicates failed "
            f"(more than 10%): {self.reasons}"
        )

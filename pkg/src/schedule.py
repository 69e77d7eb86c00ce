"""
Cyclic treatment schedules and designs.

A schedule is a block of q binary cells (0 = comparator, 1 = treatment) that
is repeated until the study horizon is filled. Time points are 1-based
everywhere in the public interface.
"""

import itertools
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.errors import ValidationError

PROBABILITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Schedule:
    """A length-q treatment block, serialised as e.g. "000000111111"."""
    cells: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.cells) < 2:
            raise ValidationError(f"schedule needs q >= 2 cells, got {len(self.cells)}")
        for index, cell in enumerate(self.cells, start=1):
            if cell not in (0, 1):
                raise ValidationError(f"schedule cell {index} must be 0 or 1, got {cell!r}")
        # normalise numpy / bool cells to plain ints so equality and hashing agree
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))

    @classmethod
    def from_string(cls, text: str) -> "Schedule":
        """Parse the compact '0'/'1' form used in configs and CLI flags."""
        stripped = text.strip()
        if not stripped or any(ch not in "01" for ch in stripped):
            raise ValidationError(f"schedule string must contain only '0' and '1', got {text!r}")
        return cls(tuple(int(ch) for ch in stripped))

    @classmethod
    def blocks(cls, *runs: Tuple[int, int]) -> "Schedule":
        """Build a schedule from (value, length) runs, e.g. blocks((0, 7), (1, 7))."""
        cells: List[int] = []
        for value, length in runs:
            cells.extend([value] * length)
        return cls(tuple(cells))

    @property
    def q(self) -> int:
        return len(self.cells)

    def __str__(self) -> str:
        return "".join(str(c) for c in self.cells)


@dataclass(frozen=True)
class Verdict:
    """Outcome of a schedule-space check; falsy when the check fails."""
    valid: bool
    reasons: Tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.valid


@dataclass(frozen=True)
class Design:
    """
    A schedule space with assignment probabilities and a study horizon.

    Probabilities default to uniform over the schedules when omitted.
    """
    schedules: Tuple[Schedule, ...]
    horizon_t: int
    probabilities: Tuple[float, ...] = ()
    name: str = ""

    def __post_init__(self) -> None:
        if not self.schedules:
            raise ValidationError("design needs at least one schedule")
        q = self.schedules[0].q
        if any(s.q != q for s in self.schedules):
            raise ValidationError("all schedules of a design must share one cycle length q")
        if self.horizon_t < q:
            raise ValidationError(f"horizon_t ({self.horizon_t}) must be >= q ({q})")
        if not self.probabilities:
            n = len(self.schedules)
            object.__setattr__(self, "probabilities", tuple([1.0 / n] * n))
        if len(self.probabilities) != len(self.schedules):
            raise ValidationError("one probability per schedule is required")
        if any(p < 0 for p in self.probabilities):
            raise ValidationError("design probabilities must be non-negative")
        total = float(np.sum(self.probabilities))
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise ValidationError(f"design probabilities must sum to 1, got {total!r}")

    @classmethod
    def uniform(cls, schedules: Sequence[Schedule], horizon_t: int, name: str = "") -> "Design":
        return cls(tuple(schedules), horizon_t, (), name)

    @property
    def q(self) -> int:
        return self.schedules[0].q

    def treatment_probability(self, k: int) -> float:
        """P(f^A(Z, k) = 1) under the design."""
        return float(sum(p * assign_treatment(s, k) for s, p in zip(self.schedules, self.probabilities)))

    def sample_schedule(self, rng: np.random.Generator) -> Schedule:
        index = int(rng.choice(len(self.schedules), p=np.asarray(self.probabilities)))
        return self.schedules[index]


def assign_treatment(schedule: Schedule, k: int) -> int:
    """Treatment status at time k (1-based) under the cyclic schedule."""
    if k < 1:
        raise ValidationError(f"time points start at 1, got k={k}")
    return schedule.cells[(k - 1) % schedule.q]


def expand_schedule(schedule: Schedule, t: int) -> np.ndarray:
    """
    Repeat the schedule until t treatment values are produced.

    Returns:
        np.ndarray: int array whose element k-1 is assign_treatment(schedule, k)
    """
    if t < 1:
        raise ValidationError(f"horizon must be >= 1, got t={t}")
    reps = -(-t // schedule.q)
    return np.tile(np.asarray(schedule.cells, dtype=np.int64), reps)[:t]


def validate_basic(schedule: Schedule) -> Verdict:
    """Both treatment and comparator appear at least once per cycle."""
    treated = sum(schedule.cells)
    if treated == 0:
        return Verdict(False, ("no treated cell: sum of cells is 0",))
    if treated == schedule.q:
        return Verdict(False, (f"no comparator cell: sum of cells equals q={schedule.q}",))
    return Verdict(True)


def validate_relaxed(schedule: Schedule) -> Verdict:
    """Both values appear twice in a row at least once within one cycle."""
    cells = schedule.cells
    reasons = []
    for x in (0, 1):
        if not any(cells[k] == x and cells[k + 1] == x for k in range(schedule.q - 1)):
            reasons.append(f"no adjacent pair of {x}s within the cycle")
    return Verdict(not reasons, tuple(reasons))


def treated_fraction(schedule: Schedule) -> float:
    """Share of treated cells in the cycle (alpha)."""
    verdict = validate_basic(schedule)
    if not verdict:
        raise ValidationError(f"treated fraction undefined for {schedule}: {verdict.reasons[0]}")
    return sum(schedule.cells) / schedule.q


def canonical_designs() -> List[Design]:
    """Commonly used N-of-1 designs in cyclic-schedule form, smallest q each."""
    per_day = tuple(
        Schedule(cells)
        for cells in itertools.product((0, 1), repeat=14)
        if 0 < sum(cells) < 14
    )
    return [
        Design((Schedule.blocks((0, 7), (1, 7)),), horizon_t=14, name="AB"),
        Design((Schedule.blocks((0, 7), (1, 7)),), horizon_t=28, name="ABAB"),
        Design((Schedule.blocks((0, 10), (1, 10)),), horizon_t=30, name="ABA"),
        Design((Schedule.blocks((0, 7), (1, 14)),), horizon_t=28, name="ABBA"),
        Design(per_day, horizon_t=14, name="per-day randomization"),
    ]


def design_by_name(name: str) -> Design:
    for design in canonical_designs():
        if design.name == name:
            return design
    raise ValidationError(f"unknown design {name!r}")

"""
One individual's observed panel: treatments, outcomes and optional covariates.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from src.errors import ValidationError
from src.schedule import Schedule, expand_schedule


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Panel for time points k = 1..t (stored 0-based: element k-1 is time k).

    Covariates are a (t, p) float matrix; columns that were string-coded on
    ingestion keep their level coding in `level_codings` (code i is the i-th
    level in first-appearance order).
    """
    a: np.ndarray
    y: np.ndarray
    l: Optional[np.ndarray] = None
    covariate_names: Tuple[str, ...] = ()
    level_codings: Dict[str, Tuple[str, ...]] = field(default_factory=dict)
    u_label: Optional[str] = None
    schedule: Optional[Schedule] = None

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=np.int64)
        y = np.asarray(self.y, dtype=np.float64)
        if a.ndim != 1 or y.ndim != 1:
            raise ValidationError("treatment and outcome must be one-dimensional")
        if len(a) == 0:
            raise ValidationError("a trajectory needs at least one time point")
        if len(y) != len(a):
            raise ValidationError(f"outcome length {len(y)} differs from treatment length {len(a)}")
        if not np.isin(a, (0, 1)).all():
            raise ValidationError("treatment values must be 0 or 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

        if self.l is not None:
            l = np.asarray(self.l, dtype=np.float64)
            if l.ndim == 1:
                l = l.reshape(-1, 1)
            if l.shape[0] != len(a):
                raise ValidationError(f"covariate length {l.shape[0]} differs from t={len(a)}")
            names = self.covariate_names or tuple(f"l{i}" for i in range(l.shape[1]))
            if len(names) != l.shape[1]:
                raise ValidationError("one covariate name per covariate column is required")
            object.__setattr__(self, "l", l)
            object.__setattr__(self, "covariate_names", tuple(names))
        elif self.covariate_names:
            raise ValidationError("covariate names given without covariate values")

        if self.schedule is not None and not np.array_equal(a, expand_schedule(self.schedule, len(a))):
            raise ValidationError(f"treatments do not follow schedule {self.schedule}")

    @property
    def t(self) -> int:
        return len(self.a)

    def arm(self, x: int) -> np.ndarray:
        """Outcomes at time points with A_k = x."""
        return self.y[self.a == x]

    def arm_times(self, x: int) -> np.ndarray:
        """1-based time points with A_k = x."""
        return np.flatnonzero(self.a == x) + 1

    def covariate(self, name: str) -> np.ndarray:
        if self.l is None or name not in self.covariate_names:
            raise ValidationError(f"unknown covariate {name!r}")
        return self.l[:, self.covariate_names.index(name)]

    def with_outcomes(self, y: np.ndarray) -> "Trajectory":
        return replace(self, y=np.asarray(y, dtype=np.float64))

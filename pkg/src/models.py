"""
Conditional models used by g-computation.

Each model describes one variable given its parents and can be fitted on a
transition frame, then sampled row-wise on a frame of simulated units.
Lagged variables are named with the "lag_" prefix ("lag_y", "lag_a", ...).
"""

import logging
from abc import ABC, abstractmethod
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.formula.api as smf

from src.errors import EstimationError, NonEstimableError, ValidationError
from src.gformula import GKernels

logger = logging.getLogger("nof1.models")

LAG_PREFIX = "lag_"


def lag_name(variable: str) -> str:
    return f"{LAG_PREFIX}{variable}"


class ModelFamily(Enum):
    CATEGORICAL = "categorical"
    GAUSSIAN_LINEAR = "gaussian_linear"


class ConditionalModel(ABC):
    """P(target | parents): fit on observed rows, sample or average on simulated rows."""

    def __init__(self, target: str, parents: Sequence[str]) -> None:
        if target in parents:
            raise ValidationError(f"{target!r} cannot be its own parent")
        self.target = target
        self.parents: Tuple[str, ...] = tuple(parents)
        self._fitted = False

    @property
    def is_fitted(self) -> bool:
        return self._fitted

    def _require_fitted(self) -> None:
        if not self._fitted:
            raise EstimationError(f"model for {self.target!r} has not been fitted")

    def _require_columns(self, frame: pd.DataFrame, with_target: bool) -> None:
        needed = list(self.parents) + ([self.target] if with_target else [])
        missing = [c for c in needed if c not in frame.columns]
        if missing:
            raise ValidationError(f"model for {self.target!r} needs columns {missing}")

    @abstractmethod
    def fit(self, frame: pd.DataFrame) -> "ConditionalModel":
        ...

    @abstractmethod
    def sample(self, frame: pd.DataFrame, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def mean(self, frame: pd.DataFrame) -> np.ndarray:
        ...


def _codes(levels: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Position of each value in `levels`, -1 where it is not a level."""
    order = np.argsort(levels, kind="stable")
    ordered = levels[order]
    index = np.minimum(np.searchsorted(ordered, values), len(levels) - 1)
    return np.where(ordered[index] == values, order[index], -1)


class CategoricalModel(ConditionalModel):
    """
    Conditional probability table over discrete parents.

    Parent configurations are flattened into a mixed-radix row code. Rows
    that were never observed (with smoothing 0) stay all-zero and sampling
    from them raises NonEstimableError.
    """

    def __init__(
        self,
        target: str,
        parents: Sequence[str],
        levels: Optional[Sequence[float]] = None,
        parent_levels: Optional[Dict[str, Sequence[float]]] = None,
        smoothing: float = 0.0,
    ) -> None:
        super().__init__(target, parents)
        if smoothing < 0:
            raise ValidationError(f"smoothing must be >= 0, got {smoothing}")
        self.smoothing = smoothing
        self.levels: Optional[np.ndarray] = None if levels is None else np.asarray(levels, dtype=np.float64)
        self.parent_levels: Dict[str, np.ndarray] = {
            name: np.asarray(values, dtype=np.float64) for name, values in (parent_levels or {}).items()
        }
        self.table = np.zeros((0, 0))
        self.counts = np.zeros((0, 0))

    @classmethod
    def from_table(
        cls,
        target: str,
        parents: Sequence[str],
        parent_levels: Dict[str, Sequence[float]],
        levels: Sequence[float],
        table: np.ndarray,
    ) -> "CategoricalModel":
        """A fitted model from an explicit table indexed [parent_1, ..., parent_p, level]."""
        model = cls(target, parents, levels, parent_levels)
        sizes = model._radix()
        table = np.asarray(table, dtype=np.float64)
        assert model.levels is not None
        if table.shape != tuple(sizes) + (len(model.levels),):
            raise ValidationError(f"table for {target!r} has shape {table.shape}")
        model.table = table.reshape(-1, len(model.levels))
        model.counts = np.zeros_like(model.table)
        model._fitted = True
        return model

    def _radix(self) -> List[int]:
        missing = [p for p in self.parents if p not in self.parent_levels]
        if missing:
            raise ValidationError(f"no levels declared for parents {missing} of {self.target!r}")
        return [len(self.parent_levels[p]) for p in self.parents]

    def _row_codes(self, frame: pd.DataFrame) -> np.ndarray:
        code = np.zeros(len(frame), dtype=np.int64)
        for parent, size in zip(self.parents, self._radix()):
            index = _codes(self.parent_levels[parent], frame[parent].to_numpy(dtype=np.float64))
            if np.any(index < 0):
                bad = frame[parent].to_numpy()[index < 0][0]
                raise NonEstimableError(
                    f"parent {parent!r} of {self.target!r} takes value {bad!r}, never seen in fitting",
                    [(self.target, f"{parent}={bad}")],
                )
            code = code * size + index
        return code

    def _decode(self, code: int) -> Tuple[str, ...]:
        parts: List[str] = []
        for parent, size in reversed(list(zip(self.parents, self._radix()))):
            code, index = divmod(code, size)
            parts.append(f"{parent}={self.parent_levels[parent][index]:g}")
        return (self.target,) + tuple(reversed(parts))

    def fit(self, frame: pd.DataFrame) -> "CategoricalModel":
        self._require_columns(frame, with_target=True)
        if len(frame) == 0:
            raise EstimationError(f"no observations to fit the model for {self.target!r}")
        if self.levels is None:
            self.levels = np.sort(frame[self.target].unique().astype(np.float64))
        for parent in self.parents:
            if parent not in self.parent_levels:
                self.parent_levels[parent] = np.sort(frame[parent].unique().astype(np.float64))
        target = _codes(self.levels, frame[self.target].to_numpy(dtype=np.float64))
        if np.any(target < 0):
            raise ValidationError(f"{self.target!r} takes values outside its declared levels")
        rows = self._row_codes(frame)
        n_rows = int(np.prod(self._radix())) if self.parents else 1
        counts = np.zeros((n_rows, len(self.levels)))
        np.add.at(counts, (rows, target), 1.0)
        totals = counts.sum(axis=1, keepdims=True)
        if self.smoothing > 0:
            table = (counts + self.smoothing) / (totals + self.smoothing * len(self.levels))
        else:
            table = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
        self.counts, self.table = counts, table
        self._fitted = True
        logger.debug(
            "Categorical model %s | %s: %d rows, %d unobserved",
            self.target, ",".join(self.parents) or "-", n_rows, int(np.sum(totals == 0)),
        )
        return self

    def _rows(self, frame: pd.DataFrame) -> np.ndarray:
        self._require_fitted()
        self._require_columns(frame, with_target=False)
        codes = self._row_codes(frame)
        rows = self.table[codes]
        empty = np.unique(codes[rows.sum(axis=1) == 0])
        if len(empty):
            raise NonEstimableError(
                f"simulation reached parent configurations of {self.target!r} never observed",
                [self._decode(int(c)) for c in empty],
            )
        return rows

    def sample(self, frame: pd.DataFrame, rng: np.random.Generator) -> np.ndarray:
        rows = self._rows(frame)
        assert self.levels is not None
        cumulative = np.cumsum(rows, axis=1)
        index = (rng.random(len(rows))[:, None] >= cumulative).sum(axis=1)
        return self.levels[np.minimum(index, len(self.levels) - 1)]

    def mean(self, frame: pd.DataFrame) -> np.ndarray:
        rows = self._rows(frame)
        assert self.levels is not None
        return np.asarray(rows @ self.levels)


class GaussianLinearModel(ConditionalModel):
    """
    Ordinary least squares mean with Gaussian residual draws.

    Samples are pred + N(0, sd(residuals)), clipped to `domain` when given.
    """

    def __init__(
        self,
        target: str,
        parents: Sequence[str],
        domain: Optional[Tuple[float, float]] = None,
    ) -> None:
        super().__init__(target, parents)
        if domain is not None and domain[0] > domain[1]:
            raise ValidationError(f"domain {domain} is reversed")
        self.domain = domain
        self.params = pd.Series(dtype=np.float64)
        self.resid_sd = 0.0
        self.n_obs = 0

    @classmethod
    def from_params(
        cls,
        target: str,
        parents: Sequence[str],
        intercept: float,
        coefficients: Dict[str, float],
        resid_sd: float,
        domain: Optional[Tuple[float, float]] = None,
    ) -> "GaussianLinearModel":
        model = cls(target, parents, domain)
        if resid_sd < 0:
            raise ValidationError("residual sd must be non-negative")
        model.params = pd.Series({"Intercept": intercept, **{p: coefficients.get(p, 0.0) for p in parents}})
        model.resid_sd = resid_sd
        model._fitted = True
        return model

    def fit(self, frame: pd.DataFrame) -> "GaussianLinearModel":
        self._require_columns(frame, with_target=True)
        n_params = len(self.parents) + 1
        if len(frame) <= n_params:
            raise EstimationError(
                f"{len(frame)} observation(s) for the linear model of {self.target!r}, more than {n_params} required"
            )
        formula = f"{self.target} ~ " + (" + ".join(self.parents) if self.parents else "1")
        result = smf.ols(formula, data=frame).fit()
        self.params = result.params
        # residual variance on n - p degrees of freedom
        self.resid_sd = float(np.sqrt(result.scale))
        self.n_obs = int(result.nobs)
        self._fitted = True
        logger.debug("Linear model %s: params=%s, resid sd=%.4g", formula, dict(self.params), self.resid_sd)
        return self

    def mean(self, frame: pd.DataFrame) -> np.ndarray:
        self._require_fitted()
        self._require_columns(frame, with_target=False)
        pred = np.full(len(frame), float(self.params.get("Intercept", 0.0)))
        for parent in self.parents:
            pred = pred + float(self.params.get(parent, 0.0)) * frame[parent].to_numpy(dtype=np.float64)
        return pred

    def sample(self, frame: pd.DataFrame, rng: np.random.Generator) -> np.ndarray:
        draws = rng.normal(self.mean(frame), self.resid_sd)
        if self.domain is not None:
            draws = np.clip(draws, self.domain[0], self.domain[1])
        return np.asarray(draws, dtype=np.float64)


def models_from_kernels(kernels: GKernels, covariate: str = "l") -> Tuple[CategoricalModel, CategoricalModel]:
    """
    Categorical (covariate, outcome) models that reproduce a set of kernels.

    The outcome model conditions on the previous treatment so that switch
    rows are used exactly where the g-formula recursion uses them.
    """
    binary = np.array([0.0, 1.0])
    l_parents = ("a", lag_name("y"), lag_name(covariate))
    l_model = CategoricalModel.from_table(
        covariate, l_parents,
        {"a": binary, lag_name("y"): kernels.y_values, lag_name(covariate): kernels.l_values},
        kernels.l_values, kernels.gl,
    )
    y_table = np.empty((kernels.nl, 2, kernels.ny, kernels.nl, 2, kernels.ny))
    for a in (0, 1):
        y_table[:, a, :, :, a, :] = kernels.gy[a]
        y_table[:, a, :, :, 1 - a, :] = kernels.gy_switch[a]
    y_parents = (covariate, "a", lag_name("y"), lag_name(covariate), lag_name("a"))
    y_model = CategoricalModel.from_table(
        "y", y_parents,
        {covariate: kernels.l_values, "a": binary, lag_name("y"): kernels.y_values,
         lag_name(covariate): kernels.l_values, lag_name("a"): binary},
        kernels.y_values, y_table,
    )
    return l_model, y_model

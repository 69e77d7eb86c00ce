"""
g-computation Monte Carlo and parametric bootstrap.

Simulated units live in a pandas frame that is stepped forward one time
point at a time: lagged columns are refreshed, the treatment is set by the
regime, covariates are drawn in declaration order and the outcome last.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import BootstrapAbortError, EstimationError, ValidationError
from src.estimate_basic import Estimate
from src.gformula import GKernels, fit_kernels, observed_initial, ucate_series
from src.models import (
    CategoricalModel,
    ConditionalModel,
    GaussianLinearModel,
    ModelFamily,
    lag_name,
    models_from_kernels,
)
from src.montecarlo import column_means, column_sds, derive_rng, run_blocks
from src.schedule import Schedule
from src.scm import Regime
from src.trajectory import Trajectory

logger = logging.getLogger("nof1.gcomputation")

# replicate failures above this share abort the bootstrap
MAX_FAILURE_SHARE = 0.10


class IntervalMethod(Enum):
    NORMAL = "normal"
    PERCENTILE = "percentile"


@dataclass(frozen=True)
class CovariateSpec:
    """
    A time-varying covariate in the g-computation model.

    A covariate with period p is drawn only at time points 1, p+1, 2p+1, ...
    and carried in between (a once-per-day measurement with p per day). A
    deterministic covariate follows its observed path and is never modelled.
    """
    name: str
    parents: Tuple[str, ...] = ()
    period: int = 1
    deterministic: bool = False
    family: Optional[ModelFamily] = None
    domain: Optional[Tuple[float, float]] = None

    def __post_init__(self) -> None:
        if not self.name or self.name in ("a", "y", "time") or self.name.startswith("lag_"):
            raise ValidationError(f"invalid covariate name {self.name!r}")
        if self.period < 1:
            raise ValidationError(f"period of {self.name!r} must be >= 1, got {self.period}")
        if self.deterministic and self.parents:
            raise ValidationError(f"deterministic covariate {self.name!r} takes no parents")


@dataclass(frozen=True)
class GModelSpec:
    """Structure of the conditional models: outcome parents plus ordered covariates."""
    outcome_parents: Tuple[str, ...]
    covariates: Tuple[CovariateSpec, ...] = ()
    family: ModelFamily = ModelFamily.CATEGORICAL
    smoothing: float = 0.0
    outcome_domain: Optional[Tuple[float, float]] = None

    def __post_init__(self) -> None:
        if self.smoothing < 0:
            raise ValidationError(f"smoothing must be >= 0, got {self.smoothing}")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ValidationError("covariate names must be distinct")
        lagged = {lag_name(v) for v in ["a", "y"] + names}
        for position, cov in enumerate(self.covariates):
            allowed = {"a", "time"} | lagged | set(names[:position])
            unknown = [p for p in cov.parents if p not in allowed]
            if unknown:
                raise ValidationError(f"covariate {cov.name!r} has unknown or later parents {unknown}")
        unknown = [p for p in self.outcome_parents if p not in {"a", "time"} | lagged | set(names)]
        if unknown:
            raise ValidationError(f"outcome has unknown parents {unknown}")

    @classmethod
    def relaxed(cls, covariates: Sequence[str] = (), family: ModelFamily = ModelFamily.CATEGORICAL,
                smoothing: float = 0.0) -> "GModelSpec":
        """The relaxed-model structure: each variable depends on the current treatment and the previous state."""
        lagged_state = (lag_name("y"),) + tuple(lag_name(c) for c in covariates)
        specs = tuple(CovariateSpec(c, ("a",) + lagged_state) for c in covariates)
        outcome = tuple(covariates) + ("a",) + lagged_state + (lag_name("a"),)
        return cls(outcome, specs, family, smoothing)

    @property
    def variables(self) -> Tuple[str, ...]:
        return ("a", "y") + tuple(c.name for c in self.covariates)


def transition_frame(traj: Trajectory) -> pd.DataFrame:
    """One row per time point k = 2..t with current and lagged values."""
    frame = pd.DataFrame({"time": np.arange(1, traj.t + 1), "a": traj.a, "y": traj.y})
    for name in traj.covariate_names:
        frame[name] = traj.covariate(name)
    for column in ["a", "y", *traj.covariate_names]:
        frame[lag_name(column)] = frame[column].shift(1)
    return frame.iloc[1:].reset_index(drop=True)


def _new_model(
    family: ModelFamily, target: str, parents: Sequence[str], smoothing: float,
    domain: Optional[Tuple[float, float]],
) -> ConditionalModel:
    if family is ModelFamily.CATEGORICAL:
        return CategoricalModel(target, parents, smoothing=smoothing)
    return GaussianLinearModel(target, parents, domain)


@dataclass(eq=False)
class FittedModels:
    """Conditional models ready for simulation, with the data they were fitted on."""
    spec: GModelSpec
    outcome_model: ConditionalModel
    covariate_models: Dict[str, ConditionalModel] = field(default_factory=dict)
    deterministic_paths: Dict[str, np.ndarray] = field(default_factory=dict)
    trajectory: Optional[Trajectory] = None

    @classmethod
    def from_kernels(
        cls, kernels: GKernels, covariate: str = "l", trajectory: Optional[Trajectory] = None,
    ) -> "FittedModels":
        """Categorical models that reproduce the given kernels exactly."""
        l_model, y_model = models_from_kernels(kernels, covariate)
        spec = GModelSpec(y_model.parents, (CovariateSpec(covariate, l_model.parents),))
        return cls(spec, y_model, {covariate: l_model}, trajectory=trajectory)


def fit_models(traj: Trajectory, spec: GModelSpec) -> FittedModels:
    frame = transition_frame(traj)
    covariate_models: Dict[str, ConditionalModel] = {}
    paths: Dict[str, np.ndarray] = {}
    for cov in spec.covariates:
        if cov.name not in traj.covariate_names:
            raise ValidationError(f"trajectory has no covariate {cov.name!r}")
        if cov.deterministic:
            paths[cov.name] = traj.covariate(cov.name).copy()
            continue
        # periodic covariates are fitted on the first time point of each period
        rows = frame[(frame["time"] - 1) % cov.period == 0]
        model = _new_model(cov.family or spec.family, cov.name, cov.parents, spec.smoothing, cov.domain)
        covariate_models[cov.name] = model.fit(rows)
    outcome = _new_model(spec.family, "y", spec.outcome_parents, spec.smoothing, spec.outcome_domain)
    outcome.fit(frame)
    logger.debug("Fitted %d covariate model(s) and the outcome model on %d transitions",
                 len(covariate_models), len(frame))
    return FittedModels(spec, outcome, covariate_models, paths, traj)


@dataclass(frozen=True)
class InitialConditions:
    """
    Values at the origin time point that simulation starts from.

    `a` None means the origin treatment follows the regime.
    """
    values: Dict[str, float]
    a: Optional[int] = None
    time: int = 1

    def __post_init__(self) -> None:
        if "y" not in self.values:
            raise ValidationError("initial conditions need an outcome value")
        if self.a is not None and self.a not in (0, 1):
            raise ValidationError(f"initial treatment must be 0, 1 or None, got {self.a!r}")
        if self.time < 0:
            raise ValidationError("initial time must be non-negative")

    @classmethod
    def from_trajectory(cls, traj: Trajectory, covariates: Sequence[str] = ()) -> "InitialConditions":
        values = {"y": float(traj.y[0])}
        for name in covariates or traj.covariate_names:
            values[name] = float(traj.covariate(name)[0])
        return cls(values, None, 1)


def _default_initial(models: FittedModels) -> InitialConditions:
    if models.trajectory is None:
        raise ValidationError("models without training data need explicit initial conditions")
    names = [c.name for c in models.spec.covariates]
    return InitialConditions.from_trajectory(models.trajectory, names)


def simulate_panel(
    models: FittedModels,
    treatments: np.ndarray,
    n: int,
    rng: np.random.Generator,
    initial: InitialConditions,
) -> Dict[str, np.ndarray]:
    """
    Simulate n units forward from the origin under a fixed treatment sequence.

    Args:
        treatments: A_k for k = 1..t
        n: number of units

    Returns:
        Dict[str, np.ndarray]: (n, t - initial.time) arrays for "y" and every
            covariate, covering time points initial.time + 1 .. t
    """
    t = len(treatments)
    names = [c.name for c in models.spec.covariates]
    missing = [name for name in names if name not in initial.values and not _is_deterministic(models, name)]
    if missing:
        raise ValidationError(f"initial conditions lack covariates {missing}")
    g = pd.DataFrame(index=np.arange(n))
    g["y"] = initial.values["y"]
    for name in names:
        g[name] = initial.values.get(name, 0.0)
    origin_index = max(initial.time, 1) - 1
    g["a"] = int(treatments[origin_index]) if initial.a is None else initial.a
    steps = t - initial.time
    out = {name: np.empty((n, steps)) for name in ["y", *names]}
    for step, k in enumerate(range(initial.time + 1, t + 1)):
        for variable in ["a", "y", *names]:
            g[lag_name(variable)] = g[variable]
        g["a"] = int(treatments[k - 1])
        g["time"] = k
        for cov in models.spec.covariates:
            if cov.deterministic:
                path = models.deterministic_paths[cov.name]
                if k > len(path):
                    raise ValidationError(f"deterministic covariate {cov.name!r} has no value at time {k}")
                g[cov.name] = path[k - 1]
            elif (k - 1) % cov.period == 0:
                g[cov.name] = models.covariate_models[cov.name].sample(g, rng)
            out[cov.name][:, step] = g[cov.name].to_numpy()
        g["y"] = models.outcome_model.sample(g, rng)
        out["y"][:, step] = g["y"].to_numpy()
    return out


def _is_deterministic(models: FittedModels, name: str) -> bool:
    return name in models.deterministic_paths


@dataclass(frozen=True, eq=False)
class GComputationResult:
    """Per-time mean outcomes under two regimes and their contrast."""
    times: np.ndarray
    contrast: np.ndarray
    mc_se: np.ndarray
    mean_treated: np.ndarray
    mean_control: np.ndarray
    reps: int


@dataclass(frozen=True, eq=False)
class _ContrastBlock:
    models: FittedModels
    treated: np.ndarray
    control: np.ndarray
    initial: InitialConditions
    seed: int

    def __call__(self, block_index: int, size: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = derive_rng(self.seed, block_index)
        y1 = simulate_panel(self.models, self.treated, size, rng, self.initial)["y"]
        y0 = simulate_panel(self.models, self.control, size, rng, self.initial)["y"]
        return y1, y0


def gcomputation_mc(
    models: FittedModels,
    t: int,
    reps: int,
    seed: int,
    initial: Optional[InitialConditions] = None,
    treated: Optional[Regime] = None,
    control: Optional[Regime] = None,
    block_size: int = 5000,
    workers: int = 1,
) -> GComputationResult:
    """
    Monte Carlo g-computation of the per-time contrast between two regimes.

    Each replicate simulates one trajectory under `treated` (default
    always(1)) and one under `control` (default always(0)). Blocks of
    replicates draw from generators derived from (seed, block index).
    """
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    initial = initial or _default_initial(models)
    if t <= initial.time:
        raise ValidationError(f"horizon t={t} must exceed the origin time {initial.time}")
    treated = treated or Regime.always(1)
    control = control or Regime.always(0)
    work = _ContrastBlock(models, treated.treatments(t), control.treatments(t), initial, seed)
    logger.info("g-computation: %d replicates over t=%d", reps, t)
    blocks = run_blocks(work, reps, block_size, workers)
    y1 = np.concatenate([b[0] for b in blocks])
    y0 = np.concatenate([b[1] for b in blocks])
    diff = y1 - y0
    contrast = column_means(diff)
    return GComputationResult(
        times=np.arange(initial.time + 1, t + 1),
        contrast=contrast,
        mc_se=column_sds(diff, contrast) / np.sqrt(reps),
        mean_treated=column_means(y1),
        mean_control=column_means(y0),
        reps=reps,
    )


class InnerEstimator(ABC):
    """Per-time effect estimator re-run on every bootstrap replicate."""
    name = "inner"

    @abstractmethod
    def estimate(self, traj: Trajectory, seed: int) -> np.ndarray:
        """Effect estimates for k = 2..t."""


class GComputationEstimator(InnerEstimator):
    name = "gcomputation"

    def __init__(self, spec: GModelSpec, reps: int = 500, block_size: int = 5000) -> None:
        self.spec = spec
        self.reps = reps
        self.block_size = block_size

    def estimate(self, traj: Trajectory, seed: int) -> np.ndarray:
        models = fit_models(traj, self.spec)
        return gcomputation_mc(models, traj.t, self.reps, seed, block_size=self.block_size).contrast


class KernelDPEstimator(InnerEstimator):
    name = "kernel-dp"

    def __init__(
        self,
        smoothing: float = 0.0,
        y_values: Optional[Sequence[float]] = None,
        l_values: Optional[Sequence[float]] = None,
        covariate: Optional[str] = None,
    ) -> None:
        self.smoothing = smoothing
        self.y_values = y_values
        self.l_values = l_values
        self.covariate = covariate

    def estimate(self, traj: Trajectory, seed: int) -> np.ndarray:
        kernels = fit_kernels(traj, self.smoothing, self.y_values, self.l_values, self.covariate)
        return ucate_series(kernels, traj.t, observed_initial(traj, kernels, self.covariate))


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    estimates: List[Estimate]
    replicates: np.ndarray
    failures: int
    reasons: Dict[str, int]

    @property
    def times(self) -> List[int]:
        return [int(e.time) for e in self.estimates if e.time is not None]


@dataclass(frozen=True, eq=False)
class _BootstrapBlock:
    models: FittedModels
    treatments: np.ndarray
    initial: InitialConditions
    inner: InnerEstimator
    seed: int
    block_size: int

    def __call__(self, block_index: int, size: int) -> List[Union[np.ndarray, str]]:
        out: List[Union[np.ndarray, str]] = []
        for j in range(size):
            index = block_index * self.block_size + j
            rng = derive_rng(self.seed, 1, index)
            try:
                traj = replicate_trajectory(self.models, self.treatments, rng, self.initial)
                out.append(self.inner.estimate(traj, int(rng.integers(2**63 - 1))))
            except EstimationError as e:
                logger.debug("Bootstrap replicate %d failed: %s", index, e)
                out.append(type(e).__name__)
        return out


def replicate_trajectory(
    models: FittedModels,
    treatments: np.ndarray,
    rng: np.random.Generator,
    initial: InitialConditions,
) -> Trajectory:
    """One simulated dataset with the origin values fixed to the initial conditions."""
    panel = simulate_panel(models, treatments, 1, rng, initial)
    names = tuple(c.name for c in models.spec.covariates)
    head = initial.time
    y = np.concatenate(([initial.values["y"]] * head, panel["y"][0]))
    l = None
    if names:
        columns = [np.concatenate(([initial.values.get(name, 0.0)] * head, panel[name][0])) for name in names]
        l = np.column_stack(columns)
    codings = models.trajectory.level_codings if models.trajectory is not None else {}
    return Trajectory(
        a=treatments[: len(y)], y=y, l=l, covariate_names=names,
        level_codings={k: v for k, v in codings.items() if k in names},
    )


def parametric_bootstrap(
    models: FittedModels,
    schedule: Schedule,
    t: int,
    B: int,
    inner: InnerEstimator,
    level: float = 0.95,
    seed: int = 0,
    method: IntervalMethod = IntervalMethod.NORMAL,
    point: Optional[np.ndarray] = None,
    workers: int = 1,
    block_size: int = 25,
) -> BootstrapResult:
    """
    Bootstrap bands for per-time effects under the observed schedule.

    Each replicate simulates a dataset from the fitted models with the
    schedule held fixed and re-runs the inner estimator. The normal method
    centres point +/- z * sd(replicates); percentile uses replicate quantiles.

    Raises:
        BootstrapAbortError: more than 10% of the replicates failed
    """
    if B < 2:
        raise ValidationError(f"B must be >= 2, got {B}")
    initial = _default_initial(models)
    treatments = Regime.natural(schedule).treatments(t)
    if point is None:
        assert models.trajectory is not None
        point = inner.estimate(models.trajectory, seed)
    point = np.asarray(point, dtype=np.float64)

    logger.info("Parametric bootstrap: B=%d, inner=%s, schedule=%s", B, inner.name, schedule)
    work = _BootstrapBlock(models, treatments, initial, inner, seed, block_size)
    results = [r for block in run_blocks(work, B, block_size, workers) for r in block]
    reasons: Dict[str, int] = {}
    for r in results:
        if isinstance(r, str):
            reasons[r] = reasons.get(r, 0) + 1
    failures = sum(reasons.values())
    if failures > MAX_FAILURE_SHARE * B or B - failures < 2:
        raise BootstrapAbortError(failures, B, reasons)
    if failures:
        logger.warning("%d of %d bootstrap replicates failed: %s", failures, B, reasons)
    replicates = np.vstack([r for r in results if not isinstance(r, str)])
    if replicates.shape[1] != len(point):
        raise EstimationError(f"replicate series has {replicates.shape[1]} times, point series {len(point)}")

    sds = column_sds(replicates, column_means(replicates))
    times = range(t - len(point) + 1, t + 1)
    n1, n0 = int(np.sum(treatments == 1)), int(np.sum(treatments == 0))
    tag = f"bootstrap-{inner.name}/{method.value}"
    estimates: List[Estimate] = []
    for j, k in enumerate(times):
        if method is IntervalMethod.NORMAL:
            estimates.append(Estimate.normal(point[j], sds[j], level, n1, n0, tag, time=k))
        else:
            low, high = np.quantile(replicates[:, j], [(1 - level) / 2, (1 + level) / 2])
            estimates.append(Estimate(float(point[j]), float(sds[j]), float(low), float(high),
                                      level, n1, n0, tag, time=k))
    return BootstrapResult(estimates, replicates, failures, reasons)

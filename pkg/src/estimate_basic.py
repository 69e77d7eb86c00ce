"""
Mean-difference estimation for the basic model.

Under strong stationarity and no carryover the treated-minus-control mean
difference is unbiased for the individual effect and asymptotically normal.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import stats

from src.errors import EstimationError, ValidationError
from src.trajectory import Trajectory

logger = logging.getLogger("nof1.estimate_basic")

ARM_NAMES = {0: "control (A=0)", 1: "treated (A=1)"}


@dataclass(frozen=True)
class Estimate:
    """
    A point estimate with standard error and confidence interval.

    A point-only estimate (too few observations for a variance) carries NaN
    for se and both interval ends; `has_interval` tells the two apart.
    """
    point: float
    se: float
    ci_low: float
    ci_high: float
    level: float
    n_treated: int
    n_control: int
    method: str
    time: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.level < 1.0:
            raise ValidationError(f"confidence level must lie in (0, 1), got {self.level}")
        if self.n_treated < 1 or self.n_control < 1:
            raise ValidationError("estimates need at least one treated and one control unit")
        if not self.has_interval:
            return
        if self.se < 0:
            raise ValidationError(f"standard error must be non-negative, got {self.se}")
        if self.ci_low > self.ci_high:
            raise ValidationError(f"interval ({self.ci_low}, {self.ci_high}) is reversed")
        # percentile intervals need not contain the original point estimate
        if "percentile" not in self.method and not self.ci_low <= self.point <= self.ci_high:
            raise ValidationError(f"point {self.point} outside ({self.ci_low}, {self.ci_high})")

    @classmethod
    def normal(
        cls,
        point: float,
        se: float,
        level: float,
        n_treated: int,
        n_control: int,
        method: str,
        time: Optional[int] = None,
    ) -> "Estimate":
        """Symmetric interval point +/- z_{(1+level)/2} * se."""
        half_width = normal_quantile(level) * se
        return cls(float(point), float(se), float(point - half_width), float(point + half_width),
                   level, n_treated, n_control, method, time)

    @classmethod
    def point_only(
        cls,
        point: float,
        level: float,
        n_treated: int,
        n_control: int,
        method: str,
        time: Optional[int] = None,
    ) -> "Estimate":
        nan = float("nan")
        return cls(float(point), nan, nan, nan, level, n_treated, n_control, f"{method}/no-ci", time)

    @property
    def has_interval(self) -> bool:
        return not (math.isnan(self.se) or math.isnan(self.ci_low) or math.isnan(self.ci_high))

    def covers(self, value: float) -> bool:
        return self.has_interval and self.ci_low <= value <= self.ci_high

    def to_record(self) -> Dict[str, object]:
        """Flat record used by the CLI report."""
        record: Dict[str, object] = {
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "n1": self.n_treated,
            "n0": self.n_control,
            "method": self.method,
        }
        if self.time is not None:
            record["time"] = self.time
        return record


@dataclass(frozen=True)
class WelchTest:
    """Two-sided Welch unequal-variance t-test of treated vs control outcomes."""
    statistic: float
    df: float
    p_value: float
    method: str = "welch-t"


@dataclass(frozen=True)
class ConstantNoiseVerdict:
    """Whether outcomes within each arm are identical up to tol, with one violating pair per arm."""
    passed: bool
    witnesses: Dict[int, Tuple[int, int]] = field(default_factory=dict)


def normal_quantile(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValidationError(f"confidence level must lie in (0, 1), got {level}")
    return float(stats.norm.ppf((1.0 + level) / 2.0))


def _split_rows(y: np.ndarray, a: np.ndarray, minimum: int) -> Tuple[np.ndarray, np.ndarray]:
    """Treated and control columns of an (n, t) outcome matrix sharing one treatment sequence."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    a = np.asarray(a)
    if y.ndim != 2 or y.shape[1] != len(a):
        raise ValidationError(f"outcome matrix of shape {y.shape} does not match {len(a)} treatments")
    for x in (1, 0):
        count = int(np.sum(a == x))
        if count < minimum:
            if minimum == 1:
                raise EstimationError(f"{ARM_NAMES[x]} arm is empty")
            raise EstimationError(f"{ARM_NAMES[x]} arm has {count} observation(s), {minimum} required")
    return y[:, a == 1], y[:, a == 0]


def tau_hat_rows(y: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Mean difference for every row of an (n, t) outcome matrix."""
    treated, control = _split_rows(y, a, 1)
    return treated.mean(axis=1) - control.mean(axis=1)


def arm_variance_rows(y: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    treated, control = _split_rows(y, a, 2)
    return treated.var(axis=1, ddof=1), control.var(axis=1, ddof=1)


def mean_difference_rows(
    y: np.ndarray,
    a: np.ndarray,
    level: float = 0.95,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Row-wise mean difference with its normal-approximation interval.

    Returns:
        Tuple of (tau, se, ci_low, ci_high), one entry per row
    """
    z = normal_quantile(level)
    s1, s0 = arm_variance_rows(y, a)
    n1, n0 = int(np.sum(np.asarray(a) == 1)), int(np.sum(np.asarray(a) == 0))
    tau = tau_hat_rows(y, a)
    se = np.sqrt(s1 / n1 + s0 / n0)
    return tau, se, tau - z * se, tau + z * se


def welch_rows(y: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Welch statistic, Welch-Satterthwaite df and two-sided p-value for every row."""
    treated, control = _split_rows(y, a, 2)
    n1, n0 = treated.shape[1], control.shape[1]
    v1 = treated.var(axis=1, ddof=1) / n1
    v0 = control.var(axis=1, ddof=1) / n0
    diff = treated.mean(axis=1) - control.mean(axis=1)
    total = v1 + v0
    constant = total == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        result = stats.ttest_ind(treated, control, axis=1, equal_var=False)
        df = total ** 2 / (v1 ** 2 / (n1 - 1) + v0 ** 2 / (n0 - 1))
    # both arms constant: the statistic is 0/0 or +-inf
    statistic = np.where(constant, np.where(diff == 0, 0.0, np.copysign(np.inf, diff)), result.statistic)
    p_value = np.where(constant, np.where(diff == 0, 1.0, 0.0), result.pvalue)
    return statistic, np.where(constant, np.nan, df), p_value


def tau_hat(traj: Trajectory) -> float:
    """Mean outcome over treated time points minus mean over control time points."""
    return float(tau_hat_rows(traj.y, traj.a)[0])


def arm_variances(traj: Trajectory) -> Tuple[float, float]:
    """Unbiased within-arm sample variances (treated, control)."""
    s1, s0 = arm_variance_rows(traj.y, traj.a)
    return float(s1[0]), float(s0[0])


def tau_hat_ci(traj: Trajectory, level: float = 0.95) -> Estimate:
    """Mean difference with the normal-approximation interval."""
    tau, se, _, _ = mean_difference_rows(traj.y, traj.a, level)
    n1, n0 = int(np.sum(traj.a == 1)), int(np.sum(traj.a == 0))
    return Estimate.normal(tau[0], se[0], level, n1, n0, "mean-difference/normal")


def tau_hat_estimate(traj: Trajectory, level: float = 0.95) -> Estimate:
    """Like tau_hat_ci, but degrades to a point-only estimate when an arm has one observation."""
    n1, n0 = int(np.sum(traj.a == 1)), int(np.sum(traj.a == 0))
    if min(n1, n0) == 1:
        logger.warning("An arm has a single observation; reporting the point estimate without an interval")
        return Estimate.point_only(tau_hat(traj), level, n1, n0, "mean-difference")
    return tau_hat_ci(traj, level)


def t_test(traj: Trajectory) -> WelchTest:
    """Welch t-test with Welch-Satterthwaite degrees of freedom."""
    statistic, df, p_value = welch_rows(traj.y, traj.a)
    return WelchTest(float(statistic[0]), float(df[0]), float(p_value[0]))


def approx_variance(sigma2: float, t: int, alpha: float) -> float:
    """Design approximation sigma^2 / (t * alpha * (1 - alpha)) under equal arm variances."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"treated fraction must lie in (0, 1), got {alpha}")
    if t < 1:
        raise ValidationError(f"t must be >= 1, got {t}")
    if sigma2 < 0:
        raise ValidationError(f"variance must be non-negative, got {sigma2}")
    return sigma2 / (t * alpha * (1.0 - alpha))


def exact_variance(sigma2_treated: float, sigma2_control: float, n_treated: int, n_control: int) -> float:
    """Variance of the mean difference for fixed arm counts."""
    if n_treated < 1 or n_control < 1:
        raise ValidationError("arm counts must be >= 1")
    return sigma2_treated / n_treated + sigma2_control / n_control


def constant_noise_check(traj: Trajectory, tol: float = 0.0) -> ConstantNoiseVerdict:
    """Outcomes within an arm should coincide exactly when the noise is constant."""
    if tol < 0:
        raise ValidationError("tolerance must be non-negative")
    witnesses: Dict[int, Tuple[int, int]] = {}
    for x in (0, 1):
        values = traj.arm(x)
        if len(values) < 2:
            continue
        times = traj.arm_times(x)
        lo, hi = int(np.argmin(values)), int(np.argmax(values))
        if values[hi] - values[lo] > tol:
            pair = sorted((int(times[lo]), int(times[hi])))
            witnesses[x] = (pair[0], pair[1])
    return ConstantNoiseVerdict(passed=not witnesses, witnesses=witnesses)

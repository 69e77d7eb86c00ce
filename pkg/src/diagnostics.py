"""
Falsification checks for strong stationarity.

Within each arm the outcome distribution should not drift with time. All
tests are standard large-sample approximations and are flagged as such.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import stats

from src.errors import EstimationError, ValidationError
from src.estimate_basic import ConstantNoiseVerdict, constant_noise_check
from src.trajectory import Trajectory

logger = logging.getLogger("nof1.diagnostics")


@dataclass(frozen=True)
class CheckResult:
    """One row of the diagnostics table."""
    test: str
    arm: int
    statistic: float
    p_value: float
    n: int
    slope: Optional[float] = None
    approximate: bool = True
    note: str = ""

    def __post_init__(self) -> None:
        if not math.isnan(self.p_value) and not 0.0 <= self.p_value <= 1.0:
            raise ValidationError(f"p-value {self.p_value} outside [0, 1]")


def _arm_series(traj: Trajectory, arm: int, minimum: int) -> Tuple[np.ndarray, np.ndarray]:
    if arm not in (0, 1):
        raise ValidationError(f"arm must be 0 or 1, got {arm!r}")
    values = traj.arm(arm)
    if len(values) < minimum:
        raise EstimationError(f"arm {arm} has {len(values)} observation(s), {minimum} required")
    return traj.arm_times(arm).astype(np.float64), values


def stationarity_trend_test(traj: Trajectory, arm: int) -> CheckResult:
    """OLS of Y on k within the arm; two-sided t-test of a zero slope."""
    times, values = _arm_series(traj, arm, 3)
    if np.ptp(values) == 0:
        return CheckResult("trend-ols", arm, 0.0, 1.0, len(values), slope=0.0)
    fit = sm.OLS(values, sm.add_constant(times)).fit()
    slope, statistic, p_value = float(fit.params[1]), float(fit.tvalues[1]), float(fit.pvalues[1])
    if math.isnan(p_value):
        # exact linear fit: zero residual variance
        statistic = math.copysign(math.inf, slope) if slope != 0 else 0.0
        p_value = 0.0 if slope != 0 else 1.0
    return CheckResult("trend-ols", arm, statistic, p_value, len(values), slope=slope)


def mann_kendall(values: np.ndarray) -> Tuple[float, float, float]:
    """Mann-Kendall S, its continuity-corrected z and the two-sided p-value, with tie correction."""
    n = len(values)
    diffs = np.sign(values[None, :] - values[:, None])
    s = float(np.sum(np.triu(diffs, k=1)))
    _, ties = np.unique(values, return_counts=True)
    var_s = (n * (n - 1) * (2 * n + 5) - float(np.sum(ties * (ties - 1) * (2 * ties + 5)))) / 18.0
    if var_s <= 0 or s == 0:
        return s, 0.0, 1.0
    z = (s - 1) / math.sqrt(var_s) if s > 0 else (s + 1) / math.sqrt(var_s)
    p = 2.0 * (1.0 - float(stats.norm.cdf(abs(z))))
    return s, z, min(max(p, 0.0), 1.0)


def stationarity_rank_test(traj: Trajectory, arm: int) -> CheckResult:
    """Mann-Kendall trend test within the arm (normal approximation)."""
    _, values = _arm_series(traj, arm, 4)
    s, z, p = mann_kendall(values)
    return CheckResult("trend-mann-kendall", arm, z, p, len(values), note=f"S={s:g}")


def split_distribution_check(traj: Trajectory, arm: int) -> CheckResult:
    """Two-sample Kolmogorov-Smirnov test between the first and second half of the arm."""
    _, values = _arm_series(traj, arm, 8)
    half = len(values) // 2
    first, second = values[:half], values[half:]
    result = stats.ks_2samp(first, second)
    return CheckResult("split-ks", arm, float(result.statistic), float(result.pvalue), len(values))


TESTS = (stationarity_trend_test, stationarity_rank_test, split_distribution_check)


@dataclass(frozen=True)
class DiagnosticsReport:
    """Per-arm test table plus the constant-noise check; no multiplicity correction is applied."""
    rows: List[CheckResult]
    constant_noise: ConstantNoiseVerdict
    skipped: Dict[str, str] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {"test": r.test, "arm": r.arm, "statistic": r.statistic, "p_value": r.p_value,
             "n": r.n, "slope": r.slope, "approximate": r.approximate, "note": r.note}
            for r in self.rows
        ])


def diagnose(traj: Trajectory, tol: float = 0.0) -> DiagnosticsReport:
    """Run every stationarity check on both arms; checks without enough data are skipped."""
    rows: List[CheckResult] = []
    skipped: Dict[str, str] = {}
    for arm in (0, 1):
        for test in TESTS:
            try:
                rows.append(test(traj, arm))
            except EstimationError as e:
                skipped[f"{test.__name__}[arm={arm}]"] = str(e)
                logger.warning("Skipping %s for arm %d: %s", test.__name__, arm, e)
    return DiagnosticsReport(rows, constant_noise_check(traj, tol), skipped)

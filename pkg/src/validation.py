"""
Acceptance suites: exact oracle equivalences and Monte Carlo studies.

Every suite returns a SuiteOutcome with the metrics it checked. The `full`
scale uses the study sizes of the acceptance criteria; `quick` shrinks the
replication counts and widens tolerances accordingly so the suites can run
in a test session.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from src.errors import EstimationError, ValidationError
from src.estimate_basic import (
    approx_variance,
    constant_noise_check,
    mean_difference_rows,
    tau_hat,
    tau_hat_rows,
    welch_rows,
)
from src.forward import InitialState
from src.gcomputation import (
    FittedModels,
    InitialConditions,
    KernelDPEstimator,
    gcomputation_mc,
    parametric_bootstrap,
)
from src.gformula import GKernels, fit_kernels, observed_initial, theta_dp, ucate_series
from src.montecarlo import derive_rng
from src.schedule import Design, Schedule, expand_schedule
from src.scm import (
    SCM,
    AdditiveSCM,
    DiscreteSCM,
    NoiseFamily,
    Regime,
    Variant,
    draw_noise,
    design_average_tau,
    enumerate_counterfactual_mean,
    exact_counterfactual_mean,
    ice_given_noise,
    mean_ice,
    random_discrete_scm,
    simulate,
    simulate_outcomes,
    simulate_with_noise,
    true_ace,
    true_ace_series,
    true_ucate,
)
from src.series import aggregate_gformula, aggregate_tau

logger = logging.getLogger("nof1.validation")

ACNE_SCHEDULE = Schedule.from_string("000000111111")
ACNE_T = 48
# kernel suites with a two-level covariate need every (x, l, y_prev, l_prev) row observed
KERNEL_T = 200


class Scale(Enum):
    QUICK = "quick"
    FULL = "full"


@dataclass(frozen=True)
class SuiteOutcome:
    name: str
    passed: bool
    detail: str
    metrics: Dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0


def familywise_z(m: int, alpha: float = 0.0027) -> float:
    """Two-sided z threshold keeping the chance of any of m exceedances at alpha (3 se when m = 1)."""
    return float(stats.norm.ppf(1.0 - alpha / (2.0 * max(m, 1))))


def oracle_equivalence(scale: Scale, seed: int, n_models: int = 50, max_k: int = 5) -> SuiteOutcome:
    """DP with true kernels against brute-force enumeration and the exact counterfactual mean."""
    rng = derive_rng(seed, 2)
    worst = 0.0
    count = 0
    for index in range(n_models if scale is Scale.FULL else 12):
        variant = (Variant.RELAXED, Variant.TIME_TREND, Variant.BASIC)[index % 3]
        ny, nl = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        scm = random_discrete_scm(rng, variant, ny=ny, nl=nl, nu=int(rng.integers(1, 3)))
        for u in range(len(scm.u_levels)):
            kernels = GKernels.from_scm(scm, u)
            for k in range(1, max_k + 1):
                for x in (0, 1):
                    dp = theta_dp(kernels, k, x, scm.initial)
                    exact = exact_counterfactual_mean(scm, u, k, x)
                    brute = enumerate_counterfactual_mean(scm, u, Regime.always(x), k)
                    worst = max(worst, abs(dp - exact), abs(dp - brute))
                    count += 1
    passed = worst <= 1e-12
    return SuiteOutcome("oracle-equivalence", passed, f"{count} comparisons, max deviation {worst:.3g}",
                        {"max_abs_deviation": worst, "comparisons": float(count)})


def _example_basic_scm() -> DiscreteSCM:
    kernel = np.array([[[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]]])
    return DiscreteSCM.basic(np.array([0.0, 1.0, 2.0]), kernel)


def _null_basic_scm() -> DiscreteSCM:
    kernel = np.array([[[0.5, 0.3, 0.2], [0.5, 0.3, 0.2]]])
    return DiscreteSCM.basic(np.array([0.0, 1.0, 2.0]), kernel)


def unbiasedness(scale: Scale, seed: int) -> SuiteOutcome:
    """Mean of the mean-difference estimate over simulated trials against the true U-CATE."""
    n = 10_000 if scale is Scale.FULL else 2_000
    scm = _example_basic_scm()
    a = expand_schedule(ACNE_SCHEDULE, ACNE_T)
    y = simulate_outcomes(scm, 0, Regime.natural(ACNE_SCHEDULE), ACNE_T, n, derive_rng(seed, 3))
    tau = tau_hat_rows(y, a)
    truth = true_ucate(scm, 0, 1)
    mc_se = float(np.std(tau, ddof=1) / math.sqrt(n))
    z = (float(np.mean(tau)) - truth) / mc_se
    return SuiteOutcome("unbiasedness", abs(z) <= 3.0, f"mean {np.mean(tau):.4f} vs {truth:.4f} (z={z:.2f})",
                        {"mean_tau": float(np.mean(tau)), "truth": truth, "z": z})


def coverage_and_size(scale: Scale, seed: int, level: float = 0.95) -> SuiteOutcome:
    """Interval coverage of the U-CATE and Welch t-test size under a null effect, both on basic SCMs."""
    n = 10_000 if scale is Scale.FULL else 2_000
    tol = 0.01 if scale is Scale.FULL else 0.02
    a = expand_schedule(ACNE_SCHEDULE, ACNE_T)
    scm = _example_basic_scm()
    truth = true_ucate(scm, 0, 1)
    y = simulate_outcomes(scm, 0, Regime.natural(ACNE_SCHEDULE), ACNE_T, n, derive_rng(seed, 4))
    _, _, low, high = mean_difference_rows(y, a, level)
    coverage = float(np.mean((low <= truth) & (truth <= high)))

    null = _null_basic_scm()
    y0 = simulate_outcomes(null, 0, Regime.natural(ACNE_SCHEDULE), ACNE_T, n, derive_rng(seed, 5))
    _, _, p = welch_rows(y0, a)
    size = float(np.mean(p < 0.05))
    passed = abs(coverage - level) <= tol and abs(size - 0.05) <= tol
    return SuiteOutcome("coverage-and-size", passed, f"coverage {coverage:.4f}, size {size:.4f} (tol {tol})",
                        {"coverage": coverage, "size": size})


def design_efficiency(scale: Scale, seed: int, t: int = 100) -> SuiteOutcome:
    """Empirical variance of the estimate against sigma^2 / (t * alpha * (1 - alpha))."""
    n = 10_000 if scale is Scale.FULL else 4_000
    tol = 0.10 if scale is Scale.FULL else 0.15
    scm = AdditiveSCM(beta=1.0, noise_sd=1.0)
    metrics: Dict[str, float] = {}
    variances = {}
    worst = 0.0
    for treated_cells in (4, 7, 10):
        schedule = Schedule.blocks((1, treated_cells), (0, 20 - treated_cells))
        alpha = treated_cells / 20
        a = expand_schedule(schedule, t)
        y = simulate_outcomes(scm, None, Regime.natural(schedule), t, n, derive_rng(seed, 6, treated_cells))
        empirical = float(np.var(tau_hat_rows(y, a), ddof=1))
        expected = approx_variance(scm.noise_sd ** 2, t, alpha)
        variances[alpha] = empirical
        worst = max(worst, abs(empirical / expected - 1.0))
        metrics[f"var_alpha_{alpha:g}"] = empirical
        metrics[f"approx_alpha_{alpha:g}"] = expected
    best = min(variances, key=lambda k: variances[k])
    passed = best == 0.5 and worst <= tol
    return SuiteOutcome("design-efficiency", passed, f"minimum at alpha={best}, worst relative error {worst:.3f}",
                        metrics)


def degenerate_noise(scale: Scale, seed: int) -> SuiteOutcome:
    """Constant noise: the estimate equals the individual effect exactly at every time point."""
    scm = AdditiveSCM(beta=1.0, u_value=2.0, noise_sd=0.0, noise_family=NoiseFamily.CONSTANT)
    noise = draw_noise(scm, ACNE_T, derive_rng(seed, 7))
    traj = simulate_with_noise(scm, None, Regime.natural(ACNE_SCHEDULE), ACNE_T, noise)
    estimate = tau_hat(traj)
    ices = [ice_given_noise(scm, None, noise, k) for k in range(1, ACNE_T + 1)]
    worst = max(abs(estimate - ice) for ice in ices)
    verdict = constant_noise_check(traj, 0.0)
    passed = worst == 0.0 and verdict.passed
    return SuiteOutcome("degenerate-noise", passed,
                        f"tau_hat {estimate!r}, max deviation from ICE {worst!r} over {ACNE_T} time points, "
                        f"check {verdict.passed}",
                        {"tau_hat": estimate, "ice": ices[0], "max_abs_deviation": worst})


def design_average(scale: Scale, seed: int) -> SuiteOutcome:
    """Design-weighted average of the estimate equals the mean individual effect for a balanced design."""
    cells = [c for c in np.ndindex(*(2,) * 4) if sum(c) == 2]
    design = Design.uniform([Schedule(tuple(c)) for c in cells], 4, "balanced-4")
    rng = derive_rng(seed, 8)
    worst = 0.0
    for trial in range(20 if scale is Scale.FULL else 5):
        scm: SCM = random_discrete_scm(rng, Variant.BASIC, ny=3, nu=1) if trial % 2 else AdditiveSCM(0.3)
        u = 0 if isinstance(scm, DiscreteSCM) else None
        noise = draw_noise(scm, 4, rng)
        worst = max(worst, abs(design_average_tau(design, scm, u, noise) - mean_ice(scm, u, noise, 4)))
    return SuiteOutcome("design-average", worst <= 1e-12, f"max deviation {worst:.3g}", {"max_abs_deviation": worst})


def _heterogeneous_basic_scm() -> DiscreteSCM:
    kernel = np.array([
        [[0.6, 0.4], [0.4, 0.6]],
        [[0.4, 0.6], [0.6, 0.4]],
    ])
    return DiscreteSCM.basic(np.array([0.0, 1.0]), kernel, ("u0", "u1"), np.array([0.5, 0.5]))


def _kernel_scm(seed: int, stream: int, nu: int) -> DiscreteSCM:
    """Relaxed SCM with a two-level covariate whose kernels keep every row likely."""
    return random_discrete_scm(derive_rng(seed, stream), Variant.RELAXED, ny=2, nl=2, nu=nu, concentration=10.0)


def aggregation(scale: Scale, seed: int) -> SuiteOutcome:
    """Series aggregation of mean differences and of g-formula series against the population effect at every k."""
    rng = derive_rng(seed, 9)
    n = 10_000 if scale is Scale.FULL else 2_000
    scm = _heterogeneous_basic_scm()
    a = expand_schedule(ACNE_SCHEDULE, ACNE_T)
    units = rng.choice(2, size=n, p=scm.u_weights)
    taus = np.empty(n)
    for u in (0, 1):
        mask = units == u
        y = simulate_outcomes(scm, u, Regime.natural(ACNE_SCHEDULE), ACNE_T, int(mask.sum()), rng)
        taus[mask] = tau_hat_rows(y, a)
    tau_estimate = aggregate_tau(taus)
    truth = true_ace(scm, 1)
    z_tau = (tau_estimate.point - truth) / tau_estimate.se

    n_series = 500 if scale is Scale.FULL else 120
    t = KERNEL_T
    relaxed = _kernel_scm(seed, 10, nu=2)
    # known (Y_0, L_0); the origin treatment follows the intervention
    origin = InitialState(y=relaxed.initial.y, l=relaxed.initial.l, a=None, time=0)
    series: List[np.ndarray] = []
    failures = 0
    for i in range(n_series):
        unit_rng = derive_rng(seed, 11, i)
        u = int(unit_rng.choice(2, p=relaxed.u_weights))
        traj = simulate(relaxed, u, Regime.natural(ACNE_SCHEDULE), t, int(unit_rng.integers(2**63 - 1)))
        try:
            kernels = fit_kernels(traj, y_values=relaxed.y_values, l_values=relaxed.l_values, initial=origin)
            series.append(ucate_series(kernels, t, origin))
        except EstimationError:
            failures += 1
    estimates = aggregate_gformula(series, times=list(range(1, t + 1)))
    exact = true_ace_series(relaxed, t, origin_follows=True)
    z_series = np.array([(e.point - truth_k) / e.se for e, truth_k in zip(estimates, exact)])
    threshold = familywise_z(t)
    worst = float(np.max(np.abs(z_series)))
    passed = abs(z_tau) <= 3.0 and worst <= threshold and failures <= 0.05 * n_series
    return SuiteOutcome(
        "aggregation", passed,
        f"tau z={z_tau:.2f}; g-formula max |z|={worst:.2f} over {t} time points "
        f"(threshold {threshold:.2f}), {len(series)} series, {failures} non-estimable",
        {"z_tau": z_tau, "max_abs_z_series": worst, "failures": float(failures)},
    )


def gcomputation_consistency(scale: Scale, seed: int, workers: int = 1, block_size: int = 5000) -> SuiteOutcome:
    """g-computation with true categorical models against the g-formula recursion at every k."""
    reps = 100_000 if scale is Scale.FULL else 10_000
    scm = random_discrete_scm(derive_rng(seed, 12), Variant.RELAXED, ny=2, nl=2, nu=1)
    kernels = GKernels.from_scm(scm, 0)
    models = FittedModels.from_kernels(kernels)
    initial = InitialConditions(
        {"y": float(scm.y_values[scm.initial.y]), "l": float(scm.l_values[scm.initial.l])},
        a=scm.initial.a, time=0,
    )
    result = gcomputation_mc(models, ACNE_T, reps, seed, initial, block_size=block_size, workers=workers)
    oracle = ucate_series(kernels, ACNE_T, scm.initial)
    z = (result.contrast - oracle) / result.mc_se
    threshold = familywise_z(ACNE_T)
    worst = float(np.max(np.abs(z)))
    return SuiteOutcome("gcomputation-consistency", worst <= threshold,
                        f"max |z| {worst:.2f} over {ACNE_T} time points (threshold {threshold:.2f})",
                        {"max_abs_z": worst, "reps": float(reps)})


def bootstrap_coverage(scale: Scale, seed: int, level: float = 0.95, workers: int = 1) -> SuiteOutcome:
    """Nested coverage of parametric-bootstrap bands for the kernel g-formula estimate at every time point."""
    outer = 500 if scale is Scale.FULL else 60
    B = 500 if scale is Scale.FULL else 100
    tol = 0.03 if scale is Scale.FULL else 0.08
    t = KERNEL_T
    scm = _kernel_scm(seed, 13, nu=1)
    true_kernels = GKernels.from_scm(scm, 0)
    inner = KernelDPEstimator(y_values=scm.y_values.tolist(), l_values=scm.l_values.tolist())
    covered = np.zeros(t - 1)
    failures = 0
    for r in range(outer):
        traj = simulate(scm, 0, Regime.natural(ACNE_SCHEDULE), t, int(derive_rng(seed, 14, r).integers(2**63 - 1)))
        try:
            kernels = fit_kernels(traj, y_values=scm.y_values, l_values=scm.l_values)
            models = FittedModels.from_kernels(kernels, trajectory=traj)
            result = parametric_bootstrap(models, ACNE_SCHEDULE, t, B, inner, level, seed + r, workers=workers)
        except EstimationError:
            failures += 1
            continue
        truth = ucate_series(true_kernels, t, observed_initial(traj, true_kernels))
        covered += [e.covers(v) for e, v in zip(result.estimates, truth)]
    completed = outer - failures
    per_k = covered / completed if completed else np.zeros(t - 1)
    mean_coverage = float(np.mean(per_k))
    # every k within tol plus a familywise binomial band around the level
    band = tol + familywise_z(t - 1) * math.sqrt(level * (1 - level) / max(completed, 1))
    worst = float(np.max(np.abs(per_k - level)))
    passed = completed >= 0.9 * outer and abs(mean_coverage - level) <= tol and worst <= band
    return SuiteOutcome("bootstrap-coverage", passed,
                        f"mean coverage {mean_coverage:.3f}, worst per-k deviation {worst:.3f} (band {band:.3f}) "
                        f"over {completed} replications ({failures} failed)",
                        {"coverage": mean_coverage, "max_abs_deviation": worst, "failures": float(failures)})


SUITES: Dict[str, Callable[..., SuiteOutcome]] = {
    "oracle": oracle_equivalence,
    "unbiasedness": unbiasedness,
    "coverage": coverage_and_size,
    "efficiency": design_efficiency,
    "degenerate": degenerate_noise,
    "design-average": design_average,
    "aggregation": aggregation,
    "gcomputation": gcomputation_consistency,
    "bootstrap": bootstrap_coverage,
}


def run_suites(names: Optional[Sequence[str]] = None, scale: Scale = Scale.QUICK, seed: int = 0) -> List[SuiteOutcome]:
    selected = list(names) if names else list(SUITES)
    unknown = [n for n in selected if n not in SUITES]
    if unknown:
        raise ValidationError(f"unknown validation suites {unknown}; choose from {list(SUITES)}")
    outcomes: List[SuiteOutcome] = []
    for name in selected:
        start = time.perf_counter()
        outcome = SUITES[name](scale, seed)
        elapsed = time.perf_counter() - start
        outcome = SuiteOutcome(outcome.name, outcome.passed, outcome.detail, outcome.metrics, elapsed)
        logger.info("%s %s: %s (%.1fs)", "PASS" if outcome.passed else "FAIL", name, outcome.detail, elapsed)
        outcomes.append(outcome)
    return outcomes

import math

import pytest

from src.errors import ValidationError
from src.validation import (
    Scale,
    aggregation,
    bootstrap_coverage,
    coverage_and_size,
    degenerate_noise,
    design_average,
    design_efficiency,
    familywise_z,
    gcomputation_consistency,
    oracle_equivalence,
    run_suites,
    unbiasedness,
)


def test_familywise_threshold() -> None:
    """Test that one comparison keeps the 3 se rule and more comparisons widen it."""
    assert familywise_z(1) == pytest.approx(3.0, abs=1e-3)
    assert familywise_z(48) > familywise_z(8) > familywise_z(1)


def test_exact_suites() -> None:
    """Test the suites that compare exact quantities."""
    for suite in (degenerate_noise, design_average):
        outcome = suite(Scale.QUICK, 0)
        assert outcome.passed, outcome.detail
    degenerate = degenerate_noise(Scale.QUICK, 0)
    assert degenerate.metrics == {"tau_hat": 1.0, "ice": 1.0, "max_abs_deviation": 0.0}


def test_oracle_suite() -> None:
    """Test the recursion against enumeration on random models."""
    outcome = oracle_equivalence(Scale.QUICK, 1)
    assert outcome.passed, outcome.detail
    assert outcome.metrics["comparisons"] >= 12 * 10


def test_mean_difference_suites() -> None:
    """Test unbiasedness, coverage, size and design efficiency at the quick scale."""
    for suite in (unbiasedness, coverage_and_size, design_efficiency):
        outcome = suite(Scale.QUICK, 2)
        assert outcome.passed, outcome.detail
    coverage = coverage_and_size(Scale.QUICK, 2)
    assert not math.isnan(coverage.metrics["size"])


@pytest.mark.slow
def test_aggregation_suite() -> None:
    """Test both aggregation routes against the population effect."""
    outcome = aggregation(Scale.QUICK, 3)
    assert outcome.passed, outcome.detail


@pytest.mark.slow
def test_bootstrap_coverage_suite() -> None:
    """Test bootstrap band coverage at every estimated time point."""
    outcome = bootstrap_coverage(Scale.QUICK, 6)
    assert outcome.passed, outcome.detail
    assert outcome.metrics["max_abs_deviation"] >= abs(outcome.metrics["coverage"] - 0.95)


@pytest.mark.slow
def test_gcomputation_suite() -> None:
    """Test Monte Carlo g-computation against the recursion over 48 time points."""
    outcome = gcomputation_consistency(Scale.QUICK, 4)
    assert outcome.passed, outcome.detail
    assert outcome.metrics["reps"] == 10_000


def test_run_suites() -> None:
    """Test suite selection, timing and unknown names."""
    outcomes = run_suites(["degenerate", "design-average"], Scale.QUICK, seed=5)
    assert [o.name for o in outcomes] == ["degenerate-noise", "design-average"]
    assert all(o.passed and o.seconds >= 0.0 for o in outcomes)
    with pytest.raises(ValidationError, match="unknown validation suites"):
        run_suites(["speed"])

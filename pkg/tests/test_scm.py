import itertools

import numpy as np
import pytest

from src.errors import ValidationError
from src.forward import InitialState
from src.gformula import GKernels, ucate_series
from src.schedule import Design, Schedule
from src.scm import (
    AdditiveSCM,
    DiscreteSCM,
    NoiseFamily,
    Regime,
    Variant,
    design_average_tau,
    draw_noise,
    enumerate_counterfactual_mean,
    exact_counterfactual_mean,
    exact_counterfactual_means,
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

ACNE = Schedule.from_string("000000111111")


def _basic_scm() -> DiscreteSCM:
    return DiscreteSCM.basic(np.array([0.0, 1.0, 2.0]), np.array([[[0.5, 0.3, 0.2], [0.2, 0.3, 0.5]]]))


def _carryover_scm() -> DiscreteSCM:
    """P(Y_k = 1) = 0.2 + 0.5 * A_k + 0.2 * A_{k-1}; a single covariate level."""
    y_kernel = np.zeros((1, 1, 2, 2, 1, 2, 2))
    for a, ap in itertools.product((0, 1), repeat=2):
        p = 0.2 + 0.5 * a + 0.2 * ap
        y_kernel[0, 0, a, :, 0, ap, :] = [1 - p, p]
    return DiscreteSCM.relaxed(np.array([0.0, 1.0]), np.zeros(1), np.ones((1, 2, 2, 1, 1)), y_kernel)


def test_regimes() -> None:
    """Test treatment sequences of each regime kind."""
    assert Regime.natural(Schedule.from_string("01")).treatments(3).tolist() == [0, 1, 0]
    assert Regime.always(1).treatments(3).tolist() == [1, 1, 1]
    assert Regime.explicit([1, 0, 0]).treatments(3).tolist() == [1, 0, 0]
    with pytest.raises(ValidationError, match="length 3, expected t=4"):
        Regime.explicit([1, 0, 0]).treatments(4)
    with pytest.raises(ValidationError, match="x in"):
        Regime.always(2)


def test_discrete_scm_validation() -> None:
    """Test kernel shape and row-sum checks."""
    with pytest.raises(ValidationError, match="basic y_kernel has shape"):
        DiscreteSCM.basic(np.array([0.0, 1.0]), np.ones((1, 2, 3)) / 3)
    with pytest.raises(ValidationError, match="sums to"):
        DiscreteSCM.basic(np.array([0.0, 1.0]), np.array([[[0.5, 0.4], [0.5, 0.5]]]))
    with pytest.raises(ValidationError, match="declared positive"):
        DiscreteSCM.basic(np.array([0.0, 1.0]), np.array([[[1.0, 0.0], [0.5, 0.5]]]), declared_positive=True)
    with pytest.raises(ValidationError, match="origin treatment"):
        DiscreteSCM.basic(np.array([0.0, 1.0]), np.full((1, 2, 2), 0.5), initial=InitialState(a=None))
    with pytest.raises(ValidationError, match="distinct"):
        DiscreteSCM.basic(np.array([1.0, 1.0]), np.full((1, 2, 2), 0.5))


def test_reduced_tables_round_trip() -> None:
    """Test that variant constructors broadcast and reduce consistently."""
    rng = np.random.default_rng(2)
    scm = random_discrete_scm(rng, Variant.TIME_TREND, ny=2, nl=3)
    reduced_l = scm.reduced_l_kernel()
    assert reduced_l is not None and reduced_l.shape == (1, 3, 3)
    assert scm.reduced_y_kernel().shape == (1, 3, 2, 3, 2)
    rebuilt = DiscreteSCM.time_trend(scm.y_values, scm.l_values, reduced_l, scm.reduced_y_kernel())
    assert np.array_equal(rebuilt.y_kernel, scm.y_kernel)
    assert scm.is_positive()
    assert _basic_scm().reduced_l_kernel() is None


def test_basic_exact_means() -> None:
    """Test exact means of the basic SCM against hand-computed values."""
    scm = _basic_scm()
    assert exact_counterfactual_mean(scm, 0, 1, 0) == pytest.approx(0.7, abs=1e-12)
    assert exact_counterfactual_mean(scm, "u0", 5, 1) == pytest.approx(1.3, abs=1e-12)
    assert true_ucate(scm, 0, 3) == pytest.approx(0.6, abs=1e-12)


def test_carryover_depends_on_origin_treatment() -> None:
    """Test that the first step uses the fixed origin treatment A_0."""
    scm = _carryover_scm()
    treated = exact_counterfactual_means(scm, 0, Regime.always(1), 3)
    control = exact_counterfactual_means(scm, 0, Regime.always(0), 3)
    assert treated == pytest.approx([0.7, 0.9, 0.9], abs=1e-12)
    assert control == pytest.approx([0.2, 0.2, 0.2], abs=1e-12)
    assert true_ucate(scm, 0, 1) == pytest.approx(0.5, abs=1e-12)
    assert true_ucate(scm, 0, 2) == pytest.approx(0.7, abs=1e-12)

    natural = exact_counterfactual_means(scm, 0, Regime.explicit([1, 0, 1]), 3)
    assert natural == pytest.approx([0.7, 0.4, 0.7], abs=1e-12)


def test_null_scm_has_no_effect() -> None:
    """Test that a kernel independent of A gives zero effect at every k."""
    kernel = np.array([[[0.3, 0.7], [0.3, 0.7]]])
    scm = DiscreteSCM.basic(np.array([0.0, 1.0]), kernel)
    for k in range(1, 6):
        assert true_ucate(scm, 0, k) == 0.0


def test_recursion_matches_enumeration() -> None:
    """Test exact means against brute-force enumeration for random SCMs."""
    rng = np.random.default_rng(17)
    for variant in (Variant.RELAXED, Variant.TIME_TREND):
        scm = random_discrete_scm(rng, variant, ny=2, nl=2, nu=2)
        for u in (0, 1):
            for x in (0, 1):
                for k in (1, 2, 4):
                    exact = exact_counterfactual_mean(scm, u, k, x)
                    brute = enumerate_counterfactual_mean(scm, u, Regime.always(x), k)
                    assert exact == pytest.approx(brute, abs=1e-12)


def test_homogeneity_and_ace() -> None:
    """Test the population effect as the weighted average of per-level effects."""
    kernel = np.array([
        [[0.6, 0.4], [0.4, 0.6]],
        [[0.4, 0.6], [0.6, 0.4]],
    ])
    scm = DiscreteSCM.basic(np.array([0.0, 1.0]), kernel, ("u0", "u1"), np.array([0.5, 0.5]))
    assert true_ucate(scm, "u0", 1) == pytest.approx(0.2, abs=1e-12)
    assert true_ucate(scm, "u1", 1) == pytest.approx(-0.2, abs=1e-12)
    assert true_ace(scm, 1) == pytest.approx(0.0, abs=1e-12)
    assert not scm.is_homogeneous(3)
    assert _basic_scm().is_homogeneous(3)
    with pytest.raises(ValidationError, match="unknown baseline level"):
        scm.u_index("u2")


def test_ace_series() -> None:
    """Test the population effect series with a fixed and with an intervention-following origin treatment."""
    scm = _carryover_scm()
    assert true_ace_series(scm, 3) == pytest.approx([0.5, 0.7, 0.7], abs=1e-12)
    assert true_ace_series(scm, 3, origin_follows=True) == pytest.approx([0.7, 0.7, 0.7], abs=1e-12)

    mixed = random_discrete_scm(np.random.default_rng(4), Variant.RELAXED, ny=2, nl=2, nu=3)
    assert true_ace_series(mixed, 4) == pytest.approx([true_ace(mixed, k) for k in range(1, 5)], abs=1e-12)
    origin = InitialState(y=mixed.initial.y, l=mixed.initial.l, a=None, time=0)
    expected = sum(w * ucate_series(GKernels.from_scm(mixed, i), 4, origin) for i, w in enumerate(mixed.u_weights))
    assert true_ace_series(mixed, 4, origin_follows=True) == pytest.approx(expected, abs=1e-12)


def test_simulate_is_deterministic() -> None:
    """Test that a fixed seed reproduces the trajectory exactly."""
    scm = random_discrete_scm(np.random.default_rng(1), Variant.RELAXED, ny=3, nl=2)
    first = simulate(scm, 0, Regime.natural(ACNE), 48, seed=42)
    second = simulate(scm, 0, Regime.natural(ACNE), 48, seed=42)
    assert np.array_equal(first.y, second.y)
    assert np.array_equal(first.covariate("l"), second.covariate("l"))
    assert first.schedule == ACNE
    assert set(first.y.tolist()) <= {0.0, 1.0, 2.0}
    assert first.u_label == "u0"


def test_additive_scm() -> None:
    """Test the additive model's means, noise families and individual effect."""
    scm = AdditiveSCM(beta=0.5, u_value=1.0, noise_sd=2.0)
    assert exact_counterfactual_mean(scm, None, 3, 1) == 1.5
    assert exact_counterfactual_mean(scm, 3.0, 3, 0) == 3.0
    noise = draw_noise(scm, 10, np.random.default_rng(0))
    traj = simulate_with_noise(scm, None, Regime.natural(Schedule.from_string("01")), 10, noise)
    assert traj.y == pytest.approx(0.5 * traj.a + 1.0 + noise.epsilon)
    assert ice_given_noise(scm, None, noise, 4) == pytest.approx(0.5)

    uniform = AdditiveSCM(beta=0.0, noise_sd=1.0, noise_family=NoiseFamily.UNIFORM)
    draws = draw_noise(uniform, 1000, np.random.default_rng(0)).epsilon
    assert np.all(np.abs(draws) <= np.sqrt(3.0))
    with pytest.raises(ValidationError, match="noise_sd = 0"):
        AdditiveSCM(beta=1.0, noise_sd=1.0, noise_family=NoiseFamily.CONSTANT)


def test_simulate_outcomes_mean() -> None:
    """Test the vectorised simulator against the exact arm means."""
    scm = _basic_scm()
    y = simulate_outcomes(scm, 0, Regime.natural(ACNE), 12, 20_000, np.random.default_rng(4))
    assert y.shape == (20_000, 12)
    # sd of one outcome is below 0.9, so 3 se at n = 120000 is below 0.008
    assert y[:, :6].mean() == pytest.approx(0.7, abs=0.008)
    assert y[:, 6:].mean() == pytest.approx(1.3, abs=0.008)


def test_design_average_equals_mean_individual_effect() -> None:
    """Test the marginal-over-schedules property for a balanced design."""
    cells = [c for c in itertools.product((0, 1), repeat=4) if sum(c) == 2]
    design = Design.uniform([Schedule(c) for c in cells], 4)
    rng = np.random.default_rng(8)
    for scm in (_basic_scm(), AdditiveSCM(beta=0.3)):
        u = 0 if isinstance(scm, DiscreteSCM) else None
        noise = draw_noise(scm, 4, rng)
        assert design_average_tau(design, scm, u, noise) == pytest.approx(mean_ice(scm, u, noise, 4), abs=1e-12)

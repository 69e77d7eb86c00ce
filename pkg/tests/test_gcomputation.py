from typing import Optional

import numpy as np
import pytest

from src.errors import BootstrapAbortError, EstimationError, NonEstimableError, ValidationError
from src.forward import InitialState
from src.gcomputation import (
    CovariateSpec,
    FittedModels,
    GComputationEstimator,
    GModelSpec,
    InitialConditions,
    InnerEstimator,
    IntervalMethod,
    fit_models,
    gcomputation_mc,
    parametric_bootstrap,
    simulate_panel,
    transition_frame,
)
from src.gformula import GKernels, ucate_series
from src.models import CategoricalModel, GaussianLinearModel, ModelFamily
from src.schedule import Schedule, expand_schedule
from src.scm import AdditiveSCM, Regime, Variant, random_discrete_scm, simulate, true_ucate
from src.trajectory import Trajectory
from src.validation import familywise_z

GAUSSIAN = ModelFamily.GAUSSIAN_LINEAR


def _linear_models(slope: float, carry: float = 0.0, trajectory: Optional[Trajectory] = None) -> FittedModels:
    """y = slope * a + carry * lag_y, without noise."""
    outcome = GaussianLinearModel.from_params("y", ("a", "lag_y"), 0.0, {"a": slope, "lag_y": carry}, 0.0)
    return FittedModels(GModelSpec(("a", "lag_y"), family=GAUSSIAN), outcome, trajectory=trajectory)


def test_transition_frame() -> None:
    """Test current and lagged columns for k = 2..t."""
    frame = transition_frame(Trajectory(a=[0, 1, 1], y=[1.0, 2.0, 3.0], l=[5.0, 6.0, 7.0], covariate_names=("l",)))
    assert frame["time"].tolist() == [2, 3]
    assert frame["lag_y"].tolist() == [1.0, 2.0]
    assert frame["lag_a"].tolist() == [0, 1]
    assert frame["lag_l"].tolist() == [5.0, 6.0]
    assert frame["l"].tolist() == [6.0, 7.0]


def test_model_spec_validation() -> None:
    """Test parent ordering and naming rules."""
    assert GModelSpec.relaxed(("l",)).outcome_parents == ("l", "a", "lag_y", "lag_l", "lag_a")
    assert GModelSpec.relaxed(("l",)).covariates[0].parents == ("a", "lag_y", "lag_l")
    with pytest.raises(ValidationError, match="outcome has unknown parents"):
        GModelSpec(("a", "mood"))
    with pytest.raises(ValidationError, match="unknown or later parents"):
        GModelSpec(("a",), (CovariateSpec("sleep", ("stress",)), CovariateSpec("stress")))
    with pytest.raises(ValidationError, match="distinct"):
        GModelSpec(("a",), (CovariateSpec("sleep"), CovariateSpec("sleep")))
    with pytest.raises(ValidationError, match="invalid covariate name"):
        CovariateSpec("lag_sleep")
    with pytest.raises(ValidationError, match="period"):
        CovariateSpec("sleep", period=0)
    with pytest.raises(ValidationError, match="takes no parents"):
        CovariateSpec("temperature", ("a",), deterministic=True)
    with pytest.raises(ValidationError, match="outcome value"):
        InitialConditions({"l": 0.0})


def test_deterministic_contrast() -> None:
    """Test a noise-free model against the hand-computed recursion."""
    # always(1): y_k = 2 + 0.5 * y_{k-1} from y_1 = 0
    result = gcomputation_mc(_linear_models(2.0, 0.5), 4, 10, seed=1, initial=InitialConditions({"y": 0.0}))
    assert result.times.tolist() == [2, 3, 4]
    assert result.contrast == pytest.approx([2.0, 3.0, 3.5])
    assert result.mean_control == pytest.approx([0.0, 0.0, 0.0])
    assert result.mc_se.tolist() == [0.0, 0.0, 0.0]
    assert result.reps == 10

    with pytest.raises(ValidationError, match="must exceed the origin time"):
        gcomputation_mc(_linear_models(2.0), 1, 10, seed=1, initial=InitialConditions({"y": 0.0}))
    with pytest.raises(ValidationError, match="explicit initial conditions"):
        gcomputation_mc(_linear_models(2.0), 4, 10, seed=1)


def test_block_layout_does_not_change_results() -> None:
    """Test that results depend on the seed and block size, not the worker count."""
    scm = random_discrete_scm(np.random.default_rng(7), Variant.RELAXED, ny=2, nl=2)
    models = FittedModels.from_kernels(GKernels.from_scm(scm, 0))
    initial = InitialConditions({"y": 0.0, "l": 0.0})
    serial = gcomputation_mc(models, 5, 300, seed=3, initial=initial, block_size=100)
    parallel = gcomputation_mc(models, 5, 300, seed=3, initial=initial, block_size=100, workers=2)
    assert np.array_equal(serial.contrast, parallel.contrast)


def test_kernel_models_match_the_recursion() -> None:
    """Test Monte Carlo contrasts from true kernels against the exact recursion."""
    scm = random_discrete_scm(np.random.default_rng(8), Variant.RELAXED, ny=2, nl=2)
    kernels = GKernels.from_scm(scm, 0)
    models = FittedModels.from_kernels(kernels)

    conditioned = gcomputation_mc(models, 6, 20_000, seed=4, initial=InitialConditions({"y": 1.0, "l": 0.0}))
    exact = ucate_series(kernels, 6, InitialState(y=1, l=0, a=None, time=1))
    z = familywise_z(len(exact))
    assert np.all(np.abs(conditioned.contrast - exact) <= z * conditioned.mc_se + 1e-12)

    # fixed origin treatment A_0 = 0 reproduces the SCM's own counterfactual means
    fixed = gcomputation_mc(models, 4, 20_000, seed=5, initial=InitialConditions({"y": 0.0, "l": 0.0}, a=0, time=0))
    truth = np.array([true_ucate(scm, 0, k) for k in range(1, 5)])
    assert fixed.times.tolist() == [1, 2, 3, 4]
    assert np.all(np.abs(fixed.contrast - truth) <= familywise_z(4) * fixed.mc_se + 1e-12)


def test_fitted_linear_model_reproduces_its_slope() -> None:
    """Test that g-computation with an outcome linear in A returns the fitted slope."""
    traj = simulate(AdditiveSCM(beta=0.0), None, Regime.natural(Schedule.from_string("01")), 200, seed=2)
    models = fit_models(traj, GModelSpec(("a",), family=GAUSSIAN))
    result = gcomputation_mc(models, 200, 2000, seed=6, block_size=500)
    assert isinstance(models.outcome_model, GaussianLinearModel)
    slope = float(models.outcome_model.params["a"])
    assert len(result.contrast) == 199
    assert np.all(np.abs(result.contrast - slope) <= familywise_z(199) * result.mc_se)


def test_periodic_and_deterministic_covariates() -> None:
    """Test that a periodic covariate is carried between draws and a deterministic one follows its path."""
    mood = CategoricalModel.from_table("mood", (), {}, [0.0, 1.0], np.array([0.5, 0.5]))
    outcome = GaussianLinearModel.from_params("y", ("mood", "temp"), 0.0, {"mood": 1.0, "temp": 10.0}, 0.0)
    spec = GModelSpec(
        ("mood", "temp"),
        (CovariateSpec("mood", period=3), CovariateSpec("temp", deterministic=True)),
        family=GAUSSIAN,
    )
    path = np.array([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    models = FittedModels(spec, outcome, {"mood": mood}, {"temp": path})
    panel = simulate_panel(models, np.ones(7, dtype=np.int64), 200, np.random.default_rng(0),
                           InitialConditions({"y": 0.0, "mood": 0.0}))
    mood_draws = panel["mood"]
    assert mood_draws.shape == (200, 6)
    # drawn at k = 4 and k = 7 only
    assert np.all(mood_draws[:, :2] == 0.0)
    assert np.all(mood_draws[:, 2:5] == mood_draws[:, [2]])
    assert 0 < mood_draws[:, 2].sum() < 200
    assert np.array_equal(panel["temp"][0], path[1:])
    assert np.array_equal(panel["y"], panel["mood"] + 10.0 * panel["temp"])

    with pytest.raises(ValidationError, match="no value at time 8"):
        simulate_panel(models, np.ones(8, dtype=np.int64), 2, np.random.default_rng(0),
                       InitialConditions({"y": 0.0, "mood": 0.0}))
    with pytest.raises(ValidationError, match="lack covariates"):
        simulate_panel(models, np.ones(7, dtype=np.int64), 2, np.random.default_rng(0),
                       InitialConditions({"y": 0.0}))


def test_fit_models_with_periodic_covariate() -> None:
    """Test that a periodic covariate is fitted on the first time point of each period."""
    a = expand_schedule(Schedule.from_string("000111"), 12)
    mood = np.array([0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1], dtype=np.float64)
    traj = Trajectory(a=a, y=mood + a, l=mood, covariate_names=("mood",))
    spec = GModelSpec(("mood", "a"), (CovariateSpec("mood", ("lag_mood",), period=3),))
    models = fit_models(traj, spec)
    mood_model = models.covariate_models["mood"]
    # fitted on k = 4, 7, 10 where mood always flips
    assert isinstance(mood_model, CategoricalModel)
    assert mood_model.counts.tolist() == [[0.0, 2.0], [1.0, 0.0]]
    with pytest.raises(ValidationError, match="no covariate 'sleep'"):
        fit_models(traj, GModelSpec(("a",), (CovariateSpec("sleep"),)))


def test_bootstrap_without_noise_has_zero_width() -> None:
    """Test that replicates of a noise-free model reproduce the point estimate."""
    schedule = Schedule.from_string("0011")
    a = expand_schedule(schedule, 12)
    models = _linear_models(1.5, trajectory=Trajectory(a=a, y=1.5 * a))
    inner = GComputationEstimator(GModelSpec(("a",), family=GAUSSIAN), reps=50)
    result = parametric_bootstrap(models, schedule, 12, 5, inner, level=0.9, seed=3)
    assert result.times == list(range(2, 13))
    assert result.failures == 0
    assert result.replicates.shape == (5, 11)
    for estimate in result.estimates:
        assert estimate.point == pytest.approx(1.5, abs=1e-9)
        assert estimate.ci_high - estimate.ci_low < 1e-9
        assert (estimate.n_treated, estimate.n_control) == (6, 6)
        assert estimate.method == "bootstrap-gcomputation/normal"

    percentile = parametric_bootstrap(models, schedule, 12, 5, inner, seed=3, method=IntervalMethod.PERCENTILE)
    assert percentile.estimates[0].method == "bootstrap-gcomputation/percentile"


class _FailingEstimator(InnerEstimator):
    """Fails on the first `failures` calls, then returns zeros."""
    name = "failing"

    def __init__(self, failures: int, length: int) -> None:
        self.remaining = failures
        self.length = length

    def estimate(self, traj: Trajectory, seed: int) -> np.ndarray:
        if self.remaining > 0:
            self.remaining -= 1
            raise NonEstimableError("unobserved row")
        return np.zeros(self.length)


def test_bootstrap_failure_share() -> None:
    """Test that a few failed replicates are dropped and too many abort."""
    schedule = Schedule.from_string("0011")
    a = expand_schedule(schedule, 12)
    models = _linear_models(1.5, trajectory=Trajectory(a=a, y=1.5 * a))
    tolerated = parametric_bootstrap(models, schedule, 12, 20, _FailingEstimator(2, 11), point=np.zeros(11))
    assert tolerated.failures == 2
    assert tolerated.reasons == {"NonEstimableError": 2}
    assert tolerated.replicates.shape == (18, 11)

    with pytest.raises(BootstrapAbortError) as excinfo:
        parametric_bootstrap(models, schedule, 12, 20, _FailingEstimator(3, 11), point=np.zeros(11))
    assert (excinfo.value.failures, excinfo.value.total) == (3, 20)
    assert isinstance(excinfo.value, EstimationError)
    with pytest.raises(ValidationError, match="B must be >= 2"):
        parametric_bootstrap(models, schedule, 12, 1, _FailingEstimator(0, 11))

"""
Structural causal models for N-of-1 trials.

DiscreteSCM stores the conditional kernels induced by the structural
equations rather than the equations themselves. Noise is realised by
inverse-transform sampling from shared uniforms, which gives one valid
cross-world model consistent with the kernels: simulating two regimes with
the same NoiseRecord yields the two potential outcome paths of one
individual.

Internal kernel layout (all variants are stored in this full form):
    l_kernel[u, a, yp, lp, l]          P(L_k = l | A_k, Y_{k-1}, L_{k-1}, U)
    y_kernel[u, l, a, yp, lp, ap, y]   P(Y_k = y | L_k, A_k, Y_{k-1}, L_{k-1}, A_{k-1}, U)
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np

from src.errors import ValidationError
from src.estimate_basic import tau_hat
from src.forward import InitialState, Step, enumerate_mean, forward_means, initial_weights
from src.schedule import Design, Schedule, expand_schedule
from src.trajectory import Trajectory

logger = logging.getLogger("nof1.scm")

KERNEL_TOLERANCE = 1e-12


class Variant(Enum):
    BASIC = "basic"
    RELAXED = "relaxed"
    TIME_TREND = "time_trend"


class NoiseFamily(Enum):
    GAUSSIAN = "gaussian"
    UNIFORM = "uniform"
    CONSTANT = "constant"


class RegimeKind(Enum):
    NATURAL = "natural"
    ALWAYS = "always"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class Regime:
    """Treatment strategy: follow a schedule, force x at all times, or an explicit sequence."""
    kind: RegimeKind
    schedule: Optional[Schedule] = None
    x: Optional[int] = None
    sequence: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind is RegimeKind.NATURAL and self.schedule is None:
            raise ValidationError("natural regime needs a schedule")
        if self.kind is RegimeKind.ALWAYS and self.x not in (0, 1):
            raise ValidationError(f"always regime needs x in {{0, 1}}, got {self.x!r}")
        if self.kind is RegimeKind.EXPLICIT:
            if not self.sequence or any(v not in (0, 1) for v in self.sequence):
                raise ValidationError("explicit regime needs a non-empty binary sequence")

    @classmethod
    def natural(cls, schedule: Schedule) -> "Regime":
        return cls(RegimeKind.NATURAL, schedule=schedule)

    @classmethod
    def always(cls, x: int) -> "Regime":
        return cls(RegimeKind.ALWAYS, x=x)

    @classmethod
    def explicit(cls, sequence: Union[Tuple[int, ...], List[int], np.ndarray]) -> "Regime":
        return cls(RegimeKind.EXPLICIT, sequence=tuple(int(v) for v in sequence))

    def treatments(self, t: int) -> np.ndarray:
        """Treatment values for k = 1..t."""
        if self.kind is RegimeKind.NATURAL:
            assert self.schedule is not None
            return expand_schedule(self.schedule, t)
        if self.kind is RegimeKind.ALWAYS:
            return np.full(t, self.x, dtype=np.int64)
        if len(self.sequence) != t:
            raise ValidationError(f"explicit regime has length {len(self.sequence)}, expected t={t}")
        return np.asarray(self.sequence, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class NoiseRecord:
    """
    Realised exogenous noise for k = 1..t.

    For a DiscreteSCM both arrays hold uniforms in [0, 1) consumed by
    inverse-transform sampling (gamma for L, epsilon for Y). For an
    AdditiveSCM epsilon holds the additive noise itself and gamma is unused.
    """
    epsilon: np.ndarray
    gamma: Optional[np.ndarray] = None

    @property
    def t(self) -> int:
        return len(self.epsilon)


def _check_rows(name: str, table: np.ndarray) -> None:
    if np.any(table < 0):
        raise ValidationError(f"{name} has negative entries")
    sums = table.sum(axis=-1)
    worst = float(np.max(np.abs(sums - 1.0)))
    if worst > KERNEL_TOLERANCE:
        bad = np.unravel_index(int(np.argmax(np.abs(sums - 1.0))), sums.shape)
        raise ValidationError(f"{name} row {tuple(int(i) for i in bad)} sums to {float(sums[bad])!r}, not 1")


@dataclass(frozen=True, eq=False)
class DiscreteSCM:
    """
    Tabular SCM for the basic, relaxed and time-trend models.

    Use the variant constructors (`basic`, `relaxed`, `time_trend`), which
    accept the reduced tables of each variant and broadcast them into the
    full layout.
    """
    variant: Variant
    y_values: np.ndarray
    l_values: np.ndarray
    u_levels: Tuple[str, ...]
    u_weights: np.ndarray
    l_kernel: np.ndarray
    y_kernel: np.ndarray
    initial: InitialState = field(default_factory=InitialState)
    declared_positive: bool = False
    lag: int = 1

    def __post_init__(self) -> None:
        y_values = np.asarray(self.y_values, dtype=np.float64)
        l_values = np.asarray(self.l_values, dtype=np.float64)
        u_weights = np.asarray(self.u_weights, dtype=np.float64)
        object.__setattr__(self, "y_values", y_values)
        object.__setattr__(self, "l_values", l_values)
        object.__setattr__(self, "u_weights", u_weights)
        object.__setattr__(self, "l_kernel", np.asarray(self.l_kernel, dtype=np.float64))
        object.__setattr__(self, "y_kernel", np.asarray(self.y_kernel, dtype=np.float64))

        if self.lag != 1:
            raise ValidationError(f"only lag 1 structural dependence is supported, got lag={self.lag}")
        ny, nl, nu = len(y_values), len(l_values), len(self.u_levels)
        if ny < 1 or nl < 1 or nu < 1:
            raise ValidationError("outcome, covariate and baseline domains must be non-empty")
        if len(set(self.u_levels)) != nu:
            raise ValidationError("baseline levels must be distinct")
        if len(set(y_values.tolist())) != ny:
            raise ValidationError("outcome labels must be distinct")
        if u_weights.shape != (nu,):
            raise ValidationError(f"expected {nu} baseline weights, got shape {u_weights.shape}")
        if np.any(u_weights < 0) or abs(float(u_weights.sum()) - 1.0) > KERNEL_TOLERANCE:
            raise ValidationError("baseline weights must be non-negative and sum to 1")
        if self.l_kernel.shape != (nu, 2, ny, nl, nl):
            raise ValidationError(f"l_kernel has shape {self.l_kernel.shape}, expected {(nu, 2, ny, nl, nl)}")
        if self.y_kernel.shape != (nu, nl, 2, ny, nl, 2, ny):
            raise ValidationError(f"y_kernel has shape {self.y_kernel.shape}, expected {(nu, nl, 2, ny, nl, 2, ny)}")
        _check_rows("l_kernel", self.l_kernel)
        _check_rows("y_kernel", self.y_kernel)
        if self.declared_positive and not self.is_positive():
            raise ValidationError("SCM declared positive but a kernel entry is zero")
        if self.initial.y >= ny or self.initial.l >= nl:
            raise ValidationError("initial levels lie outside the declared domains")
        if self.initial.a is None:
            raise ValidationError("the SCM origin treatment A_0 must be a fixed value")

    @classmethod
    def basic(
        cls,
        y_values: np.ndarray,
        y_kernel: np.ndarray,
        u_levels: Tuple[str, ...] = ("u0",),
        u_weights: Optional[np.ndarray] = None,
        initial: Optional[InitialState] = None,
        declared_positive: bool = False,
    ) -> "DiscreteSCM":
        """y_kernel[u, a, y] = P(Y_k = y | A_k = a, U = u)."""
        table = np.asarray(y_kernel, dtype=np.float64)
        nu, ny = len(u_levels), len(y_values)
        if table.shape != (nu, 2, ny):
            raise ValidationError(f"basic y_kernel has shape {table.shape}, expected {(nu, 2, ny)}")
        full_y = np.broadcast_to(table[:, None, :, None, None, None, :], (nu, 1, 2, ny, 1, 2, ny))
        full_l = np.ones((nu, 2, ny, 1, 1))
        return cls(
            Variant.BASIC, np.asarray(y_values), np.zeros(1), tuple(u_levels),
            _weights(u_weights, nu), full_l, full_y.copy(), initial or InitialState(), declared_positive,
        )

    @classmethod
    def relaxed(
        cls,
        y_values: np.ndarray,
        l_values: np.ndarray,
        l_kernel: np.ndarray,
        y_kernel: np.ndarray,
        u_levels: Tuple[str, ...] = ("u0",),
        u_weights: Optional[np.ndarray] = None,
        initial: Optional[InitialState] = None,
        declared_positive: bool = False,
    ) -> "DiscreteSCM":
        """Full tables: l_kernel[u, a, yp, lp, l], y_kernel[u, l, a, yp, lp, ap, y]."""
        return cls(
            Variant.RELAXED, np.asarray(y_values), np.asarray(l_values), tuple(u_levels),
            _weights(u_weights, len(u_levels)), np.asarray(l_kernel), np.asarray(y_kernel),
            initial or InitialState(), declared_positive,
        )

    @classmethod
    def time_trend(
        cls,
        y_values: np.ndarray,
        l_values: np.ndarray,
        l_kernel: np.ndarray,
        y_kernel: np.ndarray,
        u_levels: Tuple[str, ...] = ("u0",),
        u_weights: Optional[np.ndarray] = None,
        initial: Optional[InitialState] = None,
        declared_positive: bool = False,
    ) -> "DiscreteSCM":
        """l_kernel[u, lp, l] and y_kernel[u, l, a, lp, y]: no carryover, L unaffected by A or Y."""
        l_table = np.asarray(l_kernel, dtype=np.float64)
        y_table = np.asarray(y_kernel, dtype=np.float64)
        nu, ny, nl = len(u_levels), len(y_values), len(l_values)
        if l_table.shape != (nu, nl, nl):
            raise ValidationError(f"time-trend l_kernel has shape {l_table.shape}, expected {(nu, nl, nl)}")
        if y_table.shape != (nu, nl, 2, nl, ny):
            raise ValidationError(f"time-trend y_kernel has shape {y_table.shape}, expected {(nu, nl, 2, nl, ny)}")
        full_l = np.broadcast_to(l_table[:, None, None, :, :], (nu, 2, ny, nl, nl))
        full_y = np.broadcast_to(y_table[:, :, :, None, :, None, :], (nu, nl, 2, ny, nl, 2, ny))
        return cls(
            Variant.TIME_TREND, np.asarray(y_values), np.asarray(l_values), tuple(u_levels),
            _weights(u_weights, nu), full_l.copy(), full_y.copy(), initial or InitialState(), declared_positive,
        )

    @property
    def ny(self) -> int:
        return len(self.y_values)

    @property
    def nl(self) -> int:
        return len(self.l_values)

    def u_index(self, u: Union[str, int]) -> int:
        if isinstance(u, str):
            if u not in self.u_levels:
                raise ValidationError(f"unknown baseline level {u!r}")
            return self.u_levels.index(u)
        if not 0 <= int(u) < len(self.u_levels):
            raise ValidationError(f"baseline index {u} out of range")
        return int(u)

    def reduced_l_kernel(self) -> Optional[np.ndarray]:
        """The variant's own l table (None for basic)."""
        if self.variant is Variant.BASIC:
            return None
        if self.variant is Variant.TIME_TREND:
            return self.l_kernel[:, 0, 0, :, :]
        return self.l_kernel

    def reduced_y_kernel(self) -> np.ndarray:
        if self.variant is Variant.BASIC:
            return self.y_kernel[:, 0, :, 0, 0, 0, :]
        if self.variant is Variant.TIME_TREND:
            return self.y_kernel[:, :, :, 0, :, 0, :]
        return self.y_kernel

    def is_positive(self) -> bool:
        """Every kernel entry the variant actually uses is strictly positive."""
        reduced_l = self.reduced_l_kernel()
        l_ok = True if reduced_l is None else bool(np.all(reduced_l > 0))
        return l_ok and bool(np.all(self.reduced_y_kernel() > 0))

    def is_homogeneous(self, t: int, tol: float = 1e-12) -> bool:
        """No effect modification by U: every level has the same U-CATE at k = 1..t."""
        effects = [
            exact_counterfactual_means(self, u, Regime.always(1), t) - exact_counterfactual_means(self, u, Regime.always(0), t)
            for u in range(len(self.u_levels))
        ]
        return all(np.allclose(e, effects[0], rtol=0.0, atol=tol) for e in effects[1:])

    def steps(self, u: Union[str, int], treatments: np.ndarray, origin_a: Optional[int] = None) -> List[Step]:
        """Per-step (gl, gy) kernels along a treatment sequence."""
        ui = self.u_index(u)
        prev = self.initial.a if origin_a is None else origin_a
        out: List[Step] = []
        for a in treatments:
            a = int(a)
            out.append((self.l_kernel[ui, a], self.y_kernel[ui, :, a, :, :, prev, :]))
            prev = a
        return out


def _weights(weights: Optional[np.ndarray], n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    return np.asarray(weights, dtype=np.float64)


@dataclass(frozen=True)
class AdditiveSCM:
    """Y_k = beta * A_k + u + eps_k with i.i.d. noise of standard deviation noise_sd."""
    beta: float
    u_value: float = 0.0
    noise_sd: float = 1.0
    noise_family: NoiseFamily = NoiseFamily.GAUSSIAN

    def __post_init__(self) -> None:
        if self.noise_sd < 0:
            raise ValidationError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.noise_family is NoiseFamily.CONSTANT and self.noise_sd != 0:
            raise ValidationError("constant noise family requires noise_sd = 0")


SCM = Union[DiscreteSCM, AdditiveSCM]


def random_discrete_scm(
    rng: np.random.Generator,
    variant: Variant = Variant.RELAXED,
    ny: int = 2,
    nl: int = 2,
    nu: int = 1,
    concentration: float = 1.0,
) -> DiscreteSCM:
    """A strictly positive random SCM with Dirichlet kernel rows (for oracle checks)."""
    y_values = np.arange(ny, dtype=np.float64)
    l_values = np.arange(nl, dtype=np.float64)
    u_levels = tuple(f"u{i}" for i in range(nu))
    u_weights = rng.dirichlet(np.ones(nu)) if nu > 1 else np.ones(1)

    def rows(shape: Tuple[int, ...], n: int) -> np.ndarray:
        table = rng.dirichlet(np.full(n, concentration), size=shape)
        # keep the construction-time positivity check meaningful
        table = np.clip(table, 1e-6, None)
        return table / table.sum(axis=-1, keepdims=True)

    if variant is Variant.BASIC:
        return DiscreteSCM.basic(y_values, rows((nu, 2), ny), u_levels, u_weights, declared_positive=True)
    if variant is Variant.TIME_TREND:
        return DiscreteSCM.time_trend(
            y_values, l_values, rows((nu, nl), nl), rows((nu, nl, 2, nl), ny), u_levels, u_weights,
            declared_positive=True,
        )
    return DiscreteSCM.relaxed(
        y_values, l_values, rows((nu, 2, ny, nl), nl), rows((nu, nl, 2, ny, nl, 2), ny), u_levels, u_weights,
        declared_positive=True,
    )


def _additive_noise(scm: AdditiveSCM, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    if scm.noise_family is NoiseFamily.GAUSSIAN:
        return rng.normal(0.0, scm.noise_sd, size=shape)
    if scm.noise_family is NoiseFamily.UNIFORM:
        half_width = np.sqrt(3.0) * scm.noise_sd
        return rng.uniform(-half_width, half_width, size=shape)
    return np.zeros(shape)


def draw_noise(scm: SCM, t: int, rng: np.random.Generator) -> NoiseRecord:
    if isinstance(scm, AdditiveSCM):
        return NoiseRecord(epsilon=_additive_noise(scm, (t,), rng))
    return NoiseRecord(epsilon=rng.random(t), gamma=rng.random(t))


def _inverse_transform(rows: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Level index per row: the first level whose cumulative probability exceeds the uniform."""
    cumulative = np.cumsum(rows, axis=-1)
    index = (uniforms[..., None] >= cumulative).sum(axis=-1)
    return np.minimum(index, rows.shape[-1] - 1)


def run_discrete(
    scm: DiscreteSCM,
    u: Union[str, int],
    treatments: np.ndarray,
    gamma: np.ndarray,
    epsilon: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised sequential draw for many noise records at once.

    Args:
        treatments: (t,) treatment sequence
        gamma, epsilon: (n, t) uniforms

    Returns:
        Tuple of (n, t) outcome level indices and covariate level indices
    """
    ui = scm.u_index(u)
    n, t = epsilon.shape
    y_idx = np.empty((n, t), dtype=np.int64)
    l_idx = np.empty((n, t), dtype=np.int64)
    y_prev = np.full(n, scm.initial.y)
    l_prev = np.full(n, scm.initial.l)
    a_prev = int(scm.initial.a)  # type: ignore[arg-type]
    for k in range(t):
        a = int(treatments[k])
        l_cur = _inverse_transform(scm.l_kernel[ui, a, y_prev, l_prev], gamma[:, k])
        y_cur = _inverse_transform(scm.y_kernel[ui, l_cur, a, y_prev, l_prev, a_prev], epsilon[:, k])
        y_idx[:, k] = y_cur
        l_idx[:, k] = l_cur
        y_prev, l_prev, a_prev = y_cur, l_cur, a
    return y_idx, l_idx


def simulate_with_noise(
    scm: SCM,
    u: Union[str, int, float, None],
    regime: Regime,
    t: int,
    noise: NoiseRecord,
) -> Trajectory:
    """Deterministic sequential evaluation of the structural equations for a given noise record."""
    if t < 1:
        raise ValidationError(f"horizon must be >= 1, got t={t}")
    if noise.t < t:
        raise ValidationError(f"noise record covers {noise.t} time points, {t} required")
    a = regime.treatments(t)
    schedule = regime.schedule if regime.kind is RegimeKind.NATURAL else None
    if isinstance(scm, AdditiveSCM):
        shift = scm.u_value if u is None else float(u)
        y = scm.beta * a + shift + noise.epsilon[:t]
        return Trajectory(a=a, y=y, schedule=schedule)
    if noise.gamma is None or len(noise.gamma) < t:
        raise ValidationError("discrete SCM noise record needs gamma uniforms for every time point")
    if u is None or isinstance(u, float):
        raise ValidationError("discrete SCM simulation needs a baseline level")
    y_idx, l_idx = run_discrete(scm, u, a, noise.gamma[None, :t], noise.epsilon[None, :t])
    label = u if isinstance(u, str) else scm.u_levels[int(u)]
    if scm.variant is Variant.BASIC:
        return Trajectory(a=a, y=scm.y_values[y_idx[0]], u_label=label, schedule=schedule)
    return Trajectory(
        a=a, y=scm.y_values[y_idx[0]], l=scm.l_values[l_idx[0]], covariate_names=("l",),
        u_label=label, schedule=schedule,
    )


def simulate(
    scm: SCM,
    u: Union[str, int, float, None],
    regime: Regime,
    t: int,
    seed: int,
) -> Trajectory:
    """Simulate one trajectory; identical inputs give identical trajectories."""
    rng = np.random.default_rng(seed)
    return simulate_with_noise(scm, u, regime, t, draw_noise(scm, t, rng))


def simulate_outcomes(
    scm: SCM,
    u: Union[str, int, float, None],
    regime: Regime,
    t: int,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Outcome matrix (n, t) of n independent trajectories under one regime."""
    a = regime.treatments(t)
    if isinstance(scm, AdditiveSCM):
        shift = scm.u_value if u is None else float(u)
        return scm.beta * a[None, :] + shift + _additive_noise(scm, (n, t), rng)
    if u is None or isinstance(u, float):
        raise ValidationError("discrete SCM simulation needs a baseline level")
    y_idx, _ = run_discrete(scm, u, a, rng.random((n, t)), rng.random((n, t)))
    return scm.y_values[y_idx]


def exact_counterfactual_means(
    scm: DiscreteSCM,
    u: Union[str, int],
    regime: Regime,
    t: int,
    origin_a: Optional[int] = None,
) -> np.ndarray:
    """
    E(Y_k under the regime | U = u) for k = 1..t by forward recursion.

    `origin_a` replaces the SCM's A_0 for the first step.
    """
    steps = scm.steps(u, regime.treatments(t), origin_a)
    return forward_means(scm.y_values, initial_weights(scm.ny, scm.nl, scm.initial), steps)


def exact_counterfactual_mean(scm: SCM, u: Union[str, int, float, None], k: int, x: int) -> float:
    """E(Y_k^{always x} | U = u)."""
    if k < 1:
        raise ValidationError(f"time points start at 1, got k={k}")
    if isinstance(scm, AdditiveSCM):
        shift = scm.u_value if u is None else float(u)
        return scm.beta * x + shift
    if u is None or isinstance(u, float):
        raise ValidationError("discrete SCM needs a baseline level")
    return float(exact_counterfactual_means(scm, u, Regime.always(x), k)[k - 1])


def enumerate_counterfactual_mean(scm: DiscreteSCM, u: Union[str, int], regime: Regime, k: int) -> float:
    """Brute-force sum over every (y, l) trajectory up to time k."""
    steps = scm.steps(u, regime.treatments(k))
    return enumerate_mean(scm.y_values, (scm.initial.y, scm.initial.l), steps)


def true_ucate(scm: SCM, u: Union[str, int, float, None], k: int) -> float:
    """U-CATE at time k: always-treated minus never-treated mean given U = u."""
    return exact_counterfactual_mean(scm, u, k, 1) - exact_counterfactual_mean(scm, u, k, 0)


def true_ace(scm: DiscreteSCM, k: int) -> float:
    """Population effect: the baseline-weighted average of U-CATE."""
    return float(sum(w * true_ucate(scm, i, k) for i, w in enumerate(scm.u_weights)))


def true_ace_series(scm: DiscreteSCM, t: int, origin_follows: bool = False) -> np.ndarray:
    """
    Population effect for k = 1..t in one recursion per baseline level.

    With origin_follows, A_0 equals the intervention value, which is the
    target of the g-formula started from a known (Y_0, L_0) without a fixed
    origin treatment.
    """
    total = np.zeros(t)
    for i, w in enumerate(scm.u_weights):
        treated = exact_counterfactual_means(scm, i, Regime.always(1), t, 1 if origin_follows else None)
        control = exact_counterfactual_means(scm, i, Regime.always(0), t, 0 if origin_follows else None)
        total += w * (treated - control)
    return total


def ice_given_noise(scm: SCM, u: Union[str, int, float, None], noise: NoiseRecord, k: int) -> float:
    """Individual effect at k: the same noise record evaluated under always(1) and always(0)."""
    if k < 1:
        raise ValidationError(f"time points start at 1, got k={k}")
    if noise.t < k or (isinstance(scm, DiscreteSCM) and (noise.gamma is None or len(noise.gamma) < k)):
        raise ValidationError(f"noise record does not cover time point {k}")
    treated = simulate_with_noise(scm, u, Regime.always(1), k, noise)
    control = simulate_with_noise(scm, u, Regime.always(0), k, noise)
    return float(treated.y[k - 1] - control.y[k - 1])


def design_average_tau(design: Design, scm: SCM, u: Union[str, int, float, None], noise: NoiseRecord) -> float:
    """
    Design-weighted average of the mean-difference estimate over every
    schedule in the design, holding the individual and noise record fixed.
    """
    t = design.horizon_t
    total = 0.0
    for schedule, p in zip(design.schedules, design.probabilities):
        if p == 0:
            continue
        total += p * tau_hat(simulate_with_noise(scm, u, Regime.natural(schedule), t, noise))
    return total


def mean_ice(scm: SCM, u: Union[str, int, float, None], noise: NoiseRecord, t: int) -> float:
    """(1/t) * sum of individual effects over k = 1..t."""
    treated = simulate_with_noise(scm, u, Regime.always(1), t, noise)
    control = simulate_with_noise(scm, u, Regime.always(0), t, noise)
    return float(np.mean(treated.y - control.y))

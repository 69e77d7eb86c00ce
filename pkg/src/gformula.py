"""
Frequency-estimated conditional kernels and the longitudinal g-formula.

Kernel layout (x is the intervention value):
    gl[x, yp, lp, l]            from time points with A_k = x
    gy[x, l, yp, lp, y]         from time points with A_k = A_{k-1} = x
    gy_switch[x, l, yp, lp, y]  from time points with A_k = x, A_{k-1} = 1 - x

Switch rows are only needed for the first step when the recursion origin
carries a treatment different from x.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import NonEstimableError, ValidationError
from src.forward import InitialState, Step, forward_distributions, initial_weights
from src.scm import DiscreteSCM
from src.trajectory import Trajectory

logger = logging.getLogger("nof1.gformula")


@dataclass(frozen=True)
class IndexSets:
    """1-based time points usable for each kernel family."""
    treated: Dict[int, Tuple[int, ...]]
    doubled: Dict[int, Tuple[int, ...]]
    switched: Dict[int, Tuple[int, ...]]

    def missing_doubled(self) -> List[int]:
        return [x for x in (0, 1) if not self.doubled[x]]


@dataclass(frozen=True, eq=False)
class GKernels:
    y_values: np.ndarray
    l_values: np.ndarray
    gl: np.ndarray
    gy: np.ndarray
    gy_switch: np.ndarray
    gl_counts: np.ndarray
    gy_counts: np.ndarray
    gy_switch_counts: np.ndarray
    smoothing: float = 0.0

    def __post_init__(self) -> None:
        ny, nl = len(self.y_values), len(self.l_values)
        if self.smoothing < 0:
            raise ValidationError(f"smoothing must be >= 0, got {self.smoothing}")
        if self.gl.shape != (2, ny, nl, nl):
            raise ValidationError(f"gl has shape {self.gl.shape}, expected {(2, ny, nl, nl)}")
        for name in ("gy", "gy_switch"):
            shape = getattr(self, name).shape
            if shape != (2, nl, ny, nl, ny):
                raise ValidationError(f"{name} has shape {shape}, expected {(2, nl, ny, nl, ny)}")
        for name in ("gl", "gy", "gy_switch"):
            table = getattr(self, name)
            sums = table.sum(axis=-1)
            # rows are either probability vectors or all-zero (unobserved, unsmoothed)
            if np.any(table < 0) or not np.all(np.isclose(sums, 1.0, rtol=0.0, atol=1e-12) | (sums == 0.0)):
                raise ValidationError(f"{name} rows must be probability vectors")

    @property
    def ny(self) -> int:
        return len(self.y_values)

    @property
    def nl(self) -> int:
        return len(self.l_values)

    @property
    def gl_valid(self) -> np.ndarray:
        return self.gl.sum(axis=-1) > 0

    @property
    def gy_valid(self) -> np.ndarray:
        return self.gy.sum(axis=-1) > 0

    @property
    def gy_switch_valid(self) -> np.ndarray:
        return self.gy_switch.sum(axis=-1) > 0

    @classmethod
    def from_scm(cls, scm: DiscreteSCM, u: Union[str, int]) -> "GKernels":
        """The true kernels of an SCM at one baseline level."""
        ui = scm.u_index(u)
        gl = np.stack([scm.l_kernel[ui, x] for x in (0, 1)])
        gy = np.stack([scm.y_kernel[ui, :, x, :, :, x, :] for x in (0, 1)])
        gy_switch = np.stack([scm.y_kernel[ui, :, x, :, :, 1 - x, :] for x in (0, 1)])
        return cls(
            scm.y_values, scm.l_values, gl, gy, gy_switch,
            np.zeros(gl.shape, dtype=np.int64), np.zeros(gy.shape, dtype=np.int64),
            np.zeros(gy_switch.shape, dtype=np.int64),
        )

    def level_of_y(self, value: float) -> int:
        return _level_index(self.y_values, np.array([value]), "outcome")[0]

    def level_of_l(self, value: float) -> int:
        return _level_index(self.l_values, np.array([value]), "covariate")[0]

    def step(self, x: int, origin_treatment: int) -> Tuple[Step, np.ndarray, np.ndarray]:
        """One step's (gl, gy) kernels for intervention x, with their validity masks."""
        if origin_treatment == x:
            gy, gy_valid = self.gy[x], self.gy_valid[x]
        else:
            gy, gy_valid = self.gy_switch[x], self.gy_switch_valid[x]
        return (self.gl[x], gy), self.gl_valid[x], gy_valid


def index_sets(traj: Trajectory, initial: Optional[InitialState] = None) -> IndexSets:
    """
    Time points with A_k = x, with A_k = A_{k-1} = x and with a switch into x.

    Without a fixed origin treatment, k ranges over 2..t; with one, k = 1
    also qualifies, comparing against the origin.
    """
    a = traj.a
    if initial is not None and initial.a is not None:
        previous = np.concatenate(([initial.a], a[:-1]))
        times = np.arange(1, traj.t + 1)
    else:
        previous = a[:-1]
        a = a[1:]
        times = np.arange(2, traj.t + 1)
    treated = {x: tuple(int(k) for k in times[a == x]) for x in (0, 1)}
    doubled = {x: tuple(int(k) for k in times[(a == x) & (previous == x)]) for x in (0, 1)}
    switched = {x: tuple(int(k) for k in times[(a == x) & (previous != x)]) for x in (0, 1)}
    return IndexSets(treated, doubled, switched)


def _level_index(levels: np.ndarray, values: np.ndarray, what: str) -> np.ndarray:
    lookup = {float(v): i for i, v in enumerate(levels)}
    out = np.empty(len(values), dtype=np.int64)
    for pos, value in enumerate(values):
        index = lookup.get(float(value))
        if index is None:
            raise ValidationError(f"{what} value {value!r} at time {pos + 1} is not a declared level")
        out[pos] = index
    return out


def _covariate_column(traj: Trajectory, covariate: Optional[str]) -> Optional[np.ndarray]:
    if traj.l is None:
        if covariate is not None:
            raise ValidationError(f"trajectory has no covariate {covariate!r}")
        return None
    if covariate is not None:
        return traj.covariate(covariate)
    if traj.l.shape[1] != 1:
        raise ValidationError(
            f"kernel estimation uses one discrete covariate; choose one of {list(traj.covariate_names)}"
        )
    return traj.l[:, 0]


def _normalise(counts: np.ndarray, smoothing: float) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    if smoothing > 0:
        return (counts + smoothing) / (totals + smoothing * counts.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, counts / np.where(totals > 0, totals, 1), 0.0)


def observed_initial(traj: Trajectory, kernels: GKernels, covariate: Optional[str] = None) -> InitialState:
    """Condition on the first observation; the origin treatment follows the intervention."""
    column = _covariate_column(traj, covariate)
    l_level = 0 if column is None else kernels.level_of_l(float(column[0]))
    return InitialState(y=kernels.level_of_y(float(traj.y[0])), l=l_level, a=None, time=1)


def fit_kernels(
    traj: Trajectory,
    smoothing: float = 0.0,
    y_values: Optional[Sequence[float]] = None,
    l_values: Optional[Sequence[float]] = None,
    covariate: Optional[str] = None,
    strict: bool = True,
    initial: Optional[InitialState] = None,
) -> GKernels:
    """
    Pool every qualifying time point into frequency kernels.

    Cell probability is (count + smoothing) / (row total + smoothing * |domain|).
    With smoothing 0, rows never observed stay all-zero and are flagged invalid.

    Args:
        traj: observed trajectory with discrete outcome and covariate levels
        smoothing: Laplace pseudo-count
        y_values, l_values: declared level sets; default to the observed levels
        covariate: covariate column to use when the trajectory has several
        strict: with smoothing 0, raise when a row reachable from the origin is unobserved
        initial: fixed origin (A_0, Y_0, L_0); default conditions on time 1

    Returns:
        GKernels: fitted kernels with raw counts

    Raises:
        NonEstimableError: no doubled-treatment time point for some x, or a
            reachable row was never observed
    """
    if smoothing < 0:
        raise ValidationError(f"smoothing must be >= 0, got {smoothing}")
    sets = index_sets(traj, initial)
    missing = sets.missing_doubled()
    if missing:
        raise NonEstimableError(
            "no time point with the same treatment twice in a row for "
            + " and ".join(f"x={x}" for x in missing)
            + " (the schedule violates condition Z2 or t is shorter than a cycle)"
        )

    column = _covariate_column(traj, covariate)
    y_levels = np.asarray(sorted(set(traj.y.tolist())) if y_values is None else y_values, dtype=np.float64)
    if column is None:
        l_levels = np.zeros(1) if l_values is None else np.asarray(l_values, dtype=np.float64)
        l_obs = np.zeros(traj.t, dtype=np.int64)
    else:
        l_levels = np.asarray(sorted(set(column.tolist())) if l_values is None else l_values, dtype=np.float64)
        l_obs = _level_index(l_levels, column, "covariate")
    y_obs = _level_index(y_levels, traj.y, "outcome")
    ny, nl = len(y_levels), len(l_levels)

    a = traj.a
    if initial is not None and initial.a is not None:
        y_prev = np.concatenate(([initial.y], y_obs[:-1]))
        l_prev = np.concatenate(([initial.l], l_obs[:-1]))
        a_prev = np.concatenate(([initial.a], a[:-1]))
        y_cur, l_cur, a_cur = y_obs, l_obs, a
    else:
        y_prev, l_prev, a_prev = y_obs[:-1], l_obs[:-1], a[:-1]
        y_cur, l_cur, a_cur = y_obs[1:], l_obs[1:], a[1:]

    gl_counts = np.zeros((2, ny, nl, nl), dtype=np.int64)
    gy_counts = np.zeros((2, nl, ny, nl, ny), dtype=np.int64)
    switch_counts = np.zeros((2, nl, ny, nl, ny), dtype=np.int64)
    np.add.at(gl_counts, (a_cur, y_prev, l_prev, l_cur), 1)
    same = a_cur == a_prev
    np.add.at(gy_counts, (a_cur[same], l_cur[same], y_prev[same], l_prev[same], y_cur[same]), 1)
    np.add.at(switch_counts, (a_cur[~same], l_cur[~same], y_prev[~same], l_prev[~same], y_cur[~same]), 1)

    kernels = GKernels(
        y_levels, l_levels,
        _normalise(gl_counts.astype(np.float64), smoothing),
        _normalise(gy_counts.astype(np.float64), smoothing),
        _normalise(switch_counts.astype(np.float64), smoothing),
        gl_counts, gy_counts, switch_counts, float(smoothing),
    )
    logger.debug(
        "Fitted kernels from %d transitions (|Y|=%d, |L|=%d, smoothing=%s)", len(a_cur), ny, nl, smoothing,
    )

    if smoothing == 0 and strict:
        origin = initial if initial is not None else InitialState(
            y=int(y_obs[0]), l=int(l_obs[0]), a=None, time=1,
        )
        cells = unobserved_reachable_cells(kernels, origin)
        if cells:
            raise NonEstimableError("kernel rows needed by the g-formula were never observed", cells)
    return kernels


def _describe_l_cell(kernels: GKernels, x: int, yp: int, lp: int) -> Tuple[object, ...]:
    return ("gL", f"x={x}", f"y_prev={kernels.y_values[yp]:g}", f"l_prev={kernels.l_values[lp]:g}")


def _describe_y_cell(kernels: GKernels, x: int, switch: bool, l: int, yp: int, lp: int) -> Tuple[object, ...]:
    family = "gY_switch" if switch else "gY"
    return (
        family, f"x={x}", f"l={kernels.l_values[l]:g}",
        f"y_prev={kernels.y_values[yp]:g}", f"l_prev={kernels.l_values[lp]:g}",
    )


def _scan_step(
    kernels: GKernels, support: np.ndarray, x: int, switch: bool,
) -> Tuple[List[Tuple[Tuple[object, ...], Tuple[object, ...]]], np.ndarray]:
    """Invalid rows used from `support` in one step, and the states reached."""
    (gl, gy), gl_valid, gy_valid = kernels.step(x, 1 - x if switch else x)
    found: List[Tuple[Tuple[object, ...], Tuple[object, ...]]] = []
    for yp, lp in np.argwhere(support & ~gl_valid):
        found.append((("gL", x, yp, lp), _describe_l_cell(kernels, x, int(yp), int(lp))))
    reach_l = support[:, :, None] & (gl > 0)
    for yp, lp, l in np.argwhere(reach_l & ~gy_valid.transpose(1, 2, 0)):
        found.append((("gY", x, switch, l, yp, lp), _describe_y_cell(kernels, x, switch, int(l), int(yp), int(lp))))
    reached = np.einsum("pql,lpqy->yl", reach_l.astype(np.float64), (gy > 0).astype(np.float64)) > 0
    return found, reached


def unobserved_reachable_cells(kernels: GKernels, initial: InitialState) -> List[Tuple[object, ...]]:
    """
    Invalid kernel rows that carry positive mass from the origin under
    always(0) or always(1), at any horizon.
    """
    cells: List[Tuple[object, ...]] = []
    seen = set()
    for x in (0, 1):
        support = np.zeros((kernels.ny, kernels.nl), dtype=bool)
        support[initial.y, initial.l] = True
        switch = initial.origin_treatment(x) != x
        visited = np.zeros_like(support)
        if switch:
            found, support = _scan_step(kernels, support, x, True)
            for key, cell in found:
                if key not in seen:
                    seen.add(key)
                    cells.append(cell)
        # after the first step only doubled rows are used, so each state needs one scan
        while np.any(support & ~visited):
            frontier = support & ~visited
            visited |= frontier
            found, support = _scan_step(kernels, frontier, x, False)
            for key, cell in found:
                if key not in seen:
                    seen.add(key)
                    cells.append(cell)
    return cells


def _checked_forward(kernels: GKernels, x: int, initial: InitialState, steps: int) -> List[np.ndarray]:
    """Joint (y, l) distribution after each step, refusing to use an invalid row that carries mass."""
    if x not in (0, 1):
        raise ValidationError(f"intervention value must be 0 or 1, got {x!r}")
    current = initial_weights(kernels.ny, kernels.nl, initial)
    origin_a = initial.origin_treatment(x)
    out: List[np.ndarray] = []
    for m in range(steps):
        switch = m == 0 and origin_a != x
        (gl, gy), gl_valid, gy_valid = kernels.step(x, 1 - x if switch else x)
        bad = np.argwhere((current > 0) & ~gl_valid)
        if len(bad):
            raise NonEstimableError(
                f"g-formula step {initial.time + m + 1} reaches an unobserved row",
                [_describe_l_cell(kernels, x, int(yp), int(lp)) for yp, lp in bad],
            )
        joint = current[:, :, None] * gl
        bad = np.argwhere((joint > 0) & ~gy_valid.transpose(1, 2, 0))
        if len(bad):
            raise NonEstimableError(
                f"g-formula step {initial.time + m + 1} reaches an unobserved row",
                [_describe_y_cell(kernels, x, switch, int(l), int(yp), int(lp)) for yp, lp, l in bad],
            )
        current = forward_distributions(current, [(gl, gy)])[0]
        out.append(current)
    return out


def theta_dp(kernels: GKernels, k: int, x: int, initial: InitialState) -> float:
    """
    g-formula mean of Y_k under always(x), by forward recursion from `initial`.

    The recursion takes k - initial.time steps; k equal to the origin time
    returns the origin outcome.
    """
    if k < initial.time:
        raise ValidationError(f"time point {k} precedes the recursion origin at time {initial.time}")
    if k == initial.time:
        return float(kernels.y_values[initial.y])
    dist = _checked_forward(kernels, x, initial, k - initial.time)[-1]
    return float(dist.sum(axis=1) @ kernels.y_values)


def theta_series(kernels: GKernels, x: int, horizon: int, initial: InitialState) -> np.ndarray:
    """
    theta for k = initial.time + 1 .. horizon in one pass.

    Horizons past the observed t predict under continued stationarity.
    """
    if horizon <= initial.time:
        return np.zeros(0)
    dists = _checked_forward(kernels, x, initial, horizon - initial.time)
    return np.array([float(d.sum(axis=1) @ kernels.y_values) for d in dists])


def ucate_hat_gformula(kernels: GKernels, k: int, initial: InitialState) -> float:
    """g-formula estimate of the individual-specific effect at time k."""
    return theta_dp(kernels, k, 1, initial) - theta_dp(kernels, k, 0, initial)


def ucate_series(kernels: GKernels, horizon: int, initial: InitialState) -> np.ndarray:
    return theta_series(kernels, 1, horizon, initial) - theta_series(kernels, 0, horizon, initial)

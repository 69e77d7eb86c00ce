"""
Forward recursion over the joint (Y, L) state distribution.

Both the exact counterfactual means of a known SCM and the plug-in g-formula
run this recursion; they differ only in where the per-step kernels come from.

Kernel layout for one step m (given the treatments at m and m-1):
    gl[yp, lp, l]      P(L_m = l | Y_{m-1} = yp, L_{m-1} = lp)
    gy[l, yp, lp, y]   P(Y_m = y | L_m = l, Y_{m-1} = yp, L_{m-1} = lp)
"""

import itertools
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ValidationError

Step = Tuple[np.ndarray, np.ndarray]

# conservation is exact up to rounding; anything larger is a malformed kernel
CONSERVATION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class InitialState:
    """
    Origin of the recursion: level indices of Y and L at `time`.

    `a` is the treatment at the origin; None means it follows the
    intervention value, which is how a conditioned-on first time point is
    treated during estimation.
    """
    y: int = 0
    l: int = 0
    a: Optional[int] = 0
    time: int = 0

    def __post_init__(self) -> None:
        if self.y < 0 or self.l < 0:
            raise ValidationError("initial level indices must be non-negative")
        if self.a is not None and self.a not in (0, 1):
            raise ValidationError(f"initial treatment must be 0, 1 or None, got {self.a!r}")
        if self.time < 0:
            raise ValidationError("initial time must be non-negative")

    def origin_treatment(self, x: int) -> int:
        return x if self.a is None else self.a


def initial_weights(ny: int, nl: int, initial: InitialState) -> np.ndarray:
    if initial.y >= ny or initial.l >= nl:
        raise ValidationError(f"initial state ({initial.y}, {initial.l}) outside a {ny}x{nl} domain")
    weights = np.zeros((ny, nl))
    weights[initial.y, initial.l] = 1.0
    return weights


def forward_distributions(weights: np.ndarray, steps: Iterable[Step]) -> List[np.ndarray]:
    """
    Propagate the joint (y, l) distribution through the given steps.

    Returns:
        List[np.ndarray]: the (ny, nl) distribution after each step
    """
    out = []
    current = weights
    for m, (gl, gy) in enumerate(steps, start=1):
        # joint over (yp, lp, l), then marginalise the previous state into y
        current = np.einsum("pq,pql,lpqy->yl", current, gl, gy)
        total = float(current.sum())
        if abs(total - 1.0) > CONSERVATION_TOLERANCE:
            raise ValidationError(f"probability mass {total!r} after step {m}: kernel rows do not sum to 1")
        out.append(current)
    return out


def forward_means(y_values: np.ndarray, weights: np.ndarray, steps: Iterable[Step]) -> np.ndarray:
    """Expected outcome after each step."""
    return np.array([float(dist.sum(axis=1) @ y_values) for dist in forward_distributions(weights, steps)])


def enumerate_mean(y_values: np.ndarray, initial: Tuple[int, int], steps: Sequence[Step]) -> float:
    """
    Expected outcome after the last step by summing over every (y, l) path.

    Exponential in the number of steps; used as an oracle for the recursion.
    """
    k = len(steps)
    if k == 0:
        return float(y_values[initial[0]])
    ny, nl = steps[0][1].shape[1], steps[0][1].shape[0]
    states = np.array(list(itertools.product(range(ny), range(nl))))
    paths = np.array(list(itertools.product(range(len(states)), repeat=k)))
    prob = np.ones(len(paths))
    prev_y = np.full(len(paths), initial[0])
    prev_l = np.full(len(paths), initial[1])
    for m, (gl, gy) in enumerate(steps):
        cur_y = states[paths[:, m], 0]
        cur_l = states[paths[:, m], 1]
        prob = prob * gl[prev_y, prev_l, cur_l] * gy[cur_l, prev_y, prev_l, cur_y]
        prev_y, prev_l = cur_y, cur_l
    return float(np.sum(prob * y_values[prev_y]))

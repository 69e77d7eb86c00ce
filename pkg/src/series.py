"""
Series of N-of-1 trials: population aggregation and the cross-sectional
contrast that needs no stationarity.
"""

import logging
import math
import os
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import EstimationError, IngestError, ValidationError
from src.estimate_basic import Estimate
from src.montecarlo import column_means, column_sds
from src.panel import ColumnMapping, ingest
from src.schedule import Schedule
from src.trajectory import Trajectory

logger = logging.getLogger("nof1.series")


def aggregate_tau(taus: Sequence[float], level: float = 0.95) -> Estimate:
    """
    Population effect as the mean of per-individual mean differences.

    The standard error is the empirical SD over individuals divided by
    sqrt(n). Both arm counts of the returned Estimate are the number of
    individuals.
    """
    values = np.asarray(taus, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise EstimationError(f"aggregation needs at least 2 individuals, got {n}")
    point = math.fsum(values) / n
    sd = math.sqrt(math.fsum((values - point) ** 2) / (n - 1))
    return Estimate.normal(point, sd / math.sqrt(n), level, n, n, "series-mean/normal")


def aggregate_gformula(
    per_individual: Sequence[np.ndarray],
    times: Optional[Sequence[int]] = None,
    level: float = 0.95,
) -> List[Estimate]:
    """Per-time mean of individual effect series with per-time normal intervals."""
    if len(per_individual) < 2:
        raise EstimationError(f"aggregation needs at least 2 individuals, got {len(per_individual)}")
    lengths = {len(s) for s in per_individual}
    if len(lengths) != 1:
        raise ValidationError(f"effect series cover different time grids (lengths {sorted(lengths)})")
    matrix = np.vstack([np.asarray(s, dtype=np.float64) for s in per_individual])
    grid = list(times) if times is not None else list(range(1, matrix.shape[1] + 1))
    if len(grid) != matrix.shape[1]:
        raise ValidationError(f"{len(grid)} time labels for series of length {matrix.shape[1]}")
    n = matrix.shape[0]
    means = column_means(matrix)
    ses = column_sds(matrix, means) / math.sqrt(n)
    return [
        Estimate.normal(means[j], ses[j], level, n, n, "series-mean/normal", time=int(k))
        for j, k in enumerate(grid)
    ]


def parallel_contrast(trajs: Sequence[Trajectory], k: int, level: float = 0.95) -> Estimate:
    """
    Cross-sectional treated-minus-untreated mean at time k.

    Valid without stationarity when schedules are randomised; covariates are ignored.
    """
    if k < 1:
        raise ValidationError(f"time points start at 1, got k={k}")
    short = [i for i, traj in enumerate(trajs) if traj.t < k]
    if short:
        raise ValidationError(f"trajectories {short[:5]} end before time {k}")
    a = np.array([traj.a[k - 1] for traj in trajs])
    y = np.array([traj.y[k - 1] for traj in trajs])
    treated, control = y[a == 1], y[a == 0]
    if len(treated) == 0 or len(control) == 0:
        raise EstimationError(f"at time {k} every individual has treatment {int(a[0])}; no contrast possible")
    point = float(np.mean(treated) - np.mean(control))
    if min(len(treated), len(control)) < 2:
        return Estimate.point_only(point, level, len(treated), len(control), "parallel-contrast", time=k)
    se = math.sqrt(np.var(treated, ddof=1) / len(treated) + np.var(control, ddof=1) / len(control))
    return Estimate.normal(point, se, level, len(treated), len(control), "parallel-contrast/normal", time=k)


def parallel_contrasts(trajs: Sequence[Trajectory], level: float = 0.95) -> List[Estimate]:
    """parallel_contrast at every k up to the shortest trajectory."""
    if not trajs:
        raise EstimationError("no trajectories to contrast")
    horizon = min(traj.t for traj in trajs)
    return [parallel_contrast(trajs, k, level) for k in range(1, horizon + 1)]


def load_manifest(path: str) -> pd.DataFrame:
    """
    Manifest CSV with columns id, file and optionally schedule.

    Relative file paths are resolved against the manifest's directory.
    """
    try:
        manifest = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"cannot parse manifest {path}: {e}")
    for column in ("id", "file"):
        if column not in manifest.columns:
            raise IngestError("manifest column missing", column=column)
    if manifest["id"].duplicated().any():
        row = int(np.flatnonzero(manifest["id"].duplicated().to_numpy())[0]) + 1
        raise IngestError("duplicate individual id", row=row, column="id")
    base = os.path.dirname(os.path.abspath(path))
    manifest["file"] = [f if os.path.isabs(f) else os.path.join(base, f) for f in manifest["file"]]
    return manifest


def load_series(path: str, mapping: Optional[ColumnMapping] = None) -> List[Trajectory]:
    """Every trajectory listed in a manifest, labelled with its individual id."""
    manifest = load_manifest(path)
    trajs: List[Trajectory] = []
    for record in manifest.to_dict("records"):
        text = record.get("schedule", "")
        schedule = Schedule.from_string(text) if text else None
        trajs.append(ingest(record["file"], mapping, schedule=schedule, u_label=record["id"]))
    logger.info("Loaded %d trajectories from %s", len(trajs), path)
    return trajs

import math
import os
import tempfile

import numpy as np
import pytest

from src.errors import EstimationError, IngestError, ValidationError
from src.panel import write_panel
from src.schedule import Schedule, expand_schedule
from src.series import (
    aggregate_gformula,
    aggregate_tau,
    load_manifest,
    load_series,
    parallel_contrast,
    parallel_contrasts,
)
from src.trajectory import Trajectory


def test_aggregate_tau() -> None:
    """Test the mean of individual effects and its standard error."""
    estimate = aggregate_tau([1.0, 2.0, 3.0], level=0.9)
    assert estimate.point == 2.0
    assert estimate.se == pytest.approx(1.0 / math.sqrt(3.0))
    assert (estimate.n_treated, estimate.n_control) == (3, 3)
    assert estimate.method == "series-mean/normal"
    with pytest.raises(EstimationError, match="at least 2 individuals"):
        aggregate_tau([1.0])


def test_aggregate_gformula() -> None:
    """Test per-time aggregation of effect series on a shared time grid."""
    estimates = aggregate_gformula([np.array([1.0, 2.0]), np.array([3.0, 4.0])], times=[2, 3])
    assert [e.time for e in estimates] == [2, 3]
    assert [e.point for e in estimates] == [2.0, 3.0]
    assert [e.se for e in estimates] == pytest.approx([1.0, 1.0])

    with pytest.raises(ValidationError, match="different time grids"):
        aggregate_gformula([np.zeros(2), np.zeros(3)])
    with pytest.raises(ValidationError, match="3 time labels"):
        aggregate_gformula([np.zeros(2), np.zeros(2)], times=[1, 2, 3])
    with pytest.raises(EstimationError, match="at least 2 individuals"):
        aggregate_gformula([np.zeros(2)])


def test_parallel_contrast() -> None:
    """Test the cross-sectional contrast at one time point."""
    trajs = [
        Trajectory(a=[1, 0], y=[3.0, 0.0]),
        Trajectory(a=[1, 1], y=[5.0, 1.0]),
        Trajectory(a=[0, 0], y=[1.0, 2.0]),
        Trajectory(a=[0, 1], y=[1.0, 3.0]),
    ]
    first = parallel_contrast(trajs, 1)
    assert first.point == 3.0
    assert first.se == pytest.approx(1.0)
    assert first.time == 1
    assert first.method == "parallel-contrast/normal"

    second = parallel_contrasts(trajs)
    assert len(second) == 2
    assert second[1].point == pytest.approx(1.0)

    lonely = parallel_contrast(trajs[:3], 2)
    assert lonely.method == "parallel-contrast/no-ci"
    assert lonely.point == 0.0


def test_parallel_contrast_errors() -> None:
    """Test horizons and treatment patterns without a contrast."""
    trajs = [Trajectory(a=[1, 0], y=[1.0, 0.0]), Trajectory(a=[1, 1, 0], y=[2.0, 1.0, 0.0])]
    with pytest.raises(EstimationError, match="every individual has treatment 1"):
        parallel_contrast(trajs, 1)
    with pytest.raises(ValidationError, match=r"trajectories \[0\] end before time 3"):
        parallel_contrast(trajs, 3)
    with pytest.raises(ValidationError, match="start at 1"):
        parallel_contrast(trajs, 0)
    with pytest.raises(EstimationError, match="no trajectories"):
        parallel_contrasts([])


def test_load_series() -> None:
    """Test a manifest with relative paths and declared schedules."""
    schedule = Schedule.from_string("01")
    with tempfile.TemporaryDirectory() as tmp:
        for name in ("p1", "p2"):
            a = expand_schedule(schedule, 4)
            write_panel(Trajectory(a=a, y=a * 2.0), os.path.join(tmp, "panels", f"{name}.csv"))
        manifest = os.path.join(tmp, "manifest.csv")
        with open(manifest, "w") as f:
            f.write("id,file,schedule\np1,panels/p1.csv,01\np2,panels/p2.csv,\n")
        trajs = load_series(manifest)
        assert [traj.u_label for traj in trajs] == ["p1", "p2"]
        assert trajs[0].schedule == schedule
        assert trajs[1].schedule is None
        assert trajs[0].y.tolist() == [0.0, 2.0, 0.0, 2.0]
        assert load_manifest(manifest)["file"][0] == os.path.join(tmp, "panels", "p1.csv")


def test_manifest_errors() -> None:
    """Test missing columns and duplicated ids."""
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "manifest.csv")
        with open(path, "w") as f:
            f.write("id,path\np1,a.csv\n")
        with pytest.raises(IngestError, match="column 'file': manifest column missing"):
            load_manifest(path)
        with open(path, "w") as f:
            f.write("id,file\np1,a.csv\np1,b.csv\n")
        with pytest.raises(IngestError, match="row 2, column 'id': duplicate individual id"):
            load_manifest(path)
        with pytest.raises(IngestError, match="cannot parse manifest"):
            load_manifest(os.path.join(tmp, "absent.csv"))

"""
Panel CSV ingestion and writing.

A panel file has a header row and one row per time point: time (1..t,
contiguous), treatment (0/1), outcome (decimal) and optional covariate
columns. String-valued covariates are coded in first-appearance order.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.errors import IngestError
from src.schedule import Schedule
from src.trajectory import Trajectory

logger = logging.getLogger("nof1.panel")


@dataclass(frozen=True)
class ColumnMapping:
    """Names of the panel columns in a particular file."""
    time: str = "time"
    treatment: str = "treatment"
    outcome: str = "outcome"
    covariates: Tuple[str, ...] = ()
    # covariate name in the file -> name inside the trajectory
    rename: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "ColumnMapping":
        """Parse "time=day,treatment=trt,outcome=score,covariates=temp;mood"."""
        fields: Dict[str, str] = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, value = part.partition("=")
            if not sep or key not in ("time", "treatment", "outcome", "covariates"):
                raise IngestError(f"bad column mapping entry {part!r}")
            fields[key] = value
        covariates = tuple(filter(None, fields.get("covariates", "").split(";")))
        return cls(
            time=fields.get("time", "time"),
            treatment=fields.get("treatment", "treatment"),
            outcome=fields.get("outcome", "outcome"),
            covariates=covariates,
        )

    def trajectory_name(self, column: str) -> str:
        return self.rename.get(column, column)


def _parse_float(value: str) -> Optional[float]:
    """The finite decimal in a cell, or None."""
    try:
        number = float(value)
    except ValueError:
        return None
    return number if math.isfinite(number) else None


def _is_non_finite(value: str) -> bool:
    """Cells such as "NaN" or "-inf" that float() accepts."""
    try:
        return not math.isfinite(float(value))
    except ValueError:
        return False


def ingest(
    path: str,
    mapping: Optional[ColumnMapping] = None,
    schedule: Optional[Schedule] = None,
    u_label: Optional[str] = None,
) -> Trajectory:
    """
    Read one individual's panel and check it row by row.

    Rows are numbered from 1 for the first data row.

    Raises:
        IngestError: the first violated panel invariant, with row and column
    """
    mapping = mapping or ColumnMapping()
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f"cannot parse {path}: {e}")

    required = [mapping.time, mapping.treatment, mapping.outcome, *mapping.covariates]
    for column in required:
        if column not in frame.columns:
            raise IngestError("column missing from header", column=column)
    if len(frame) == 0:
        raise IngestError("panel has no data rows")

    for row_number, row in enumerate(frame[required].itertuples(index=False), start=1):
        for column, cell in zip(required, row):
            if cell.strip() == "":
                raise IngestError("missing value", row=row_number, column=column)

    times = np.empty(len(frame), dtype=np.int64)
    a = np.empty(len(frame), dtype=np.int64)
    y = np.empty(len(frame), dtype=np.float64)
    for row_number, (time, treatment, outcome) in enumerate(
        zip(frame[mapping.time], frame[mapping.treatment], frame[mapping.outcome]), start=1,
    ):
        try:
            times[row_number - 1] = int(time)
        except ValueError:
            raise IngestError(f"time {time!r} is not an integer", row=row_number, column=mapping.time)
        if times[row_number - 1] != row_number:
            raise IngestError(
                f"time {time} breaks the contiguous sequence 1..t (expected {row_number})",
                row=row_number, column=mapping.time,
            )
        if treatment.strip() not in ("0", "1"):
            raise IngestError(f"treatment {treatment!r} is not 0 or 1", row=row_number, column=mapping.treatment)
        a[row_number - 1] = int(treatment)
        value = _parse_float(outcome)
        if value is None:
            problem = "is not finite" if _is_non_finite(outcome) else "is not a number"
            raise IngestError(f"outcome {outcome!r} {problem}", row=row_number, column=mapping.outcome)
        y[row_number - 1] = value

    columns: List[np.ndarray] = []
    names: List[str] = []
    codings: Dict[str, Tuple[str, ...]] = {}
    for column in mapping.covariates:
        cells = frame[column].str.strip()
        for row_number, cell in enumerate(cells, start=1):
            if _is_non_finite(cell):
                raise IngestError(f"covariate {cell!r} is not finite", row=row_number, column=column)
        parsed = [_parse_float(c) for c in cells]
        name = mapping.trajectory_name(column)
        if all(v is not None for v in parsed):
            columns.append(np.array(parsed, dtype=np.float64))
        else:
            # pd.factorize codes in first-appearance order
            codes, levels = pd.factorize(cells)
            codings[name] = tuple(str(level) for level in levels)
            columns.append(codes.astype(np.float64))
            logger.info("Coded covariate %s with levels %s", name, list(codings[name]))
        names.append(name)

    l = np.column_stack(columns) if columns else None
    logger.debug("Ingested %s: t=%d, %d covariate(s)", path, len(frame), len(names))
    return Trajectory(
        a=a, y=y, l=l, covariate_names=tuple(names), level_codings=codings,
        u_label=u_label, schedule=schedule,
    )


def to_frame(traj: Trajectory, mapping: Optional[ColumnMapping] = None) -> pd.DataFrame:
    """
    Panel frame with coded covariates decoded back to their string levels.

    Covariates renamed by the mapping are written under their file column
    names, so ingesting the result with the same mapping gives the same
    trajectory.
    """
    mapping = mapping or ColumnMapping()
    file_names = {inside: column for column, inside in mapping.rename.items()}
    frame = pd.DataFrame({
        mapping.time: np.arange(1, traj.t + 1),
        mapping.treatment: traj.a,
        mapping.outcome: traj.y,
    })
    for name in traj.covariate_names:
        values = traj.covariate(name)
        column = file_names.get(name, name)
        if name in traj.level_codings:
            levels = traj.level_codings[name]
            frame[column] = [levels[int(v)] for v in values]
        else:
            frame[column] = values
    return frame


def write_panel(traj: Trajectory, path: str, mapping: Optional[ColumnMapping] = None) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    to_frame(traj, mapping).to_csv(path, index=False)

"""
Plot data for per-time effect series: a CSV table and a static SVG band.
"""

import logging
import os
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from src.estimate_basic import Estimate  # noqa: E402

logger = logging.getLogger("nof1.plots")

# stable element ids keep repeated renders byte-identical
plt.rcParams["svg.hashsalt"] = "nof1"
plt.rcParams["figure.figsize"] = (6.0, 3.5)
plt.rcParams["font.size"] = 9


def series_frame(estimates: Sequence[Estimate]) -> pd.DataFrame:
    columns = ["time", "point", "se", "ci_low", "ci_high", "level", "method"]
    return pd.DataFrame(
        [[e.time, e.point, e.se, e.ci_low, e.ci_high, e.level, e.method] for e in estimates],
        columns=columns,
    )


def emit_plot_data(
    estimates: Sequence[Estimate],
    out_dir: str,
    name: str,
    title: Optional[str] = None,
) -> List[str]:
    """
    Write <name>.csv and, for a non-empty series, <name>.svg.

    Returns:
        List[str]: paths of the files written
    """
    os.makedirs(out_dir, exist_ok=True)
    frame = series_frame(estimates)
    csv_path = os.path.join(out_dir, f"{name}.csv")
    frame.to_csv(csv_path, index=False)
    if frame.empty:
        logger.warning("Series %s is empty; wrote an empty table and no graphic", name)
        return [csv_path]

    fig, ax = plt.subplots()
    has_band = frame["ci_low"].notna().all() and frame["ci_high"].notna().all()
    if has_band:
        ax.fill_between(frame["time"], frame["ci_low"], frame["ci_high"], alpha=0.3, linewidth=0,
                        label=f"{frame['level'].iloc[0]:.0%} interval")
    ax.plot(frame["time"], frame["point"], marker="o", markersize=3, label="estimate")
    ax.axhline(0.0, color="grey", linewidth=0.8, linestyle="--")
    ax.set_xlabel("time point k")
    ax.set_ylabel("effect")
    ax.set_title(title or name)
    ax.legend(loc="best", frameon=False)
    svg_path = os.path.join(out_dir, f"{name}.svg")
    fig.savefig(svg_path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)
    return [csv_path, svg_path]

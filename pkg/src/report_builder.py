"""Report tables: NMSE curves, per-method summaries and CSV output."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

import config
from src.errors import DimensionError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


@dataclass
class NmseReport:
    """Per-step NMSE in dB per method, with aggregate summaries and run metadata."""

    frame: pd.DataFrame
    summary: pd.DataFrame
    overview: Dict[str, Any]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.frame)


def build_frame(kind: str, columns: Dict[str, Sequence[float]]) -> pd.DataFrame:
    """
    DataFrame with the stable column set for one CSV kind.

    Args:
        kind: Key of config.CSV_COLUMNS
        columns: Curves keyed by column name, all of equal length; "t" is added.
            Columns missing from the mapping are filled with NaN.

    Raises:
        DimensionError: if the curves differ in length
    """
    lengths = {len(v) for v in columns.values()}
    if len(lengths) != 1:
        raise DimensionError(f"report curves have different lengths {sorted(lengths)}")
    T = lengths.pop()
    df = pd.DataFrame({"t": np.arange(T)})
    for name in config.CSV_COLUMNS[kind][1:]:
        df[name] = np.asarray(columns[name], dtype=float) if name in columns else np.nan
    return df


def summarize_methods(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Mean, min and max NMSE per method.

    Returns:
        DataFrame with columns: method, name, mean_db, min_db, max_db
    """
    long = frame.melt(id_vars="t", var_name="method", value_name="nmse_db").dropna()
    grouped = long.groupby("method", sort=False).agg(
        mean_db=("nmse_db", "mean"),
        min_db=("nmse_db", "min"),
        max_db=("nmse_db", "max"),
    ).reset_index()
    grouped["name"] = grouped["method"].map(config.METHOD_LABELS).fillna(grouped["method"])
    return grouped[["method", "name", "mean_db", "min_db", "max_db"]]


def overview_metrics(frame: pd.DataFrame) -> Dict[str, Any]:
    """
    Headline numbers: gain of the proposed tracker over LS and over the tracker without TC.

    The best-case gain is the largest per-step improvement over LS.
    """
    overview = {"T": int(len(frame))}
    means = frame.drop(columns="t").mean()
    for method, value in means.items():
        if np.isfinite(value):
            overview[f"mean_{method}"] = round(float(value), 4)

    if {"nmse_ls", "nmse_tc"} <= set(frame.columns):
        gain = frame["nmse_ls"] - frame["nmse_tc"]
        overview["gain_vs_ls_mean_db"] = round(float(gain.mean()), 4)
        overview["gain_vs_ls_best_db"] = round(float(gain.max()), 4)
    if {"nmse_notc", "nmse_tc"} <= set(frame.columns):
        overview["gain_vs_notc_mean_db"] = round(float((frame["nmse_notc"] - frame["nmse_tc"]).mean()), 4)
    return overview


def nmse_report(columns: Dict[str, Sequence[float]], metadata: Optional[Dict[str, Any]] = None) -> NmseReport:
    frame = build_frame("comparison", columns)
    return NmseReport(
        frame=frame,
        summary=summarize_methods(frame),
        overview=overview_metrics(frame),
        metadata=dict(metadata or {}),
    )


def parameter_table(counts: Dict[int, Dict[str, int]]) -> pd.DataFrame:
    """Long table of parameter counts: one row per (n_bs, method)."""
    rows = [
        {"n_bs": n_bs, "method": method, "parameters": int(count)}
        for n_bs, per_method in sorted(counts.items())
        for method, count in per_method.items()
    ]
    return pd.DataFrame(rows, columns=config.CSV_COLUMNS["parameter_counts"])


def parameter_growth(table: pd.DataFrame) -> Dict[str, float]:
    """Ratio of the largest to the smallest array's parameter count, per method."""
    ordered = table.sort_values("n_bs")
    grouped = ordered.groupby("method")["parameters"].agg(["first", "last"])
    return {method: float(r["last"] / r["first"]) for method, r in grouped.iterrows()}


def spearman_summary(frame: pd.DataFrame, columns: Sequence[str]) -> Dict[str, float]:
    """Spearman rank correlation of each curve with time; NaN for constant curves."""
    result = {}
    for name in columns:
        values = frame[name].to_numpy()
        if np.ptp(values) == 0:
            result[name] = float("nan")
            continue
        rho = spearmanr(frame["t"].to_numpy(), values)[0]
        result[name] = float(rho)
    return result


def write_csv(frame: pd.DataFrame, path, kind: str) -> Path:
    """Write a report CSV with its documented header and a fixed float format."""
    expected = config.CSV_COLUMNS[kind]
    if list(frame.columns) != expected:
        raise DimensionError(f"{kind} report has columns {list(frame.columns)}, expected {expected}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def write_history(history: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    history.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path

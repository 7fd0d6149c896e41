"""Trajectory accuracy metrics: per-frame APE, RMSE, and pooled reports.

APE for one frame is the Euclidean norm of the translational part of the
relative pose error between the ground-truth and estimated poses; rotation
error does not contribute (a deliberate property of this metric). RMSE is
the root mean square over a pooled set of APE values.

Conventions (also stamped into report output): standard deviations use
population normalization (1/N); the cross-sequence std column is computed
over per-sequence means.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, trans
from .trajectory import MatchedPair

CONVENTIONS = {
    "std": "population (1/N)",
    "cross_std_over": "per-sequence means",
}


def relative_pose_error(gt: Pose, est: Pose) -> Pose:
    """Pose discrepancy gt^-1 * est."""
    return gt.inverse() @ est


def ape(gt: Pose, est: Pose) -> float:
    """Absolute pose error: norm of the translational part of gt^-1 * est."""
    return float(np.linalg.norm(trans(relative_pose_error(gt, est))))


@dataclass
class ApeSeries:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size and (not np.all(np.isfinite(self.values)) or self.values.min() < 0):
            raise ValueError("APE values must be finite and non-negative")


def ape_series(pairs: list[MatchedPair], label: str = "") -> ApeSeries:
    """Per-frame APE values for a matched gt/est pair list."""
    return ApeSeries(np.array([ape(p.gt.pose, p.est.pose) for p in pairs]), label)


def rmse(series) -> float:
    """Root mean square of a value sequence (ApeSeries or array-like)."""
    values = series.values if isinstance(series, ApeSeries) else np.asarray(series, dtype=float)
    if values.size == 0:
        raise ValueError("rmse of an empty series")
    return float(np.sqrt(np.mean(np.square(values))))


@dataclass
class SequenceStats:
    label: str
    n: int
    mean: float
    median: float
    std: float


@dataclass
class EvalReport:
    method: str
    sequences: list[SequenceStats]
    pooled_ape_mean: float
    pooled_rmse: float
    cross_mean: float
    cross_median: float
    cross_std: float
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "sequences": [
                {
                    "label": s.label,
                    "n": s.n,
                    "mean": s.mean,
                    "median": s.median,
                    "std": s.std,
                }
                for s in self.sequences
            ],
            "pooled": {"ape_mean": self.pooled_ape_mean, "rmse": self.pooled_rmse},
            "cross": {
                "mean": self.cross_mean,
                "median": self.cross_median,
                "std": self.cross_std,
            },
            "conventions": self.conventions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            method=d["method"],
            sequences=[
                SequenceStats(s["label"], s["n"], s["mean"], s["median"], s["std"])
                for s in d["sequences"]
            ],
            pooled_ape_mean=d["pooled"]["ape_mean"],
            pooled_rmse=d["pooled"]["rmse"],
            cross_mean=d["cross"]["mean"],
            cross_median=d["cross"]["median"],
            cross_std=d["cross"]["std"],
            conventions=d.get("conventions", dict(CONVENTIONS)),
        )


def aggregate(series_list: list[ApeSeries], method: str = "") -> EvalReport:
    """Pooled and per-sequence statistics over several APE series.

    Pooled mean and RMSE are computed over the concatenation of all series;
    the cross-sequence columns summarize the per-sequence means and medians.
    """
    if not series_list:
        raise ValueError("aggregate of an empty series list")
    for s in series_list:
        if s.values.size == 0:
            raise ValueError(f"empty APE series '{s.label}'")
    seq_stats = [
        SequenceStats(
            label=s.label,
            n=int(s.values.size),
            mean=float(np.mean(s.values)),
            median=float(np.median(s.values)),
            std=float(np.std(s.values)),
        )
        for s in series_list
    ]
    pooled = np.concatenate([s.values for s in series_list])
    means = np.array([s.mean for s in seq_stats])
    medians = np.array([s.median for s in seq_stats])
    return EvalReport(
        method=method,
        sequences=seq_stats,
        pooled_ape_mean=float(np.mean(pooled)),
        pooled_rmse=rmse(pooled),
        cross_mean=float(np.mean(means)),
        cross_median=float(np.median(medians)),
        cross_std=float(np.std(means)),
    )


_COLUMNS = [
    ("ape_mean", lambda r: r.pooled_ape_mean),
    ("rmse", lambda r: r.pooled_rmse),
    ("std", lambda r: r.cross_std),
    ("median", lambda r: r.cross_median),
    ("mean", lambda r: r.cross_mean),
]


def render_table(reports: list[EvalReport]) -> str:
    """Aligned comparison table, one row per method.

    The best (lowest) value in each column is marked with a trailing '*'.
    """
    if not reports:
        raise ValueError("nothing to render")
    header = ["method"] + [name for name, _ in _COLUMNS]
    rows = []
    values = np.array([[get(r) for _, get in _COLUMNS] for r in reports])
    best = values.argmin(axis=0)
    for i, r in enumerate(reports):
        cells = [r.method or f"method{i}"]
        for c, v in enumerate(values[i]):
            mark = "*" if i == best[c] and len(reports) > 1 else ""
            cells.append(f"{v:.4f}{mark}")
        rows.append(cells)
    widths = [max(len(row[c]) for row in [header] + rows) for c in range(len(header))]
    out = [
        "# lower is better; '*' marks the best value per column",
        f"# std: {CONVENTIONS['std']}; cross-sequence std over {CONVENTIONS['cross_std_over']}",
        "  ".join(h.ljust(w) for h, w in zip(header, widths)),
    ]
    for row in rows:
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(out) + "\n"


def render_csv(reports: list[EvalReport]) -> str:
    """CSV comparison, one row per method, same columns as the text table."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method"] + [name for name, _ in _COLUMNS])
    for r in reports:
        writer.writerow([r.method] + [repr(get(r)) for _, get in _COLUMNS])
    return buf.getvalue()

"""Evaluation indicators over passenger-count predictions.

RMSE and MAE are the usual square-root-of-mean-square and mean-absolute
errors.  WMAPE is computed in the total-error over total-actual form
(sum |y - prediction| / sum y), which equals the per-sample weighted
definition wherever that is defined and stays defined when individual
actuals are zero.  All three operate on denormalized counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def _check_pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if y.size == 0:
        raise ValidationError("no values to score")
    if y.size != p.size:
        raise ValidationError(f"length mismatch: {y.size} actuals, {p.size} predictions")
    return y, p


def rmse(actual, predicted) -> float:
    y, p = _check_pair(actual, predicted)
    return float(math.sqrt(np.mean((y - p) ** 2)))


def mae(actual, predicted) -> float:
    y, p = _check_pair(actual, predicted)
    return float(np.mean(np.abs(y - p)))


def wmape(actual, predicted) -> float:
    y, p = _check_pair(actual, predicted)
    total = float(np.sum(y))
    if total <= 0.0:
        raise ValidationError("WMAPE undefined: actuals sum to zero")
    return float(np.sum(np.abs(y - p)) / total)


@dataclass(frozen=True)
class StationScore:
    station_id: str
    rmse: float
    mae: float
    wmape: float
    n: int


@dataclass(frozen=True)
class EvalReport:
    """Scores for one (model, train_days) cell plus per-station breakdown."""

    model: str
    train_days: int
    rmse: float
    mae: float
    wmape: float
    n: int
    stations: tuple[StationScore, ...] = field(default=())


def score_rows(
    model: str,
    train_days: int,
    rows: list[tuple[str, int, int, float, float]],
) -> EvalReport:
    """Build an EvalReport from prediction-dump rows.

    Rows are (station_id, day, slot, actual, predicted); the overall
    metrics pool every row, the breakdown groups by station.
    """
    if not rows:
        raise ValidationError("no prediction rows to score")
    actual = np.array([r[3] for r in rows])
    predicted = np.array([r[4] for r in rows])
    per_station: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        per_station.setdefault(row[0], []).append(i)
    stations = tuple(
        StationScore(
            station_id=sid,
            rmse=rmse(actual[idx], predicted[idx]),
            mae=mae(actual[idx], predicted[idx]),
            wmape=wmape(actual[idx], predicted[idx]),
            n=len(idx),
        )
        for sid, idx in sorted(per_station.items())
    )
    return EvalReport(
        model=model,
        train_days=train_days,
        rmse=rmse(actual, predicted),
        mae=mae(actual, predicted),
        wmape=wmape(actual, predicted),
        n=len(rows),
        stations=stations,
    )


def render_report_csv(reports: list[EvalReport]) -> str:
    """One row per (model, train_days), sorted by WMAPE ascending."""
    lines = ["model,train_days,rmse,mae,wmape,n"]
    for r in sorted(reports, key=lambda r: (r.wmape, r.model, r.train_days)):
        lines.append(
            f"{r.model},{r.train_days},{r.rmse!r},{r.mae!r},{r.wmape!r},{r.n}"
        )
    return "\n".join(lines) + "\n"


def render_station_csv(reports: list[EvalReport]) -> str:
    """Per-station breakdown across all reports."""
    lines = ["model,train_days,station_id,rmse,mae,wmape,n"]
    for r in sorted(reports, key=lambda r: (r.model, r.train_days)):
        for s in r.stations:
            lines.append(
                f"{r.model},{r.train_days},{s.station_id},"
                f"{s.rmse!r},{s.mae!r},{s.wmape!r},{s.n}"
            )
    return "\n".join(lines) + "\n"


def render_table(reports: list[EvalReport]) -> str:
    """Aligned text table: models as rows, grouped by training budget."""
    if not reports:
        raise ValidationError("no reports to render")
    header = ("model", "train_days", "RMSE", "MAE", "WMAPE", "n")
    body = [
        (
            r.model,
            str(r.train_days),
            f"{r.rmse:.4f}",
            f"{r.mae:.4f}",
            f"{r.wmape:.4f}",
            str(r.n),
        )
        for r in sorted(reports, key=lambda r: (r.train_days, r.wmape, r.model))
    ]
    widths = [
        max(len(header[c]), *(len(row[c]) for row in body)) for c in range(len(header))
    ]
    def fmt(row):
        return "  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), rule] + [fmt(row) for row in body]) + "\n"

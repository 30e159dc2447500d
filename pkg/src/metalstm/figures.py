"""Report figures rendered alongside the delimited output.

Prediction dumps stay plain data; the reporting path turns them and the
score tables into PNG files.  Rendering is pinned to the Agg backend with
fixed geometry and stripped image metadata so the same inputs always
produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import ValidationError
from .metrics import EvalReport

DPI = 120

# A None value suppresses the default Software key (a version string)
# from the PNG header.
_PNG_METADATA = {"Software": None}

_METRICS = (("rmse", "RMSE"), ("mae", "MAE"), ("wmape", "WMAPE"))


def _save(fig, path):
    fig.savefig(path, dpi=DPI, format="png", metadata=_PNG_METADATA)
    plt.close(fig)


def _models_and_budgets(reports):
    if not reports:
        raise ValidationError("no evaluation results to plot")
    models = sorted({r.model for r in reports})
    budgets = sorted({r.train_days for r in reports})
    return models, budgets


def save_metric_bars(reports: list[EvalReport], path) -> None:
    """Grouped bars, one panel per metric, comparing models per day budget."""
    models, budgets = _models_and_budgets(reports)
    cell = {(r.model, r.train_days): r for r in reports}
    fig, axes = plt.subplots(1, len(_METRICS), figsize=(4.2 * len(_METRICS), 3.6))
    width = 0.8 / len(models)
    for ax, (attr, label) in zip(axes, _METRICS):
        for m, model in enumerate(models):
            xs, ys = [], []
            for b, budget in enumerate(budgets):
                report = cell.get((model, budget))
                if report is not None:
                    xs.append(b + (m - (len(models) - 1) / 2) * width)
                    ys.append(getattr(report, attr))
            ax.bar(xs, ys, width=width, label=model, color=f"C{m}")
        ax.set_xticks(range(len(budgets)))
        ax.set_xticklabels([str(b) for b in budgets])
        ax.set_xlabel("target training days")
        ax.set_ylabel(label)
    axes[0].legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def save_budget_curves(reports: list[EvalReport], path) -> None:
    """WMAPE against the target-day budget, one line per model."""
    models, budgets = _models_and_budgets(reports)
    cell = {(r.model, r.train_days): r.wmape for r in reports}
    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    for m, model in enumerate(models):
        pairs = [(b, cell[(model, b)]) for b in budgets if (model, b) in cell]
        ax.plot(
            [p[0] for p in pairs],
            [p[1] for p in pairs],
            marker="o",
            label=model,
            color=f"C{m}",
        )
    ax.set_xticks(budgets)
    ax.set_xlabel("target training days")
    ax.set_ylabel("WMAPE")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def save_prediction_traces(rows, path, *, max_stations: int = 4) -> None:
    """Actual and predicted flow over time for the first few stations.

    ``rows`` are prediction-dump tuples (station_id, day, slot, actual,
    predicted); each station gets its own panel, points ordered by
    (day, slot).
    """
    if not rows:
        raise ValidationError("no prediction rows to plot")
    by_station: dict[str, list] = {}
    for sid, day, slot, actual, predicted in rows:
        by_station.setdefault(sid, []).append((day, slot, actual, predicted))
    stations = sorted(by_station)[:max_stations]
    fig, axes = plt.subplots(
        len(stations), 1, figsize=(7.2, 2.2 * len(stations)), squeeze=False
    )
    for ax, sid in zip(axes[:, 0], stations):
        points = sorted(by_station[sid])
        actual = [p[2] for p in points]
        predicted = [p[3] for p in points]
        ax.plot(actual, label="actual", color="C0", linewidth=1.0)
        ax.plot(predicted, label="predicted", color="C1", linewidth=1.0)
        ax.set_ylabel(sid, fontsize="small")
        days = sorted({p[0] for p in points})
        if len(days) > 1:
            per_day = len(points) // len(days)
            for k in range(1, len(days)):
                ax.axvline(k * per_day, color="0.85", linewidth=0.8)
    axes[0, 0].legend(fontsize="small", ncol=2)
    axes[-1, 0].set_xlabel("time slot (test period)")
    fig.tight_layout()
    _save(fig, path)

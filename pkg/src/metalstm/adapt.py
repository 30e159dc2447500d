"""Fine-tuning on data-scarce target stations, and count-space prediction.

The adaptation loop is the single fine-tuning code path shared by every
gradient-trained model in the package: the meta-initialized model, the
single-task transfer baseline, and the plain LSTM baseline differ only in
the parameters they hand to ``adapt``.  Mini-batch Adam (or plain SGD under
a test flag) runs for up to ``max_epochs`` passes with checkpoint/early
stopping on a held-out fraction of the target training samples.

Predictions travel back to passenger-count units through the per-station
normalizers and are clamped at zero; dumps pair them with the raw observed
counts so downstream metrics never see re-scaled actuals.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ParseError, ValidationError
from .flow_data import (
    DayRange,
    FlowSeries,
    MultiStationSample,
    Normalizer,
    assemble_samples,
    extract_windows,
    fit_normalizer,
)
from .lstm import (
    AdamState,
    ModelParams,
    adam_step,
    forward,
    loss_and_grads,
    mse_loss,
    sgd_step,
)
from .tasks import order_stations

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class AdaptationConfig:
    """Target fine-tuning hyperparameters.

    ``train_days`` records the data budget the samples were built from
    (1, 3, or 5 in the experiments); the loop itself consumes whatever
    samples it is given.  ``optimizer`` is "adam" for real runs; "sgd"
    exists so one literal gradient-descent step is testable.
    """

    lr: float = 0.01
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 10
    train_days: int = 1
    holdout_fraction: float = 0.2
    optimizer: str = "adam"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ValidationError("max_epochs must be >= 0")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.train_days < 1:
            raise ValidationError("train_days must be >= 1")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValidationError("holdout_fraction must be in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}")


def stack_samples(samples: list[MultiStationSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise ValidationError("no samples given")
    return (
        np.stack([s.inputs for s in samples]),
        np.stack([s.labels for s in samples]),
    )


def target_normalizers(
    series: list[FlowSeries], train_day_range: DayRange
) -> dict[str, Normalizer]:
    """Per-station scaling fit on the target's budgeted training days only."""
    return {s.station_id: fit_normalizer(s, train_day_range) for s in series}


def build_target_samples(
    series: list[FlowSeries],
    lookback: int,
    day_range: DayRange,
    normalizers: dict[str, Normalizer],
    *,
    allow_fallback: bool = True,
) -> tuple[list[MultiStationSample], list[str]]:
    """Window and stack a target fleet over ``day_range``.

    Windows are built against each station's full timeline, so lookback may
    reach into days outside the range; anchors early in a short history get
    the clamped-history fallback when ``allow_fallback`` is set.  Returns
    the samples plus the line-ordered station ids defining column order.
    """
    station_ids = order_stations(series)
    missing = [sid for sid in station_ids if sid not in normalizers]
    if missing:
        raise ValidationError(f"no normalizer for stations: {','.join(missing)}")
    by_id = {s.station_id: s for s in series}
    windows = [
        extract_windows(
            by_id[sid],
            lookback,
            day_range,
            normalizer=normalizers[sid],
            station_index=pos,
            allow_fallback=allow_fallback,
        )
        for pos, sid in enumerate(station_ids)
    ]
    return assemble_samples(windows, station_ids), station_ids


def adapt(
    params: ModelParams,
    target_samples: list[MultiStationSample],
    config: AdaptationConfig,
    seed: int,
) -> ModelParams:
    """Fine-tune ``params`` on the target samples; the input is untouched.

    With a non-zero holdout fraction the best-validation parameters are
    returned (early stopping after ``patience`` stale epochs); without one
    the loop runs all epochs and returns the final parameters.
    ``max_epochs == 0`` returns ``params`` verbatim.
    """
    inputs, labels = stack_samples(target_samples)
    if inputs.shape[2] != params.input_size or labels.shape[1] != params.output_size:
        raise ValidationError(
            f"samples carry ({inputs.shape[2]}, {labels.shape[1]}) dims but the "
            f"model expects ({params.input_size}, {params.output_size}); the "
            f"task size must equal the target station count"
        )
    if config.max_epochs == 0:
        return params

    rng = np.random.default_rng(seed)
    n = len(target_samples)
    n_val = int(round(config.holdout_fraction * n))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise ValidationError(
            f"holdout of {n_val} leaves no training samples out of {n}"
        )
    if config.holdout_fraction > 0 and n_val == 0:
        log.warning(
            "holdout fraction %.2f of %d samples rounds to zero; "
            "early stopping disabled",
            config.holdout_fraction,
            n,
        )

    current = params
    adam = AdamState.fresh(params)
    best = current
    best_loss = float("inf")
    stale = 0
    epochs_run = 0
    for epoch in range(config.max_epochs):
        epochs_run = epoch + 1
        order = train_idx[rng.permutation(len(train_idx))]
        for start in range(0, len(order), config.batch_size):
            # Batch membership is random; row order inside a batch is
            # canonicalized so equal batches give bit-equal gradients.
            batch = np.sort(order[start : start + config.batch_size])
            loss, grads = loss_and_grads(current, inputs[batch], labels[batch])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss in epoch {epoch}",
                    last_good=best if n_val else params,
                )
            if config.optimizer == "sgd":
                current = sgd_step(current, grads, config.lr)
            else:
                current, adam = adam_step(current, grads, adam, config.lr)
        if n_val:
            pred, _ = forward(current, inputs[val_idx])
            val_loss = mse_loss(pred, labels[val_idx])
            if val_loss < best_loss:
                best_loss = val_loss
                best = current
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    log.info(
        "adaptation ran %d epochs on %d train / %d holdout samples",
        epochs_run,
        len(train_idx),
        n_val,
    )
    return best if n_val else current


def predict(
    params: ModelParams,
    samples: list[MultiStationSample],
    station_ids: list[str],
    normalizers: dict[str, Normalizer],
) -> np.ndarray:
    """Forward the samples and denormalize to counts, clamped at zero.

    Returns an (n_samples, n_stations) array aligned to the sample order,
    with column s denormalized through ``normalizers[station_ids[s]]``.
    """
    inputs, labels = stack_samples(samples)
    if inputs.shape[2] != params.input_size:
        raise ValidationError(
            f"samples carry {inputs.shape[2]}-dim steps, model expects "
            f"{params.input_size}"
        )
    if len(station_ids) != params.output_size or labels.shape[1] != len(station_ids):
        raise ValidationError(
            f"{len(station_ids)} station ids for {params.output_size} outputs"
        )
    missing = [sid for sid in station_ids if sid not in normalizers]
    if missing:
        raise ValidationError(f"no normalizer for stations: {','.join(missing)}")

    pred, _ = forward(params, inputs)
    counts = np.empty_like(pred)
    for s, sid in enumerate(station_ids):
        counts[:, s] = normalizers[sid].denormalize(pred[:, s])
    return np.maximum(counts, 0.0)


def prediction_rows(
    samples: list[MultiStationSample],
    station_ids: list[str],
    series_by_id: dict[str, FlowSeries],
    predictions: np.ndarray,
) -> list[tuple[str, int, int, float, float]]:
    """Pair predictions with raw observed counts at the predicted slots.

    Each sample anchored at (day, slot) predicts slot + 1; the actual value
    is looked up directly in the raw series, never round-tripped through a
    normalizer.
    """
    if predictions.shape != (len(samples), len(station_ids)):
        raise ValidationError(
            f"predictions shape {predictions.shape} does not match "
            f"{len(samples)} samples x {len(station_ids)} stations"
        )
    rows = []
    for i, sample in enumerate(samples):
        target_slot = sample.slot + 1
        for s, sid in enumerate(station_ids):
            series = series_by_id.get(sid)
            if series is None:
                raise ValidationError(f"no series for station {sid!r}")
            actual = float(series.counts[sample.day, target_slot])
            rows.append((sid, sample.day, target_slot, actual, float(predictions[i, s])))
    return rows


def write_prediction_dump(
    path,
    rows: list[tuple[str, int, int, float, float]],
    *,
    model: str,
    train_days: int,
    seed: int,
) -> None:
    """CSV dump of (station, day, slot, actual, predicted) with metadata."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# model={model}\n")
        fh.write(f"# train_days={train_days}\n")
        fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["station_id", "day", "slot", "actual", "predicted"])
        for sid, day, slot, actual, predicted in rows:
            writer.writerow([sid, day, slot, repr(actual), repr(predicted)])


def read_prediction_dump(path):
    """Parse a dump back into (metadata dict, row list)."""
    metadata: dict[str, str] = {}
    rows: list[tuple[str, int, int, float, float]] = []
    with open(path, newline="") as fh:
        lines = list(fh)
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            text = line[1:].strip()
            if "=" in text:
                key, value = text.split("=", 1)
                metadata[key.strip()] = value.strip()
            body_start = i + 1
        else:
            break
    reader = csv.reader(lines[body_start:])
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}: missing header") from None
    expected = ["station_id", "day", "slot", "actual", "predicted"]
    if header != expected:
        raise ParseError(f"{path}: header {header} != {expected}")
    for offset, row in enumerate(reader, start=body_start + 2):
        if not row:
            continue
        try:
            rows.append(
                (row[0], int(row[1]), int(row[2]), float(row[3]), float(row[4]))
            )
        except (IndexError, ValueError):
            raise ParseError("bad prediction row", offset) from None
    return metadata, rows

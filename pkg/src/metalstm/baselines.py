"""Reference models the evaluation compares against.

Three baselines: historical average (closed-form per-slot means over raw
counts), a plain LSTM trained from random initialization on the target
data alone, and a single-task transfer LSTM (train on one randomly chosen
source task, then fine-tune on the target).

Both LSTM baselines run through ``adapt``, the exact fine-tuning loop the
meta-initialized model uses, so comparisons differ only in the parameters
each model starts from.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .adapt import AdaptationConfig, adapt
from .errors import ValidationError
from .flow_data import DayRange, FlowSeries, MultiStationSample
from .lstm import DEFAULT_HIDDEN_SIZE, ModelParams, init_params
from .tasks import TaskSet

log = logging.getLogger(__name__)


def _as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


@dataclass(frozen=True)
class HAModel:
    """Per-station, per-slot arithmetic means of training-day counts."""

    slot_means: dict[str, np.ndarray]

    def stations(self) -> list[str]:
        return sorted(self.slot_means)


def ha_fit(series: list[FlowSeries], train_day_range: DayRange) -> HAModel:
    """Average each slot over the training days, in raw count units."""
    if not series:
        raise ValidationError("no series given")
    start, stop = train_day_range
    if stop <= start:
        raise ValidationError(f"empty day range [{start}, {stop})")
    means = {}
    for s in series:
        if start < 0 or stop > s.n_days:
            raise ValidationError(
                f"day range [{start}, {stop}) outside 0..{s.n_days}"
            )
        means[s.station_id] = s.counts[start:stop].mean(axis=0)
    return HAModel(slot_means=means)


def ha_predict(model: HAModel, station_id: str, day: int, slot: int) -> float:
    """The stored slot mean; the day argument is irrelevant by design."""
    means = model.slot_means.get(station_id)
    if means is None:
        raise ValidationError(f"unknown station {station_id!r}")
    if not 0 <= slot < len(means):
        raise ValidationError(f"slot {slot} outside 0..{len(means) - 1}")
    return float(means[slot])


def train_plain_lstm(
    target_samples: list[MultiStationSample],
    config: AdaptationConfig,
    seed: int,
    *,
    hidden_size: int = DEFAULT_HIDDEN_SIZE,
) -> ModelParams:
    """The no-transfer baseline: the shared fine-tuning loop from scratch."""
    if not target_samples:
        raise ValidationError("no samples given")
    init_seq, fit_seq = _as_seed_sequence(seed).spawn(2)
    first = target_samples[0]
    params = init_params(
        hidden_size,
        first.inputs.shape[1],
        first.labels.shape[0],
        np.random.default_rng(init_seq),
    )
    return adapt(params, target_samples, config, fit_seq)


def train_ft_lstm(
    task_set: TaskSet,
    target_samples: list[MultiStationSample],
    source_config: AdaptationConfig,
    target_config: AdaptationConfig,
    seed: int,
    *,
    hidden_size: int = DEFAULT_HIDDEN_SIZE,
) -> ModelParams:
    """Single-task transfer: train on one random source task, fine-tune.

    The source task is drawn uniformly from the task set's train tasks;
    source training and target fine-tuning both run the shared loop.
    """
    if not task_set.train_tasks:
        raise ValidationError("task set has no train tasks")
    choice_seq, source_seq, target_seq = _as_seed_sequence(seed).spawn(3)
    idx = int(np.random.default_rng(choice_seq).integers(len(task_set.train_tasks)))
    task = task_set.train_tasks[idx]
    log.info("fine-tuning from source task %d", task.task_id)
    source_params = train_plain_lstm(
        list(task.samples),
        source_config,
        source_seq,
        hidden_size=hidden_size,
    )
    return adapt(source_params, target_samples, target_config, target_seq)

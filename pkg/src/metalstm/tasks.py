"""Meta-learning task construction and episodic sampling.

Source stations are ordered along their lines, cut into consecutive blocks
the size of the target fleet, and each block becomes one task.  Per task
the samples are split chronologically into a train part and a test part;
meta-training episodes draw tasks with replacement and, within a task,
disjoint support/query sample sets without replacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .flow_data import (
    DayRange,
    FlowSeries,
    MultiStationSample,
    Normalizer,
    WEEKLY_LOOKBACK_DAYS,
    assemble_samples,
    extract_windows,
    fit_normalizer,
)

# Consecutive re-draws of undersized tasks tolerated per episode.
MAX_FAILED_DRAWS = 100


@dataclass(frozen=True)
class MetaTask:
    """One task: an ordered station block plus its stacked samples."""

    task_id: int
    stations: tuple[str, ...]
    samples: tuple[MultiStationSample, ...]
    inputs: np.ndarray
    labels: np.ndarray

    @staticmethod
    def from_samples(
        task_id: int, stations, samples: list[MultiStationSample]
    ) -> "MetaTask":
        if not samples:
            raise ValidationError(f"task {task_id} has no samples")
        return MetaTask(
            task_id=task_id,
            stations=tuple(stations),
            samples=tuple(samples),
            inputs=np.stack([s.inputs for s in samples]),
            labels=np.stack([s.labels for s in samples]),
        )

    @property
    def n_samples(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class TaskSet:
    """Train/test task pairs over the same station blocks.

    ``train_tasks[i]`` and ``test_tasks[i]`` share stations and task_id;
    their samples come from disjoint chronological day ranges.
    """

    train_tasks: tuple[MetaTask, ...]
    test_tasks: tuple[MetaTask, ...]
    task_size: int
    lookback: int
    normalizers: dict[str, Normalizer]
    dropped_stations: tuple[str, ...]
    train_day_range: DayRange
    test_day_range: DayRange

    def manifest(self) -> str:
        lines = [
            "task set",
            f"task_size: {self.task_size}",
            f"lookback: {self.lookback}",
            f"train_days: [{self.train_day_range[0]}, {self.train_day_range[1]})",
            f"test_days: [{self.test_day_range[0]}, {self.test_day_range[1]})",
            f"dropped_stations: {','.join(self.dropped_stations) or 'none'}",
        ]
        for train, test in zip(self.train_tasks, self.test_tasks):
            lines.append(
                f"task {train.task_id}: stations={','.join(train.stations)} "
                f"train_samples={train.n_samples} test_samples={test.n_samples}"
            )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EpisodeTask:
    """Support/query split of one drawn task within an episode."""

    task_id: int
    support_indices: tuple[int, ...]
    query_indices: tuple[int, ...]
    support_inputs: np.ndarray
    support_labels: np.ndarray
    query_inputs: np.ndarray
    query_labels: np.ndarray


@dataclass(frozen=True)
class EpisodeBatch:
    tasks: tuple[EpisodeTask, ...]


def order_stations(series: list[FlowSeries]) -> list[str]:
    """Station ids sorted by line, then by position along the line."""
    seen: dict[tuple[str, int], str] = {}
    for s in series:
        key = (s.line_id, s.line_order)
        other = seen.setdefault(key, s.station_id)
        if other != s.station_id:
            raise ValidationError(
                f"stations {other!r} and {s.station_id!r} share line "
                f"{s.line_id!r} position {s.line_order}"
            )
    ordered = sorted(series, key=lambda s: (s.line_id, s.line_order))
    return [s.station_id for s in ordered]


def partition_tasks(ordered_stations: list[str], task_size: int) -> list[list[str]]:
    """Cut the ordered stations into consecutive blocks of ``task_size``.

    The trailing remainder (fewer than ``task_size`` stations) is dropped;
    callers surface it via TaskSet.dropped_stations.
    """
    if task_size < 1:
        raise ValidationError(f"task_size must be >= 1, got {task_size}")
    if len(ordered_stations) < task_size:
        raise ValidationError(
            f"{len(ordered_stations)} stations cannot fill a task of {task_size}"
        )
    n_blocks = len(ordered_stations) // task_size
    return [
        list(ordered_stations[i * task_size : (i + 1) * task_size])
        for i in range(n_blocks)
    ]


def build_task_set(
    series: list[FlowSeries],
    task_size: int,
    lookback: int,
    train_day_fraction: float,
) -> TaskSet:
    """Order, block, window, normalize, and chronologically split the fleet.

    Eligible anchor days are those with full weekly lookback (day 5 on);
    the first ceil(fraction * eligible) of them feed train tasks, the rest
    test tasks.  Normalizers are fit per station over all days up to the
    end of the train period, so test days never leak into scaling.
    """
    if not 0.0 < train_day_fraction < 1.0:
        raise ValidationError(
            f"train_day_fraction must be in (0, 1), got {train_day_fraction}"
        )
    if not series:
        raise ValidationError("no series given")
    shapes = {s.counts.shape for s in series}
    if len(shapes) > 1:
        raise ValidationError(f"stations disagree on (days, slots): {sorted(shapes)}")
    n_days = series[0].n_days

    eligible = n_days - WEEKLY_LOOKBACK_DAYS
    if eligible < 2:
        raise ValidationError(
            f"{n_days} days leave {eligible} eligible anchor days; need >= 2"
        )
    n_train = math.ceil(train_day_fraction * eligible)
    if n_train >= eligible:
        raise ValidationError(
            f"train fraction {train_day_fraction} leaves no test days"
        )
    train_range = (WEEKLY_LOOKBACK_DAYS, WEEKLY_LOOKBACK_DAYS + n_train)
    test_range = (WEEKLY_LOOKBACK_DAYS + n_train, n_days)

    by_id = {s.station_id: s for s in series}
    ordered = order_stations(series)
    blocks = partition_tasks(ordered, task_size)
    dropped = tuple(ordered[len(blocks) * task_size :])

    normalizers = {
        sid: fit_normalizer(by_id[sid], (0, train_range[1])) for sid in ordered
    }

    train_tasks, test_tasks = [], []
    for task_id, stations in enumerate(blocks):
        for role, day_range, bucket in (
            ("train", train_range, train_tasks),
            ("test", test_range, test_tasks),
        ):
            windows = [
                extract_windows(
                    by_id[sid],
                    lookback,
                    day_range,
                    normalizer=normalizers[sid],
                    station_index=pos,
                )
                for pos, sid in enumerate(stations)
            ]
            try:
                samples = assemble_samples(windows, list(stations))
            except ValidationError as exc:
                raise ValidationError(
                    f"task {task_id} ({','.join(stations)}), {role} split: {exc}"
                ) from None
            bucket.append(MetaTask.from_samples(task_id, stations, samples))

    return TaskSet(
        train_tasks=tuple(train_tasks),
        test_tasks=tuple(test_tasks),
        task_size=task_size,
        lookback=lookback,
        normalizers=normalizers,
        dropped_stations=dropped,
        train_day_range=train_range,
        test_day_range=test_range,
    )


def sample_episode(
    task_set: TaskSet,
    n_tasks: int,
    k_support: int,
    k_query: int,
    rng: np.random.Generator,
) -> EpisodeBatch:
    """Draw one episode: tasks with replacement, samples without.

    A drawn task lacking k_support + k_query train samples is re-drawn;
    after MAX_FAILED_DRAWS rejections the episode fails.
    """
    if min(n_tasks, k_support, k_query) < 1:
        raise ValidationError("n_tasks, k_support, k_query must all be >= 1")
    train_tasks = task_set.train_tasks
    if not train_tasks:
        raise ValidationError("task set has no train tasks")

    need = k_support + k_query
    failures = 0
    chosen = []
    while len(chosen) < n_tasks:
        task = train_tasks[int(rng.integers(len(train_tasks)))]
        if task.n_samples < need:
            failures += 1
            if failures >= MAX_FAILED_DRAWS:
                raise ValidationError(
                    f"{failures} draws found no task with >= {need} train samples"
                )
            continue
        idx = rng.choice(task.n_samples, size=need, replace=False)
        support, query = idx[:k_support], idx[k_support:]
        chosen.append(
            EpisodeTask(
                task_id=task.task_id,
                support_indices=tuple(int(i) for i in support),
                query_indices=tuple(int(i) for i in query),
                support_inputs=task.inputs[support],
                support_labels=task.labels[support],
                query_inputs=task.inputs[query],
                query_labels=task.labels[query],
            )
        )
    return EpisodeBatch(tasks=tuple(chosen))

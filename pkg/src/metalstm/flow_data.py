"""Passenger-flow ingestion, normalization, and pattern-window extraction.

A station's inflow history is a dense (days, slots) grid of counts over
workdays.  From it the model consumes three aligned rows per training window:
the real-time pattern (the lookback slots ending at the anchor), the daily
pattern (the same slots one workday earlier), and the weekly pattern (the same
slots five workdays earlier), with the next slot's count as the label.
Multi-station samples concatenate those rows across a fixed station order.

All functions here are pure over immutable inputs; ingestion is the only
place that touches the filesystem.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date, datetime

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

# Half-open [start, stop) interval of 0-based workday indices.
DayRange = tuple[int, int]

# Workdays of weekly lookback; with workday-only data "one week ago" is
# five workdays back.
WEEKLY_LOOKBACK_DAYS = 5
DAILY_LOOKBACK_DAYS = 1

DEFAULT_COLUMNS = ("station_id", "line_id", "line_order", "day", "slot", "count")


@dataclass(frozen=True)
class FlowSeries:
    """Dense per-station inflow grid over consecutive workdays.

    ``counts[d, s]`` is the passenger inflow during slot ``s`` of workday
    ``d``; every day has the same number of slots.
    """

    station_id: str
    line_id: str
    line_order: int
    interval_minutes: int
    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=float)
        if arr.ndim != 2:
            raise ValidationError(
                f"counts must be (days, slots), got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValidationError("counts contain non-finite values")
        if np.any(arr < 0):
            raise ValidationError("counts must be non-negative")
        if self.interval_minutes <= 0:
            raise ValidationError("interval_minutes must be positive")
        object.__setattr__(self, "counts", arr)

    @property
    def n_days(self) -> int:
        return self.counts.shape[0]

    @property
    def slots_per_day(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class Normalizer:
    """Per-station min-max scaling into the tanh-friendly [0, 1] range.

    A constant series (``high == low``) maps everything to 0 and inverts
    back to the constant.
    """

    low: float
    high: float

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ValidationError("normalizer bounds must be finite")
        if self.high < self.low:
            raise ValidationError(f"max {self.high} < min {self.low}")

    @property
    def span(self) -> float:
        return self.high - self.low

    def normalize(self, values):
        arr = np.asarray(values, dtype=float)
        if self.span == 0.0:
            return np.zeros_like(arr)
        return (arr - self.low) / self.span

    def denormalize(self, values):
        arr = np.asarray(values, dtype=float)
        return self.low + arr * self.span


@dataclass(frozen=True)
class PatternWindow:
    """One training window anchored at (day, slot) of a single station.

    ``realtime``, ``daily``, and ``weekly`` each hold ``lookback`` values;
    ``label`` is the flow at the next slot of the anchor day.  ``fallback``
    marks windows whose daily/weekly rows were clamped to the earliest
    available day because the anchor lacks full lookback history.
    """

    realtime: np.ndarray
    daily: np.ndarray
    weekly: np.ndarray
    label: float
    station_index: int
    day: int
    slot: int
    fallback: bool = False

    def __post_init__(self):
        n = len(self.realtime)
        if not (len(self.daily) == len(self.weekly) == n):
            raise ValidationError("pattern rows must share one lookback length")


@dataclass(frozen=True)
class MultiStationSample:
    """Stacked model input for one anchor across a task's station order.

    ``inputs`` has shape (lookback, 3 * I): per time step the concatenation
    over stations of [realtime, daily, weekly].  ``labels`` has shape (I,).
    """

    inputs: np.ndarray
    labels: np.ndarray
    day: int
    slot: int
    fallback: bool = False

    @property
    def n_stations(self) -> int:
        return self.labels.shape[0]


@dataclass
class LoadReport:
    """Accounting of what ingestion kept, filled, and dropped."""

    path: str = ""
    rows_read: int = 0
    n_stations: int = 0
    n_days: int = 0
    slots_per_day: int = 0
    filled_slots: int = 0
    dropped_weekend: int = 0
    dropped_out_of_service: int = 0
    stations: list[str] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"source: {self.path}",
            f"rows read: {self.rows_read}",
            f"stations: {self.n_stations}",
            f"workdays: {self.n_days}",
            f"slots per day: {self.slots_per_day}",
            f"missing slots filled with 0: {self.filled_slots}",
            f"weekend rows dropped: {self.dropped_weekend}",
            f"out-of-service rows dropped: {self.dropped_out_of_service}",
        ]
        return "\n".join(lines) + "\n"


def _parse_minutes(text: str, what: str) -> int:
    parts = text.split(":")
    if len(parts) != 2:
        raise ValidationError(f"{what} must be HH:MM, got {text!r}")
    try:
        hours, minutes = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValidationError(f"{what} must be HH:MM, got {text!r}") from None
    if not (0 <= hours <= 24 and 0 <= minutes < 60):
        raise ValidationError(f"{what} out of range: {text!r}")
    return hours * 60 + minutes


def _parse_day_key(text: str, line_number: int):
    """A day is either an integer workday index or an ISO date."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise ParseError(f"bad day value {text!r}", line_number) from None


def _parse_count(text: str, line_number: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"bad count value {text!r}", line_number) from None
    if not math.isfinite(value) or value < 0:
        raise ParseError(f"count must be non-negative, got {text!r}", line_number)
    return value


def ingest_csv(
    path,
    schema: dict[str, str] | None = None,
    *,
    interval_minutes: int = 15,
    service_start: str | None = None,
    service_end: str | None = None,
    slots_per_day: int | None = None,
) -> tuple[list[FlowSeries], LoadReport]:
    """Read flow records into dense per-station series plus a load report.

    The file needs a header.  ``schema`` maps the logical column names
    (station_id, line_id, line_order, count, and either day+slot or
    timestamp) onto the file's actual headers; omitted entries default to
    the logical name itself.  Timestamp mode requires ``service_start`` and
    ``service_end`` ("HH:MM") to place records into slots; records outside
    service hours are dropped and reported.  Days given as ISO dates keep
    workdays only (weekend rows are dropped and reported); integer days are
    taken as workday indices directly.  Missing slots are filled with 0.
    """
    mapping = dict(schema or {})

    def colname(logical: str) -> str:
        return mapping.get(logical, logical)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header") from None
        index = {name.strip(): i for i, name in enumerate(header)}

        def column(logical: str, required: bool = True) -> int | None:
            name = colname(logical)
            if name not in index:
                if required:
                    raise SchemaError(f"{path}: missing column {name!r}")
                return None
            return index[name]

        c_station = column("station_id")
        c_line = column("line_id")
        c_order = column("line_order")
        c_count = column("count")
        c_timestamp = column("timestamp", required=False)
        if c_timestamp is None:
            c_day = column("day")
            c_slot = column("slot")
        else:
            c_day = c_slot = None
            if service_start is None or service_end is None:
                raise ValidationError(
                    "timestamp column requires service_start and service_end"
                )

        start_min = _parse_minutes(service_start, "service_start") if service_start else 0
        if service_start is not None and service_end is not None:
            end_min = _parse_minutes(service_end, "service_end")
            if end_min <= start_min:
                raise ValidationError("service_end must be after service_start")
            span = end_min - start_min
            if span % interval_minutes != 0:
                raise ValidationError(
                    "service hours must be a whole number of intervals"
                )
            slots_per_day = span // interval_minutes

        report = LoadReport(path=str(path))
        # (station, day_key, slot) -> count; station -> (line_id, line_order)
        cells: dict[tuple[str, object, int], float] = {}
        lines_of: dict[str, tuple[str, int]] = {}
        day_type: type | None = None
        width = max(c for c in (c_station, c_line, c_order, c_count,
                                c_timestamp, c_day, c_slot) if c is not None) + 1

        for line_number, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < width:
                raise ParseError(f"expected at least {width} columns", line_number)
            report.rows_read += 1
            station = row[c_station].strip()
            line_id = row[c_line].strip()
            if not station or not line_id:
                raise ParseError("empty station_id or line_id", line_number)
            try:
                line_order = int(row[c_order])
            except ValueError:
                raise ParseError(
                    f"bad line_order {row[c_order]!r}", line_number
                ) from None
            count = _parse_count(row[c_count], line_number)

            if c_timestamp is not None:
                try:
                    stamp = datetime.fromisoformat(row[c_timestamp].strip())
                except ValueError:
                    raise ParseError(
                        f"bad timestamp {row[c_timestamp]!r}", line_number
                    ) from None
                day_key: object = stamp.date()
                minute = stamp.hour * 60 + stamp.minute - start_min
                if minute < 0 or minute >= slots_per_day * interval_minutes:
                    report.dropped_out_of_service += 1
                    continue
                slot = minute // interval_minutes
            else:
                day_key = _parse_day_key(row[c_day].strip(), line_number)
                try:
                    slot = int(row[c_slot])
                except ValueError:
                    raise ParseError(
                        f"bad slot {row[c_slot]!r}", line_number
                    ) from None
                if slot < 0:
                    raise ParseError(f"negative slot {slot}", line_number)

            if day_type is None:
                day_type = type(day_key)
            elif type(day_key) is not day_type:
                raise ParseError(
                    f"day {day_key!r} mixes formats with earlier rows",
                    line_number,
                )
            if isinstance(day_key, date) and day_key.weekday() >= 5:
                report.dropped_weekend += 1
                continue

            known = lines_of.get(station)
            if known is None:
                lines_of[station] = (line_id, line_order)
            elif known != (line_id, line_order):
                raise SchemaError(
                    f"station {station!r} has conflicting line assignments "
                    f"{known} and {(line_id, line_order)}"
                )
            key = (station, day_key, slot)
            if key in cells:
                raise ParseError(
                    f"duplicate record for station {station!r} "
                    f"day {day_key} slot {slot}",
                    line_number,
                )
            cells[key] = count

    if not cells:
        raise SchemaError(f"{path}: no usable records")

    seen_orders: dict[tuple[str, int], str] = {}
    for station, (line_id, line_order) in lines_of.items():
        other = seen_orders.setdefault((line_id, line_order), station)
        if other != station:
            raise SchemaError(
                f"stations {other!r} and {station!r} share line {line_id!r} "
                f"position {line_order}"
            )

    day_keys = sorted({k[1] for k in cells})
    day_of = {key: i for i, key in enumerate(day_keys)}
    if slots_per_day is None:
        per_day_max: dict[object, int] = {}
        for _, day_key, slot in cells:
            per_day_max[day_key] = max(per_day_max.get(day_key, 0), slot)
        widths = {m + 1 for m in per_day_max.values()}
        if len(widths) > 1:
            raise SchemaError(
                f"inconsistent slot count across days: {sorted(widths)}"
            )
        slots_per_day = widths.pop()
    else:
        bad = max(k[2] for k in cells)
        if bad >= slots_per_day:
            raise SchemaError(
                f"slot {bad} outside declared {slots_per_day} slots per day"
            )

    n_days = len(day_keys)
    grids = {
        station: np.zeros((n_days, slots_per_day)) for station in lines_of
    }
    present = {station: 0 for station in lines_of}
    for (station, day_key, slot), count in cells.items():
        grids[station][day_of[day_key], slot] = count
        present[station] += 1

    series = [
        FlowSeries(
            station_id=station,
            line_id=line_id,
            line_order=line_order,
            interval_minutes=interval_minutes,
            counts=grids[station],
        )
        for station, (line_id, line_order) in lines_of.items()
    ]
    series.sort(key=lambda s: (s.line_id, s.line_order))

    report.n_stations = len(series)
    report.n_days = n_days
    report.slots_per_day = slots_per_day
    report.filled_slots = sum(
        n_days * slots_per_day - present[s.station_id] for s in series
    )
    report.stations = [s.station_id for s in series]
    return series, report


def _check_day_range(series: FlowSeries, day_range: DayRange) -> tuple[int, int]:
    start, stop = day_range
    if stop <= start:
        raise ValidationError(f"empty day range [{start}, {stop})")
    if start < 0 or stop > series.n_days:
        raise ValidationError(
            f"day range [{start}, {stop}) outside 0..{series.n_days}"
        )
    return start, stop


def fit_normalizer(series: FlowSeries, train_day_range: DayRange) -> Normalizer:
    """Min-max bounds over the training days only."""
    start, stop = _check_day_range(series, train_day_range)
    window = series.counts[start:stop]
    return Normalizer(low=float(window.min()), high=float(window.max()))


def extract_windows(
    series: FlowSeries,
    lookback: int,
    day_range: DayRange,
    *,
    normalizer: Normalizer | None = None,
    station_index: int = 0,
    allow_fallback: bool = False,
) -> list[PatternWindow]:
    """Enumerate pattern windows anchored inside ``day_range``.

    An anchor (day d, slot t) qualifies when the realtime row fits the day
    (t - lookback + 1 >= 0) and the label slot t + 1 exists.  Without
    ``allow_fallback`` the anchor also needs five prior workdays; with it,
    the daily/weekly source days are clamped to day 0 when history is short
    and the window is flagged ``fallback``.
    """
    if lookback < 1:
        raise ValidationError(f"lookback must be >= 1, got {lookback}")
    if lookback >= series.slots_per_day:
        raise ValidationError(
            f"lookback {lookback} must be below {series.slots_per_day} slots per day"
        )
    start, stop = _check_day_range(series, day_range)

    counts = series.counts
    scale = normalizer.normalize if normalizer is not None else np.asarray
    windows = []
    for day in range(start, stop):
        daily_day = day - DAILY_LOOKBACK_DAYS
        weekly_day = day - WEEKLY_LOOKBACK_DAYS
        clamped = weekly_day < 0 or daily_day < 0
        if clamped and not allow_fallback:
            continue
        daily_day = max(daily_day, 0)
        weekly_day = max(weekly_day, 0)
        for anchor in range(lookback - 1, series.slots_per_day - 1):
            lo = anchor - lookback + 1
            hi = anchor + 1
            windows.append(
                PatternWindow(
                    realtime=scale(counts[day, lo:hi]).astype(float),
                    daily=scale(counts[daily_day, lo:hi]).astype(float),
                    weekly=scale(counts[weekly_day, lo:hi]).astype(float),
                    label=float(scale(counts[day, anchor + 1])),
                    station_index=station_index,
                    day=day,
                    slot=anchor,
                    fallback=clamped,
                )
            )
    return windows


def assemble_samples(
    windows_per_station: list[list[PatternWindow]],
    station_order: list[str],
) -> list[MultiStationSample]:
    """Join per-station windows into multi-station samples at shared anchors.

    Per time step the input vector concatenates [realtime, daily, weekly]
    over stations in ``station_order``; labels follow the same order.  Only
    anchors present for every station produce a sample.
    """
    if len(windows_per_station) != len(station_order):
        raise ValidationError(
            f"{len(windows_per_station)} window lists for "
            f"{len(station_order)} stations"
        )
    if not windows_per_station:
        raise ValidationError("no stations given")

    by_anchor = []
    for windows in windows_per_station:
        by_anchor.append({(w.day, w.slot): w for w in windows})
    common = set(by_anchor[0])
    for anchors in by_anchor[1:]:
        common &= set(anchors)
    if not common:
        raise ValidationError("stations share no common (day, slot) anchors")

    n_stations = len(station_order)
    samples = []
    for day, slot in sorted(common):
        parts = [anchors[(day, slot)] for anchors in by_anchor]
        lookback = len(parts[0].realtime)
        inputs = np.empty((lookback, 3 * n_stations))
        for s, w in enumerate(parts):
            inputs[:, 3 * s] = w.realtime
            inputs[:, 3 * s + 1] = w.daily
            inputs[:, 3 * s + 2] = w.weekly
        labels = np.array([w.label for w in parts])
        samples.append(
            MultiStationSample(
                inputs=inputs,
                labels=labels,
                day=day,
                slot=slot,
                fallback=any(w.fallback for w in parts),
            )
        )
    return samples

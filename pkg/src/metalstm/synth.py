"""Deterministic synthetic passenger-flow generator.

Stations follow a bimodal weekday profile: a base level plus Gaussian
morning/evening peaks, modulated across the five-workday week, with an
optional linear day-over-day trend and Gaussian noise.  Counts are
rectified at zero and rounded to whole passengers, so a strictly periodic
configuration (no noise, trend, or weekly modulation) repeats exactly and
per-slot historical means are exact.

Source and target stations for a transfer scenario are drawn from one
parametric family: shared peak structure, independently drawn levels,
centers, and widths.  Everything is a pure function of the provided RNG.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .flow_data import FlowSeries

DEFAULT_SLOTS_PER_DAY = 68  # 17 service hours at 15-minute intervals
DEFAULT_INTERVAL_MINUTES = 15
WORKWEEK_DAYS = 5


@dataclass(frozen=True)
class StationProfile:
    """Parameters shaping one station's daily inflow curve."""

    station_id: str
    line_id: str
    line_order: int
    base: float
    morning_amplitude: float
    morning_center: float
    evening_amplitude: float
    evening_center: float
    peak_width: float
    weekly_amplitude: float
    trend_per_day: float
    noise_std: float

    def __post_init__(self):
        if self.peak_width <= 0:
            raise ValidationError("peak_width must be positive")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")

    def as_vector(self) -> np.ndarray:
        return np.array(
            [
                self.base,
                self.morning_amplitude,
                self.morning_center,
                self.evening_amplitude,
                self.evening_center,
                self.peak_width,
                self.weekly_amplitude,
                self.trend_per_day,
                self.noise_std,
            ]
        )


@dataclass(frozen=True)
class TransferScenario:
    """A source fleet plus a small data-scarce target fleet."""

    source: list[FlowSeries]
    target: list[FlowSeries]
    source_profiles: list[StationProfile]
    target_profiles: list[StationProfile]
    family_seed: int
    target_train_days: int
    test_days: int

    def manifest(self) -> str:
        src, tgt = self.source, self.target
        lines = [
            "transfer scenario",
            f"family_seed: {self.family_seed}",
            f"slots_per_day: {src[0].slots_per_day}",
            f"interval_minutes: {src[0].interval_minutes}",
            f"source_stations: {len(src)}",
            f"source_days: {src[0].n_days}",
            f"source_lines: {len({s.line_id for s in src})}",
            f"target_stations: {len(tgt)}",
            f"target_days: {tgt[0].n_days}",
            f"target_train_budget: {self.target_train_days}",
            f"target_test_days: {self.test_days}",
        ]
        return "\n".join(lines) + "\n"


def generate(
    profiles: list[StationProfile],
    n_days: int,
    slots_per_day: int,
    rng: np.random.Generator,
    *,
    interval_minutes: int = DEFAULT_INTERVAL_MINUTES,
) -> list[FlowSeries]:
    """Realize whole-passenger counts for every profile over a workday grid."""
    if n_days < 1 or slots_per_day < 1:
        raise ValidationError("need at least one day and one slot")
    if not profiles:
        raise ValidationError("no station profiles given")

    slots = np.arange(slots_per_day, dtype=float)
    days = np.arange(n_days, dtype=float)
    series = []
    for p in profiles:
        bumps = p.morning_amplitude * np.exp(
            -((slots - p.morning_center) ** 2) / (2.0 * p.peak_width**2)
        ) + p.evening_amplitude * np.exp(
            -((slots - p.evening_center) ** 2) / (2.0 * p.peak_width**2)
        )
        week_mod = 1.0 + p.weekly_amplitude * np.sin(
            2.0 * np.pi * (days % WORKWEEK_DAYS) / WORKWEEK_DAYS
        )
        raw = (
            p.base
            + np.outer(week_mod, bumps)
            + p.trend_per_day * days[:, None]
            + rng.normal(0.0, p.noise_std, size=(n_days, slots_per_day))
        )
        series.append(
            FlowSeries(
                station_id=p.station_id,
                line_id=p.line_id,
                line_order=p.line_order,
                interval_minutes=interval_minutes,
                counts=np.rint(np.maximum(raw, 0.0)),
            )
        )
    return series


def draw_profiles(
    rng: np.random.Generator,
    n_stations: int,
    slots_per_day: int,
    *,
    prefix: str,
    stations_per_line: int = 10,
) -> list[StationProfile]:
    """Sample station profiles from the shared parametric family.

    Stations are laid out along lines of ``stations_per_line`` in draw
    order, so partitioning by (line_id, line_order) recovers draw order.
    """
    if n_stations < 1:
        raise ValidationError("need at least one station")
    if stations_per_line < 1:
        raise ValidationError("stations_per_line must be positive")
    profiles = []
    for i in range(n_stations):
        profiles.append(
            StationProfile(
                station_id=f"{prefix}{i + 1:03d}",
                line_id=f"{prefix}L{i // stations_per_line + 1:02d}",
                line_order=i % stations_per_line + 1,
                base=float(rng.uniform(40.0, 80.0)),
                morning_amplitude=float(rng.uniform(150.0, 300.0)),
                morning_center=float(rng.uniform(0.10, 0.16) * slots_per_day),
                evening_amplitude=float(rng.uniform(120.0, 260.0)),
                evening_center=float(rng.uniform(0.65, 0.74) * slots_per_day),
                peak_width=float(rng.uniform(0.04, 0.07) * slots_per_day),
                weekly_amplitude=float(rng.uniform(0.05, 0.15)),
                trend_per_day=float(rng.uniform(0.5, 2.0)),
                noise_std=float(rng.uniform(3.0, 8.0)),
            )
        )
    return profiles


def make_transfer_scenario(
    n_source_stations: int,
    n_target_stations: int,
    source_days: int,
    target_days: int,
    family_seed: int,
    *,
    test_days: int = 10,
    slots_per_day: int = DEFAULT_SLOTS_PER_DAY,
    stations_per_line: int = 10,
) -> TransferScenario:
    """Draw source and target fleets from one family and realize their flows.

    ``target_days`` is the adaptation budget; the target series additionally
    carry ``test_days`` of held-out days after the budgeted ones, so one
    scenario serves every budget up to ``target_days`` with a fixed test
    period.
    """
    if min(n_source_stations, n_target_stations, source_days, target_days) < 1:
        raise ValidationError("scenario dimensions must be positive")
    if test_days < 1:
        raise ValidationError("test_days must be positive")

    root = np.random.SeedSequence(family_seed)
    profile_rng, source_rng, target_rng = (
        np.random.default_rng(s) for s in root.spawn(3)
    )
    source_profiles = draw_profiles(
        profile_rng,
        n_source_stations,
        slots_per_day,
        prefix="S",
        stations_per_line=stations_per_line,
    )
    target_profiles = draw_profiles(
        profile_rng,
        n_target_stations,
        slots_per_day,
        prefix="T",
        stations_per_line=stations_per_line,
    )
    return TransferScenario(
        source=generate(source_profiles, source_days, slots_per_day, source_rng),
        target=generate(
            target_profiles, target_days + test_days, slots_per_day, target_rng
        ),
        source_profiles=source_profiles,
        target_profiles=target_profiles,
        family_seed=family_seed,
        target_train_days=target_days,
        test_days=test_days,
    )


def write_flow_csv(series: list[FlowSeries], path) -> None:
    """Emit the CSV schema ``ingest_csv`` reads back."""
    if not series:
        raise ValidationError("nothing to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "line_id", "line_order", "day", "slot", "count"])
        for s in series:
            for day in range(s.n_days):
                for slot in range(s.slots_per_day):
                    writer.writerow(
                        [
                            s.station_id,
                            s.line_id,
                            s.line_order,
                            day,
                            slot,
                            f"{s.counts[day, slot]:.10g}",
                        ]
                    )

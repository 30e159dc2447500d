"""Experiment configuration shared by every command.

A config is a JSON file; it round-trips through ``to_json``/``from_json``
to an equal value.  The seed is mandatory and never defaulted: every run
draws all of its randomness from it, so omitting it would silently trade
reproducibility for convenience.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .adapt import AdaptationConfig
from .errors import ValidationError
from .meta import MetaConfig

MAX_SEED = 2**64 - 1

DEFAULT_LOOKBACK = 5
DEFAULT_TASK_SIZE = 10
DEFAULT_HIDDEN_SIZE = 32


@dataclass(frozen=True)
class SynthConfig:
    """Shape of the synthetic source/target networks."""

    n_source_stations: int = 270
    n_target_stations: int = 10
    source_days: int = 30
    target_days: int = 5
    test_days: int = 10
    slots_per_day: int = 68
    stations_per_line: int = 10

    def __post_init__(self):
        for name in (
            "n_source_stations",
            "n_target_stations",
            "target_days",
            "test_days",
            "stations_per_line",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        # Source training needs 5 warmup days plus at least a 2-day split.
        if self.source_days < 7:
            raise ValidationError("source_days must be at least 7")
        if self.slots_per_day < 2:
            raise ValidationError("slots_per_day must be at least 2")


def _default_meta() -> MetaConfig:
    # Desk-scale training budget; the optimizer constants keep their
    # class defaults (inner/outer lr 0.001, 5 inner steps, batches of 16).
    return MetaConfig(max_iterations=3000, eval_every=100, patience=8)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a command needs: paths, model shape, and training knobs."""

    seed: int
    source_path: str = "source.csv"
    target_path: str = "target.csv"
    out_dir: str = "out"
    lookback: int = DEFAULT_LOOKBACK
    task_size: int = DEFAULT_TASK_SIZE
    hidden_size: int = DEFAULT_HIDDEN_SIZE
    train_day_fraction: float = 0.8
    train_day_budgets: tuple[int, ...] = (1, 3, 5)
    bench_seeds: int = 3
    run_ha: bool = True
    run_plain: bool = True
    run_ft: bool = True
    synth: SynthConfig = field(default_factory=SynthConfig)
    meta: MetaConfig = field(default_factory=_default_meta)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ValidationError("seed must be an integer")
        if not 0 <= self.seed <= MAX_SEED:
            raise ValidationError(f"seed must be in [0, 2^64), got {self.seed}")
        for name in ("source_path", "target_path", "out_dir"):
            if not getattr(self, name):
                raise ValidationError(f"{name} must be a non-empty path")
        if self.lookback < 1:
            raise ValidationError("lookback must be at least 1")
        if self.task_size < 1:
            raise ValidationError("task_size must be at least 1")
        if self.hidden_size < 1:
            raise ValidationError("hidden_size must be at least 1")
        if not 0.0 < self.train_day_fraction < 1.0:
            raise ValidationError("train_day_fraction must be in (0, 1)")
        budgets = tuple(self.train_day_budgets)
        object.__setattr__(self, "train_day_budgets", budgets)
        if not budgets:
            raise ValidationError("train_day_budgets must not be empty")
        if any(not isinstance(b, int) or b < 1 for b in budgets):
            raise ValidationError("train_day_budgets must be positive integers")
        if list(budgets) != sorted(set(budgets)):
            raise ValidationError("train_day_budgets must be strictly increasing")
        if self.bench_seeds < 1:
            raise ValidationError("bench_seeds must be at least 1")


_NESTED = {"synth": SynthConfig, "meta": MetaConfig, "adaptation": AdaptationConfig}


def to_json(config: ExperimentConfig) -> str:
    return json.dumps(asdict(config), sort_keys=True, indent=2) + "\n"


def _build(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(
            f"unknown {cls.__name__} keys: {', '.join(unknown)}"
        )
    kwargs = dict(data)
    for name, nested_cls in _NESTED.items():
        if name in kwargs:
            value = kwargs[name]
            if not isinstance(value, dict):
                raise ValidationError(f"{name} must be an object")
            kwargs[name] = _build(nested_cls, value)
    if "train_day_budgets" in kwargs:
        value = kwargs["train_day_budgets"]
        if not isinstance(value, (list, tuple)):
            raise ValidationError("train_day_budgets must be a list")
        kwargs["train_day_budgets"] = tuple(value)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"bad {cls.__name__}: {exc}") from exc


def from_json(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    if "seed" not in data:
        raise ValidationError("config must set a seed explicitly")
    return _build(ExperimentConfig, data)


def experiment_digest(config: ExperimentConfig) -> str:
    """Digest of the experiment-defining fields, stored in checkpoints.

    Storage locations are excluded: runs that differ only in where files
    live are the same experiment and must produce identical artifacts.
    """
    data = asdict(config)
    for name in ("source_path", "target_path", "out_dir"):
        data.pop(name)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_json(fh.read())


def apply_overrides(config: ExperimentConfig, *, seed=None, out_dir=None):
    """Fold command-line flags into a loaded config."""
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if out_dir is not None:
        updates["out_dir"] = out_dir
    return replace(config, **updates) if updates else config

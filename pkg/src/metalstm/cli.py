"""Command-line entry point tying the pipeline together.

Commands:
  synth         draw a synthetic source/target scenario and write its CSVs
  train-source  meta-train the transferable initialization on source data
  adapt         fine-tune a trained initialization on target data
  evaluate      score prediction dumps and render report files
  bench         full multi-seed comparison of all models and day budgets

Every command is driven by an ExperimentConfig (JSON file plus flag
overrides) and a mandatory seed.  Two runs with the same config and seed
produce byte-identical artifacts, log wall-clock columns aside.

Exit codes: 0 success, 1 validation, 2 training divergence, 3 I/O.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .adapt import (
    build_target_samples,
    adapt,
    predict,
    prediction_rows,
    read_prediction_dump,
    target_normalizers,
    write_prediction_dump,
)
from .baselines import ha_fit, ha_predict, train_ft_lstm, train_plain_lstm
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, apply_overrides, experiment_digest, load_config
from .errors import DivergenceError, ValidationError
from .figures import save_budget_curves, save_metric_bars, save_prediction_traces
from .flow_data import WEEKLY_LOOKBACK_DAYS, ingest_csv
from .meta import meta_train, render_training_log
from .metrics import render_report_csv, render_station_csv, render_table, score_rows
from .synth import make_transfer_scenario, write_flow_csv
from .tasks import build_task_set

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2
EXIT_IO = 3

THETA0_FILE = "theta0.ckpt"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; route them to the validation code."""

    def error(self, message):
        raise ValidationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="metalstm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        return p

    command("synth", "generate a synthetic source/target scenario")
    train = command("train-source", "meta-train the initialization")
    train.add_argument("--resume", help="checkpoint to continue training from")
    adapt_p = command("adapt", "fine-tune an initialization on target data")
    adapt_p.add_argument(
        "--checkpoint", help="trained initialization (default: <out>/theta0.ckpt)"
    )
    evaluate = command("evaluate", "score prediction dumps into report files")
    evaluate.add_argument(
        "dumps", nargs="*", help="dump files (default: <out>/**/predictions_*.csv)"
    )
    command("bench", "run the full model comparison")
    return parser


def _load_experiment(args) -> ExperimentConfig:
    if args.config is not None:
        config = load_config(args.config)
    elif args.seed is not None:
        config = ExperimentConfig(seed=args.seed)
    else:
        raise ValidationError("provide --config, or --seed to run with defaults")
    return apply_overrides(config, seed=args.seed, out_dir=args.out)


def _data_path(config: ExperimentConfig, path: str) -> str:
    """Relative data paths live inside the output directory."""
    return path if os.path.isabs(path) else os.path.join(config.out_dir, path)


def _write_text(path, text: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _ingest(path):
    series, report = ingest_csv(path)
    print(f"read {path}: {report.n_stations} stations x {report.n_days} days")
    return series, report


# --- synth ---------------------------------------------------------------


def cmd_synth(config: ExperimentConfig) -> int:
    s = config.synth
    scenario = make_transfer_scenario(
        s.n_source_stations,
        s.n_target_stations,
        s.source_days,
        s.target_days,
        family_seed=config.seed,
        test_days=s.test_days,
        slots_per_day=s.slots_per_day,
        stations_per_line=s.stations_per_line,
    )
    os.makedirs(config.out_dir, exist_ok=True)
    source_path = _data_path(config, config.source_path)
    target_path = _data_path(config, config.target_path)
    write_flow_csv(scenario.source, source_path)
    write_flow_csv(scenario.target, target_path)
    _write_text(os.path.join(config.out_dir, "scenario.txt"), scenario.manifest())

    # Read both files back through the ingestion path so the load reports
    # document exactly what downstream commands will see.
    for path, name in ((source_path, "source"), (target_path, "target")):
        _, report = ingest_csv(path)
        _write_text(
            os.path.join(config.out_dir, f"{name}_load_report.txt"), report.render()
        )
        print(
            f"wrote {path}: {report.n_stations} stations x {report.n_days} days, "
            f"{report.slots_per_day} slots/day"
        )
    print(f"wrote {os.path.join(config.out_dir, 'scenario.txt')}")
    return EXIT_OK


# --- train-source --------------------------------------------------------


def cmd_train_source(config: ExperimentConfig, resume: str | None = None) -> int:
    series, _ = _ingest(_data_path(config, config.source_path))
    task_set = build_task_set(
        series, config.task_size, config.lookback, config.train_day_fraction
    )
    print(
        f"{len(task_set.train_tasks)} tasks of {config.task_size} stations "
        f"({len(task_set.dropped_stations)} stations dropped)"
    )
    initial = load_checkpoint(resume).params if resume else None

    m = config.meta
    print(
        f"meta-training: inner_lr={m.inner_lr} meta_lr={m.meta_lr} "
        f"inner_steps={m.inner_steps} batch={m.tasks_per_iteration} "
        f"max_iterations={m.max_iterations}"
    )
    os.makedirs(config.out_dir, exist_ok=True)
    ckpt_path = os.path.join(config.out_dir, THETA0_FILE)
    digest = experiment_digest(config)

    def write_theta0(params, note=""):
        save_checkpoint(
            ckpt_path,
            Checkpoint(
                params=params,
                role="theta_0",
                config_digest=digest,
                stations=tuple(sorted(task_set.normalizers)),
                normalizers=task_set.normalizers,
                metadata={"note": note} if note else {},
            ),
        )

    try:
        params, rows = meta_train(
            task_set,
            m,
            config.seed,
            hidden_size=config.hidden_size,
            initial_params=initial,
        )
    except DivergenceError as exc:
        if exc.last_good is not None:
            write_theta0(exc.last_good, note="partial: training diverged")
            print(f"wrote partial checkpoint {ckpt_path}", file=sys.stderr)
        raise
    write_theta0(params)
    _write_text(
        os.path.join(config.out_dir, "train_log.csv"), render_training_log(m, rows)
    )
    _write_text(os.path.join(config.out_dir, "tasks.txt"), task_set.manifest())
    print(f"wrote {ckpt_path} after {rows[-1].iteration} iterations")
    return EXIT_OK


# --- adapt ---------------------------------------------------------------


def _target_data(config: ExperimentConfig, target_series, budget: int):
    """Budgeted training samples plus the fixed held-out test samples.

    The test period starts after the weekly-lookback warmup and the largest
    configured budget, so every model and budget is scored on the same days.
    """
    n_days = target_series[0].n_days
    test_start = max(WEEKLY_LOOKBACK_DAYS, max(config.train_day_budgets))
    if budget > test_start:
        raise ValidationError(
            f"train_days={budget} overlaps the test period starting day {test_start}"
        )
    if test_start >= n_days:
        raise ValidationError(
            f"target data has {n_days} days; need more than {test_start}"
        )
    normalizers = target_normalizers(target_series, (0, budget))
    train_samples, station_ids = build_target_samples(
        target_series, config.lookback, (0, budget), normalizers, allow_fallback=True
    )
    test_samples, _ = build_target_samples(
        target_series,
        config.lookback,
        (test_start, n_days),
        normalizers,
        allow_fallback=False,
    )
    return normalizers, train_samples, test_samples, station_ids


def _dump_lstm_predictions(
    path, params, test_samples, station_ids, normalizers, series_by_id, *,
    model, train_days, seed,
):
    preds = predict(params, test_samples, station_ids, normalizers)
    rows = prediction_rows(test_samples, station_ids, series_by_id, preds)
    write_prediction_dump(path, rows, model=model, train_days=train_days, seed=seed)
    return rows


def cmd_adapt(config: ExperimentConfig, checkpoint_path: str | None = None) -> int:
    ckpt_path = checkpoint_path or os.path.join(config.out_dir, THETA0_FILE)
    theta0 = load_checkpoint(ckpt_path)
    target_series, _ = _ingest(_data_path(config, config.target_path))
    budget = config.adaptation.train_days
    normalizers, train_samples, test_samples, station_ids = _target_data(
        config, target_series, budget
    )
    print(
        f"adapting on {len(train_samples)} samples from {budget} day(s), "
        f"testing on {len(test_samples)}"
    )
    adapted = adapt(theta0.params, train_samples, config.adaptation, config.seed)

    os.makedirs(config.out_dir, exist_ok=True)
    out_ckpt = os.path.join(config.out_dir, f"adapted_meta_{budget}day.ckpt")
    save_checkpoint(
        out_ckpt,
        Checkpoint(
            params=adapted,
            role="meta",
            config_digest=experiment_digest(config),
            stations=tuple(station_ids),
            normalizers=normalizers,
            metadata={"train_days": str(budget), "source": os.path.basename(ckpt_path)},
        ),
    )
    dump_path = os.path.join(config.out_dir, f"predictions_meta_{budget}day.csv")
    series_by_id = {s.station_id: s for s in target_series}
    _dump_lstm_predictions(
        dump_path, adapted, test_samples, station_ids, normalizers, series_by_id,
        model="meta", train_days=budget, seed=config.seed,
    )
    print(f"wrote {out_ckpt}")
    print(f"wrote {dump_path}")
    return EXIT_OK


# --- evaluate ------------------------------------------------------------


def _render_reports(config: ExperimentConfig, reports, rows_for_traces) -> None:
    """Write the score tables and their figures side by side."""
    out = config.out_dir
    os.makedirs(out, exist_ok=True)
    _write_text(os.path.join(out, "report.csv"), render_report_csv(reports))
    _write_text(os.path.join(out, "stations.csv"), render_station_csv(reports))
    table = render_table(reports)
    _write_text(os.path.join(out, "report.txt"), table)
    save_metric_bars(reports, os.path.join(out, "metrics.png"))
    save_budget_curves(reports, os.path.join(out, "wmape_by_budget.png"))
    if rows_for_traces:
        save_prediction_traces(rows_for_traces, os.path.join(out, "traces.png"))
    print(table, end="")
    print(f"wrote report.csv, stations.csv, report.txt and figures under {out}/")


def cmd_evaluate(config: ExperimentConfig, dump_paths: list[str]) -> int:
    if not dump_paths:
        dump_paths = sorted(
            glob.glob(os.path.join(config.out_dir, "predictions_*.csv"))
        ) + sorted(glob.glob(os.path.join(config.out_dir, "dumps", "*.csv")))
    if not dump_paths:
        raise ValidationError(
            f"no prediction dumps given and none found under {config.out_dir}/"
        )
    pooled: dict[tuple[str, int], list] = {}
    for path in dump_paths:
        metadata, rows = read_prediction_dump(path)
        if "model" not in metadata or "train_days" not in metadata:
            raise ValidationError(f"{path}: dump lacks model/train_days metadata")
        key = (metadata["model"], int(metadata["train_days"]))
        pooled.setdefault(key, []).extend(rows)
    reports = [
        score_rows(model, days, rows) for (model, days), rows in sorted(pooled.items())
    ]
    best = min(reports, key=lambda r: (r.wmape, r.model, r.train_days))
    _render_reports(config, reports, pooled[(best.model, best.train_days)])
    return EXIT_OK


# --- bench ---------------------------------------------------------------


def _cells_csv(cells) -> str:
    lines = ["model,train_days,seed,rmse,mae,wmape,n"]
    for model, days, run, r in sorted(cells, key=lambda c: (c[0], c[1], c[2])):
        lines.append(
            f"{model},{days},{run},{r.rmse!r},{r.mae!r},{r.wmape!r},{r.n}"
        )
    return "\n".join(lines) + "\n"


def cmd_bench(config: ExperimentConfig) -> int:
    started = time.perf_counter()
    models = ["meta"]
    for name, enabled in (
        ("ha", config.run_ha),
        ("plain", config.run_plain),
        ("ft", config.run_ft),
    ):
        if enabled:
            models.append(name)
    budgets = config.train_day_budgets
    dumps_dir = os.path.join(config.out_dir, "dumps")
    os.makedirs(dumps_dir, exist_ok=True)

    # One u64 per purpose, drawn up front: every cell's randomness is fixed
    # by the config seed regardless of which models are enabled.
    s = config.synth
    run_state = np.random.SeedSequence(config.seed).generate_state(
        config.bench_seeds * (2 + 2 * len(budgets)), dtype=np.uint64
    )
    next_seed = iter(int(v) for v in run_state)

    cells = []
    pooled: dict[tuple[str, int], list] = {}
    trace_rows: dict[tuple[str, int], list] = {}
    for run in range(config.bench_seeds):
        scenario = make_transfer_scenario(
            s.n_source_stations,
            s.n_target_stations,
            s.source_days,
            s.target_days,
            family_seed=next(next_seed),
            test_days=s.test_days,
            slots_per_day=s.slots_per_day,
            stations_per_line=s.stations_per_line,
        )
        task_set = build_task_set(
            scenario.source, config.task_size, config.lookback,
            config.train_day_fraction,
        )
        train_seed = next(next_seed)
        theta0, log_rows = meta_train(
            task_set, config.meta, train_seed, hidden_size=config.hidden_size
        )
        save_checkpoint(
            os.path.join(config.out_dir, f"theta0_seed{run}.ckpt"),
            Checkpoint(
                params=theta0,
                role="theta_0",
                config_digest=experiment_digest(config),
                stations=tuple(sorted(task_set.normalizers)),
                normalizers=task_set.normalizers,
                metadata={"bench_run": str(run)},
            ),
        )
        _write_text(
            os.path.join(config.out_dir, f"train_log_seed{run}.csv"),
            render_training_log(config.meta, log_rows),
        )
        print(
            f"run {run}: meta-trained {rows_summary(log_rows)} "
            f"({time.perf_counter() - started:.1f}s elapsed)"
        )

        series_by_id = {t.station_id: t for t in scenario.target}
        for budget in budgets:
            adapt_seed, plain_seed = next(next_seed), next(next_seed)
            normalizers, train_samples, test_samples, station_ids = _target_data(
                config, scenario.target, budget
            )
            target_config = replace(config.adaptation, train_days=budget)
            fitted = {}
            fitted["meta"] = adapt(theta0, train_samples, target_config, adapt_seed)
            if config.run_plain:
                fitted["plain"] = train_plain_lstm(
                    train_samples, target_config, plain_seed,
                    hidden_size=config.hidden_size,
                )
            if config.run_ft:
                # The same per-run seed across budgets also pins the drawn
                # source task, so budgets differ only in fine-tuning data.
                fitted["ft"] = train_ft_lstm(
                    task_set, train_samples, config.adaptation, target_config,
                    train_seed, hidden_size=config.hidden_size,
                )
            for model in models:
                dump_path = os.path.join(
                    dumps_dir, f"predictions_{model}_{budget}day_seed{run}.csv"
                )
                if model == "ha":
                    ha = ha_fit(scenario.target, (0, budget))
                    preds = np.stack(
                        [
                            [
                                ha_predict(ha, sid, t.day, t.slot + 1)
                                for sid in station_ids
                            ]
                            for t in test_samples
                        ]
                    )
                    rows = prediction_rows(
                        test_samples, station_ids, series_by_id, preds
                    )
                    write_prediction_dump(
                        dump_path, rows, model="ha", train_days=budget, seed=run
                    )
                else:
                    rows = _dump_lstm_predictions(
                        dump_path, fitted[model], test_samples, station_ids,
                        normalizers, series_by_id,
                        model=model, train_days=budget, seed=run,
                    )
                report = score_rows(model, budget, rows)
                cells.append((model, budget, run, report))
                pooled.setdefault((model, budget), []).extend(rows)
                if run == 0:
                    trace_rows[(model, budget)] = rows

    _write_text(os.path.join(config.out_dir, "bench_cells.csv"), _cells_csv(cells))
    reports = [
        score_rows(model, days, rows) for (model, days), rows in sorted(pooled.items())
    ]
    best = min(reports, key=lambda r: (r.wmape, r.model, r.train_days))
    out = config.out_dir
    _write_text(os.path.join(out, "bench_aggregate.csv"), render_report_csv(reports))
    _write_text(os.path.join(out, "bench_stations.csv"), render_station_csv(reports))
    table = render_table(reports)
    _write_text(os.path.join(out, "bench_table.txt"), table)
    save_metric_bars(reports, os.path.join(out, "metrics.png"))
    save_budget_curves(reports, os.path.join(out, "wmape_by_budget.png"))
    save_prediction_traces(
        trace_rows[(best.model, best.train_days)], os.path.join(out, "traces.png")
    )
    print(table, end="")
    print(
        f"{len(cells)} cells ({config.bench_seeds} seeds x {len(models)} models x "
        f"{len(budgets)} budgets) in {time.perf_counter() - started:.1f}s"
    )
    print(f"wrote bench_cells.csv, bench_aggregate.csv and figures under {out}/")
    return EXIT_OK


def rows_summary(log_rows) -> str:
    evals = [r.eval_loss for r in log_rows if r.eval_loss is not None]
    tail = f", best eval loss {min(evals):.5f}" if evals else ""
    return f"{log_rows[-1].iteration} iterations{tail}"


# --- entry point ---------------------------------------------------------


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        config = _load_experiment(args)
        if args.command == "synth":
            return cmd_synth(config)
        if args.command == "train-source":
            return cmd_train_source(config, resume=args.resume)
        if args.command == "adapt":
            return cmd_adapt(config, checkpoint_path=args.checkpoint)
        if args.command == "evaluate":
            return cmd_evaluate(config, args.dumps)
        return cmd_bench(config)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

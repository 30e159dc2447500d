"""Command-line interface: exit codes, artifacts, reproducibility."""

from __future__ import annotations

import json
import os

import numpy as np
import pytest

from metalstm.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from metalstm.cli import main
from metalstm.lstm import PARAM_FIELDS, ModelParams, init_params


def write_config(path, out_dir, **overrides):
    config = {
        "seed": 11,
        "out_dir": str(out_dir),
        "task_size": 4,
        "train_day_budgets": [1, 3, 5],
        "bench_seeds": 1,
        "synth": {
            "n_source_stations": 9,
            "n_target_stations": 4,
            "source_days": 16,
            "target_days": 5,
            "test_days": 5,
            "slots_per_day": 16,
            "stations_per_line": 5,
        },
        "meta": {
            "max_iterations": 60,
            "eval_every": 20,
            "patience": 2,
            "k_support": 8,
            "k_query": 8,
        },
        "adaptation": {"max_epochs": 10},
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            config[key] = {**config.get(key, {}), **value}
        else:
            config[key] = value
    path.write_text(json.dumps(config))
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth + train-source + adapt run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("pipeline")
    out = root / "out"
    config = write_config(root / "config.json", out)
    assert main(["synth", "--config", str(config)]) == 0
    assert main(["train-source", "--config", str(config)]) == 0
    assert main(["adapt", "--config", str(config)]) == 0
    return config, out


class TestArguments:
    def test_no_config_no_seed(self, capsys):
        assert main(["synth"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_malformed_config(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{seed: 11")
        assert main(["synth", "--config", str(path)]) == 1
        assert "JSON" in capsys.readouterr().err

    def test_config_without_seed(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"out_dir": "x"}')
        assert main(["synth", "--config", str(path)]) == 1
        assert "seed" in capsys.readouterr().err

    def test_missing_config_file_is_io_error(self, tmp_path):
        assert main(["synth", "--config", str(tmp_path / "nope.json")]) == 3

    def test_bad_lookback_rejected(self, tmp_path, capsys):
        config = write_config(tmp_path / "c.json", tmp_path / "out", lookback=0)
        assert main(["synth", "--config", str(config)]) == 1

    def test_zero_stations_rejected(self, tmp_path):
        config = write_config(
            tmp_path / "c.json", tmp_path / "out", synth={"n_source_stations": 0}
        )
        assert main(["synth", "--config", str(config)]) == 1


class TestSynth:
    def test_writes_csvs_and_manifest(self, pipeline):
        _, out = pipeline
        assert (out / "source.csv").exists()
        assert (out / "target.csv").exists()
        assert "transfer scenario" in (out / "scenario.txt").read_text()
        assert "stations: 9" in (out / "source_load_report.txt").read_text()

    def test_same_seed_identical_files(self, tmp_path):
        for name in ("a", "b"):
            config = write_config(tmp_path / f"{name}.json", tmp_path / name)
            assert main(["synth", "--config", str(config)]) == 0
        for rel in ("source.csv", "target.csv", "scenario.txt"):
            assert (tmp_path / "a" / rel).read_bytes() == (
                tmp_path / "b" / rel
            ).read_bytes()

    def test_seed_flag_overrides(self, tmp_path):
        config = write_config(tmp_path / "c.json", tmp_path / "a")
        assert main(["synth", "--config", str(config)]) == 0
        config2 = write_config(tmp_path / "c2.json", tmp_path / "b")
        assert main(["synth", "--config", str(config2), "--seed", "99"]) == 0
        assert (tmp_path / "a" / "source.csv").read_bytes() != (
            tmp_path / "b" / "source.csv"
        ).read_bytes()


class TestTrainSource:
    def test_writes_checkpoint_and_log(self, pipeline):
        _, out = pipeline
        ckpt = load_checkpoint(out / "theta0.ckpt")
        assert ckpt.role == "theta_0"
        assert ckpt.params.output_size == 4
        assert ckpt.normalizers
        log = (out / "train_log.csv").read_text().splitlines()
        assert log[0].startswith("# inner_lr=0.001 meta_lr=0.001 inner_steps=5")
        assert log[2] == "iter,meta_loss,eval_loss,wall_ms"
        assert "task 0" in (out / "tasks.txt").read_text()

    def test_config_echo_on_stdout(self, pipeline, capsys, tmp_path):
        config, _ = pipeline
        out2 = tmp_path / "echo_out"
        cfg = write_config(tmp_path / "c.json", out2, meta={"max_iterations": 20})
        assert main(["train-source", "--config", str(cfg)]) == 3  # no data yet
        assert main(["synth", "--config", str(cfg)]) == 0
        capsys.readouterr()
        assert main(["train-source", "--config", str(cfg)]) == 0
        echoed = capsys.readouterr().out
        assert "inner_lr=0.001" in echoed and "batch=16" in echoed

    def test_missing_source_is_io_error(self, tmp_path):
        config = write_config(tmp_path / "c.json", tmp_path / "out")
        assert main(["train-source", "--config", str(config)]) == 3

    def test_resume_from_checkpoint(self, pipeline, tmp_path):
        config, out = pipeline
        out2 = tmp_path / "resumed"
        cfg = write_config(
            tmp_path / "c.json",
            out2,
            meta={"max_iterations": 5, "eval_every": 20,
                  "k_support": 8, "k_query": 8},
        )
        assert main(["synth", "--config", str(cfg)]) == 0
        assert (
            main(
                [
                    "train-source",
                    "--config",
                    str(cfg),
                    "--resume",
                    str(out / "theta0.ckpt"),
                ]
            )
            == 0
        )
        assert (out2 / "theta0.ckpt").exists()

    def test_divergent_resume_exits_2_with_partial_checkpoint(
        self, pipeline, tmp_path, capsys
    ):
        config, out = pipeline
        good = load_checkpoint(out / "theta0.ckpt").params
        poisoned = ModelParams(
            **{
                name: np.full_like(getattr(good, name), np.nan)
                for name in PARAM_FIELDS
            }
        )
        bad_ckpt = tmp_path / "nan.ckpt"
        save_checkpoint(bad_ckpt, Checkpoint(params=poisoned, role="theta_0"))
        out2 = tmp_path / "diverged"
        cfg = write_config(tmp_path / "c.json", out2)
        assert main(["synth", "--config", str(cfg)]) == 0
        code = main(
            ["train-source", "--config", str(cfg), "--resume", str(bad_ckpt)]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "diverged" in err
        partial = load_checkpoint(out2 / "theta0.ckpt")
        assert partial.metadata.get("note", "").startswith("partial")


class TestAdapt:
    def test_writes_checkpoint_and_dump(self, pipeline):
        _, out = pipeline
        ckpt = load_checkpoint(out / "adapted_meta_1day.ckpt")
        assert ckpt.role == "meta"
        dump = (out / "predictions_meta_1day.csv").read_text().splitlines()
        assert dump[0] == "# model=meta"
        assert dump[3] == "station_id,day,slot,actual,predicted"

    def test_budgets_1_3_5_accepted(self, pipeline, tmp_path):
        config, out = pipeline
        for days in (3, 5):
            cfg = write_config(
                tmp_path / f"c{days}.json",
                out,
                adaptation={"max_epochs": 2, "train_days": days},
            )
            assert main(["adapt", "--config", str(cfg)]) == 0
            assert (out / f"predictions_meta_{days}day.csv").exists()

    def test_deterministic_outputs(self, pipeline, tmp_path):
        config, out = pipeline
        first = (out / "predictions_meta_1day.csv").read_bytes()
        assert main(["adapt", "--config", str(config)]) == 0
        assert (out / "predictions_meta_1day.csv").read_bytes() == first

    def test_dim_mismatch_cites_sizing_rule(self, pipeline, tmp_path, capsys):
        _, out = pipeline
        rng = np.random.default_rng(0)
        wrong = init_params(8, 9, 3, rng)  # 3-station model, 4-station target
        bad = tmp_path / "wrong.ckpt"
        save_checkpoint(bad, Checkpoint(params=wrong, role="theta_0"))
        cfg = write_config(tmp_path / "c.json", out)
        assert main(["adapt", "--config", str(cfg), "--checkpoint", str(bad)]) == 1
        assert "task size" in capsys.readouterr().err

    def test_missing_checkpoint_is_io_error(self, pipeline, tmp_path):
        config, _ = pipeline
        assert (
            main(["adapt", "--config", str(config), "--checkpoint", "/nope.ckpt"])
            == 3
        )

    def test_budget_overlapping_test_period_rejected(self, pipeline, tmp_path):
        _, out = pipeline
        cfg = write_config(
            tmp_path / "c.json", out, adaptation={"train_days": 6}
        )
        assert main(["adapt", "--config", str(cfg)]) == 1


class TestEvaluate:
    def test_report_row_per_model_and_budget(self, pipeline, capsys):
        config, out = pipeline
        assert main(["evaluate", "--config", str(config)]) == 0
        table = capsys.readouterr().out
        assert "meta" in table
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0] == "model,train_days,rmse,mae,wmape,n"
        assert len(lines) >= 2
        assert (out / "metrics.png").exists()
        assert (out / "traces.png").exists()

    def test_perfect_predictions_zero_metrics(self, tmp_path):
        out = tmp_path / "out"
        out.mkdir()
        dump = out / "predictions_fake_1day.csv"
        dump.write_text(
            "# model=fake\n# train_days=1\n# seed=0\n"
            "station_id,day,slot,actual,predicted\n"
            "a,5,5,10.0,10.0\na,5,6,20.0,20.0\n"
        )
        config = write_config(tmp_path / "c.json", out)
        assert main(["evaluate", "--config", str(config)]) == 0
        report = (out / "report.csv").read_text().splitlines()[1]
        assert report.startswith("fake,1,0.0,0.0,0.0,2")

    def test_explicit_dump_arguments(self, pipeline, tmp_path, capsys):
        config, out = pipeline
        target = tmp_path / "eval_out"
        cfg = write_config(tmp_path / "c.json", target)
        dump = out / "predictions_meta_1day.csv"
        assert main(["evaluate", "--config", str(cfg), str(dump)]) == 0
        assert (target / "report.csv").exists()

    def test_missing_dump_is_io_error(self, pipeline, tmp_path):
        config, _ = pipeline
        assert main(["evaluate", "--config", str(config), "/nope.csv"]) == 3

    def test_no_dumps_found_is_validation_error(self, tmp_path):
        config = write_config(tmp_path / "c.json", tmp_path / "empty")
        (tmp_path / "empty").mkdir()
        assert main(["evaluate", "--config", str(config)]) == 1


@pytest.fixture(scope="module")
def bench_out(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    out = root / "out"
    config = write_config(root / "config.json", out)
    assert main(["bench", "--config", str(config)]) == 0
    return out


class TestBench:
    def test_cells_cover_models_budgets_seeds(self, bench_out):
        lines = (bench_out / "bench_cells.csv").read_text().splitlines()
        assert lines[0] == "model,train_days,seed,rmse,mae,wmape,n"
        cells = [tuple(l.split(",")[:3]) for l in lines[1:]]
        assert len(cells) == 4 * 3 * 1
        assert len(set(cells)) == len(cells)
        models = {c[0] for c in cells}
        assert models == {"meta", "ha", "plain", "ft"}

    def test_aggregate_sorted_by_wmape(self, bench_out):
        lines = (bench_out / "bench_aggregate.csv").read_text().splitlines()
        wmapes = [float(l.split(",")[4]) for l in lines[1:]]
        assert wmapes == sorted(wmapes)
        assert len(wmapes) == 12

    def test_artifacts_written(self, bench_out):
        for rel in (
            "bench_table.txt",
            "bench_stations.csv",
            "metrics.png",
            "wmape_by_budget.png",
            "traces.png",
            "theta0_seed0.ckpt",
            "train_log_seed0.csv",
            "dumps/predictions_meta_1day_seed0.csv",
            "dumps/predictions_ha_5day_seed0.csv",
        ):
            assert (bench_out / rel).exists(), rel

    def test_baseline_toggles_respected(self, tmp_path):
        out = tmp_path / "out"
        config = write_config(
            tmp_path / "c.json",
            out,
            run_ft=False,
            run_ha=False,
            train_day_budgets=[1],
            meta={"max_iterations": 10, "eval_every": 5, "patience": 1,
                  "k_support": 8, "k_query": 8},
        )
        assert main(["bench", "--config", str(config)]) == 0
        lines = (out / "bench_cells.csv").read_text().splitlines()
        models = {l.split(",")[0] for l in lines[1:]}
        assert models == {"meta", "plain"}

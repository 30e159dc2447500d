"""Evaluation metrics and report rendering."""

from __future__ import annotations

import math

import numpy as np
import pytest

from metalstm.errors import ValidationError
from metalstm.metrics import (
    EvalReport,
    mae,
    render_report_csv,
    render_station_csv,
    render_table,
    rmse,
    score_rows,
    wmape,
)


class TestRmse:
    def test_perfect_prediction(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_frozen_value(self):
        assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(math.sqrt(12.5), abs=1e-15)

    def test_single_element(self):
        assert rmse([5.0], [3.0]) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            rmse([1.0, 2.0], [1.0])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            rmse([], [])


class TestMae:
    def test_perfect_prediction(self):
        assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_frozen_value(self):
        assert mae([3.0, 4.0], [0.0, 0.0]) == 3.5

    def test_never_exceeds_rmse(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 40))
            y = rng.uniform(0, 100, size=n)
            p = rng.uniform(0, 100, size=n)
            assert mae(y, p) <= rmse(y, p) + 1e-12


class TestWmape:
    def test_perfect_prediction(self):
        assert wmape([10.0, 20.0], [10.0, 20.0]) == 0.0

    def test_frozen_value(self):
        assert wmape([10.0, 20.0, 30.0], [12.0, 18.0, 33.0]) == pytest.approx(
            7.0 / 60.0, abs=1e-15
        )

    def test_zero_actual_with_zero_prediction(self):
        assert wmape([0.0, 10.0], [0.0, 5.0]) == 0.5

    def test_all_zero_actuals_rejected(self):
        with pytest.raises(ValidationError, match="undefined"):
            wmape([0.0, 0.0], [1.0, 2.0])

    def test_simplified_form_matches_literal_weighted_form(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            y = rng.uniform(0.5, 200.0, size=n)
            p = rng.uniform(0.0, 220.0, size=n)
            literal = float(
                np.sum((y / np.sum(y)) * (np.abs(y - p) / y))
            )
            assert wmape(y, p) == pytest.approx(literal, abs=1e-12)


class TestScaleBehavior:
    def test_rmse_mae_scale_equivariant_wmape_invariant(self):
        rng = np.random.default_rng(4)
        y = rng.uniform(1, 50, size=20)
        p = rng.uniform(0, 55, size=20)
        for k in (0.5, 3.0, 117.0):
            assert rmse(k * y, k * p) == pytest.approx(k * rmse(y, p), rel=1e-12)
            assert mae(k * y, k * p) == pytest.approx(k * mae(y, p), rel=1e-12)
            assert wmape(k * y, k * p) == pytest.approx(wmape(y, p), rel=1e-12)


class TestScoreRows:
    def rows(self):
        return [
            ("a", 5, 1, 10.0, 12.0),
            ("a", 5, 2, 20.0, 18.0),
            ("b", 5, 1, 30.0, 33.0),
        ]

    def test_overall_pools_all_rows(self):
        report = score_rows("meta", 3, self.rows())
        assert report.model == "meta"
        assert report.train_days == 3
        assert report.n == 3
        assert report.wmape == pytest.approx(7.0 / 60.0)
        assert report.rmse >= report.mae >= 0.0

    def test_station_breakdown(self):
        report = score_rows("meta", 3, self.rows())
        assert [s.station_id for s in report.stations] == ["a", "b"]
        a, b = report.stations
        assert a.n == 2 and b.n == 1
        assert b.mae == 3.0
        assert a.wmape == pytest.approx(4.0 / 30.0)

    def test_empty_rows_rejected(self):
        with pytest.raises(ValidationError):
            score_rows("meta", 1, [])


class TestRendering:
    def reports(self):
        return [
            EvalReport(model="ha", train_days=1, rmse=9.0, mae=7.0, wmape=0.3, n=10),
            EvalReport(model="meta", train_days=1, rmse=3.0, mae=2.0, wmape=0.1, n=10),
            EvalReport(model="plain", train_days=1, rmse=6.0, mae=4.0, wmape=0.2, n=10),
        ]

    def test_csv_sorted_by_wmape(self):
        lines = render_report_csv(self.reports()).splitlines()
        assert lines[0] == "model,train_days,rmse,mae,wmape,n"
        assert [l.split(",")[0] for l in lines[1:]] == ["meta", "plain", "ha"]

    def test_csv_round_trips_floats(self):
        line = render_report_csv(self.reports()).splitlines()[1]
        cells = line.split(",")
        assert float(cells[2]) == 3.0 and float(cells[4]) == 0.1

    def test_station_csv_lists_all_stations(self):
        report = score_rows("meta", 1, [("a", 5, 1, 10.0, 12.0), ("b", 5, 1, 30.0, 33.0)])
        text = render_station_csv([report])
        assert "meta,1,a," in text and "meta,1,b," in text

    def test_table_is_aligned_and_complete(self):
        text = render_table(self.reports())
        lines = text.splitlines()
        assert lines[0].split() == ["model", "train_days", "RMSE", "MAE", "WMAPE", "n"]
        assert len(lines) == 2 + 3
        assert all(len(l) <= len(lines[1]) for l in lines)
        assert "meta" in text and "0.1000" in text

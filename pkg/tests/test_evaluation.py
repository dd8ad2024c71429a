import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epitome_svc.errors import EvaluationError, ShapeError
from epitome_svc.evaluation import (
    GRID_FIELDS, ExperimentGrid, RDCurve, bd_rate, read_curve, run_grid, write_curve,
)
from epitome_svc.fixtures import facade_texture, noise_plane

REFERENCE = [(0.4, 31.0), (0.8, 35.2), (1.5, 39.1), (2.9, 43.5)]


def scaled(curve, factor):
    return [(r * factor, p) for r, p in curve]


@st.composite
def curves(draw):
    rates = sorted(draw(st.lists(st.floats(0.05, 8.0), min_size=4, max_size=6, unique=True)))
    if min(np.diff(rates)) < 0.02:
        rates = [0.1 * (i + 1) ** 1.5 for i in range(len(rates))]
    slope = draw(st.floats(3.0, 9.0))
    offset = draw(st.floats(25.0, 35.0))
    return [(r, offset + slope * math.log2(r + 1.0)) for r in rates]


class TestBdRate:
    def test_identical(self):
        assert bd_rate(REFERENCE, REFERENCE) == pytest.approx(0.0, abs=1e-9)

    def test_doubled(self):
        assert bd_rate(scaled(REFERENCE, 2.0), REFERENCE) == pytest.approx(100.0, abs=0.1)

    def test_halved(self):
        assert bd_rate(scaled(REFERENCE, 0.5), REFERENCE) == pytest.approx(-50.0, abs=0.1)

    @given(curves(), st.floats(0.6, 1.6))
    @settings(max_examples=40)
    def test_reciprocity(self, ref, factor):
        test = [(r * factor * (1 + 0.05 * i), p) for i, (r, p) in enumerate(ref)]
        ab = bd_rate(test, ref)
        ba = bd_rate(ref, test)
        assert ab == pytest.approx(-ba / (1 + ba / 100), abs=0.1)

    @given(curves(), st.floats(0.01, 100.0))
    @settings(max_examples=40)
    def test_joint_rescaling_invariance(self, ref, factor):
        test = [(r * 1.3, p - 0.2) for r, p in ref]
        assert bd_rate(scaled(test, factor), scaled(ref, factor)) == pytest.approx(
            bd_rate(test, ref), abs=1e-6)

    def test_too_few_points(self):
        with pytest.raises(EvaluationError):
            bd_rate(REFERENCE[:3], REFERENCE[:3])

    def test_no_overlap(self):
        high = [(r, p + 50) for r, p in REFERENCE]
        with pytest.raises(EvaluationError):
            bd_rate(high, REFERENCE)

    def test_repeated_rate_rejected(self):
        with pytest.raises(ShapeError):
            RDCurve([(1.0, 30.0), (1.0, 31.0), (2.0, 33.0), (3.0, 35.0)])

    def test_non_monotone_psnr_warns(self):
        with pytest.warns(UserWarning):
            RDCurve([(1.0, 30.0), (2.0, 29.0), (3.0, 33.0), (4.0, 35.0)])


class TestCsv:
    def test_curve_round_trip(self, tmp_path):
        pts = [(0.1 + 1 / 3, 30.123456789012345), (0.9, 33.0), (1.7, 36.5), (2.2e0, 40.0)]
        write_curve(tmp_path / "c.csv", pts)
        back = read_curve(tmp_path / "c.csv")
        assert [tuple(p) for p in back.points] == pts

    def test_bad_csv(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ShapeError):
            read_curve(tmp_path / "x.csv")


class TestRunGrid:
    def test_counts_and_files(self, tmp_path):
        img = facade_texture((64, 64), seed=1)
        grid = ExperimentGrid({"f": img}, [16.0])
        res = run_grid(grid, tmp_path)
        assert len(res.rows) == 4 * 2
        assert len(res.summary) == 2
        assert {r["method"] for r in res.summary} == {"e-lle", "e-llm"}
        with open(tmp_path / "rd.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == GRID_FIELDS
        assert len(rows) == 8
        for row, mem in zip(rows, res.rows):
            assert float(row["psnr"]) == mem["psnr"]
            assert float(row["bl_rate"]) + float(row["el_rate"]) == mem["bl_rate"] + mem["el_rate"]
        assert (tmp_path / "f_baseline.dat").exists()

    def test_full_epitome_control_row(self):
        img = noise_plane((32, 32), seed=2)
        res = run_grid(ExperimentGrid({"n": img}, [0.0], methods=["e-lle"]))
        (row,) = res.summary
        assert row["epitome_pct"] == 100.0
        assert row["bd_rate"] == pytest.approx(0.0, abs=0.1)

    def test_deterministic_across_threads(self):
        img = facade_texture((64, 64), seed=2)
        grid = ExperimentGrid({"f": img}, [9.0, 25.0], quant_steps=[8.0, 16.0, 24.0, 32.0])
        a = run_grid(grid, threads=1)
        b = run_grid(grid, threads=2)
        assert a.rows == b.rows

    def test_failure_recorded(self):
        img = facade_texture((64, 64), seed=3)
        res = run_grid(ExperimentGrid({"f": img}, [-1.0, 16.0], methods=["e-llm"]))
        assert len(res.rows) == 4
        assert res.failures and res.failures[0]["eps_m"] == -1.0

    def test_empty_axis(self):
        with pytest.raises(ValueError):
            ExperimentGrid({}, [1.0])

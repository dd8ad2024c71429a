import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from epitome_svc.cli import main, toy_corpus
from epitome_svc.evaluation import write_curve
from epitome_svc.fixtures import facade_texture
from epitome_svc.image_core import downsample_2x, read_pgm, write_pgm

STATS_KEYS = {"bl_rate", "el_rate", "mask_bits", "epitome_fraction", "psnr_el"}


@pytest.fixture
def image_path(tmp_path):
    path = tmp_path / "img.pgm"
    write_pgm(path, facade_texture((64, 64), seed=4))
    return path


def test_bdrate_identical_prints_zero(tmp_path, capsys):
    write_curve(tmp_path / "a.csv", [(0.5, 30.0), (1.0, 34.0), (2.0, 38.0), (4.0, 42.0)])
    assert main(["bdrate", str(tmp_path / "a.csv"), str(tmp_path / "a.csv")]) == 0
    assert capsys.readouterr().out.strip() == "0.00"


def test_pipeline_stats_schema(image_path, tmp_path):
    out = tmp_path / "run"
    code = main(["pipeline", str(image_path), "--eps-m", "25", "--qstep", "8",
                 "--method", "e-lle", "--out-dir", str(out)])
    assert code == 0
    stats = json.loads((out / "stats.json").read_text())
    assert STATS_KEYS <= set(stats)
    for name in ("decoded_bl", "bl_up", "el_epitome", "restored_el", "epitome_mask"):
        assert (out / f"{name}.pgm").exists()


def test_epitome_then_restore(image_path, tmp_path, capsys):
    ep_dir = tmp_path / "ep"
    assert main(["epitome", str(image_path), "--eps-m", "16", "--pad", "8",
                 "--out-dir", str(ep_dir)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert 0 < stats["epitome_fraction"] <= 100
    assert stats["max_block_mse"] <= 16

    img = read_pgm(image_path)
    mask = read_pgm(ep_dir / "epitome_mask.pgm") > 127
    bl = np.round(downsample_2x(img))
    write_pgm(tmp_path / "bl.pgm", bl)
    from epitome_svc.image_core import upsample_2x
    write_pgm(tmp_path / "el.pgm", np.where(mask, img, upsample_2x(bl)))
    code = main(["restore", str(tmp_path / "el.pgm"), str(tmp_path / "bl.pgm"),
                 str(ep_dir / "epitome_mask.pgm"), "--meta", str(ep_dir / "epitome.json"),
                 "-o", str(tmp_path / "r.pgm"), "--diagnostics", str(tmp_path / "d.csv")])
    assert code == 0
    restored = read_pgm(tmp_path / "r.pgm")
    assert np.array_equal(restored[mask], img[mask])
    with open(tmp_path / "d.csv", newline="") as f:
        assert next(csv.reader(f)) == ["row", "col", "method", "distances"]


def test_sweep_toy_row_count(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--toy", "--eps-m", "16,36", "--qsteps", "8,16,24,32",
                 "--methods", "e-lle,e-llm", "--out-dir", str(out), "--seed", "3"])
    assert code == 0
    with open(out / "rd.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == len(toy_corpus(3)) * 2 * 4 * 2


def test_toy_corpus_seeded():
    a, b = toy_corpus(1), toy_corpus(1)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(toy_corpus(2)["facade"], a["facade"])


def test_input_error_exit_code(tmp_path, capsys):
    assert main(["pipeline", str(tmp_path / "missing.pgm"), "--eps-m", "4"]) == 2
    assert main(["bdrate", str(tmp_path / "missing.csv"), str(tmp_path / "missing.csv")]) == 2


def test_numerical_error_exit_code(image_path, tmp_path):
    # Without regularization the 64x64 Gram matrix of 20 neighbors is singular.
    code = main(["pipeline", str(image_path), "--eps-m", "25", "--method", "e-llm",
                 "--lam", "0", "--out-dir", str(tmp_path / "x")])
    assert code == 3


def test_unknown_flag_usage():
    proc = subprocess.run([sys.executable, "-m", "epitome_svc", "bdrate", "--nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr


def test_threads_env_fallback(monkeypatch):
    from epitome_svc.cli import default_threads
    monkeypatch.setenv("EPITOME_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("EPITOME_THREADS", "junk")
    assert default_threads() == 1

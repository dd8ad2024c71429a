"""Rate-distortion evaluation: Bjontegaard delta-rate and experiment grids."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .codec_sim import (DEFAULT_QUANT_STEPS, CodecConfig, code_base_layer, code_full_el,
                        run_pipeline)
from .epitome import generate_epitome, pad_to_block_grid
from .errors import EpitomeError, EvaluationError, ShapeError
from .image_core import PEAK, as_plane, psnr
from .restoration import Method, RestorationParams

log = logging.getLogger(__name__)

GRID_FIELDS = ["image", "eps_m", "epitome_pct", "method", "quant_step",
               "bl_rate", "el_rate", "psnr"]
BASELINE_FIELDS = ["image", "quant_step", "bl_rate", "el_rate", "psnr"]
SUMMARY_FIELDS = ["image", "eps_m", "epitome_pct", "method", "bd_rate"]


class RDPoint(NamedTuple):
    rate: float
    psnr: float


class RDCurve:
    """At least four RD points sorted by strictly increasing rate."""

    def __init__(self, points: Sequence):
        pts = sorted(RDPoint(float(r), float(p)) for r, p in points)
        if len(pts) < 4:
            raise EvaluationError(f"BD-rate needs >= 4 RD points, got {len(pts)}")
        rates = np.array([p.rate for p in pts])
        if np.any(rates <= 0) or np.any(np.diff(rates) <= 0):
            raise ShapeError("RD curve rates must be positive and strictly increasing")
        if np.any(np.diff([p.psnr for p in pts]) < 0):
            warnings.warn("RD curve PSNR is not monotone in rate", stacklevel=2)
        self.points = pts

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def psnrs(self) -> np.ndarray:
        return np.array([p.psnr for p in self.points])

    def __len__(self) -> int:
        return len(self.points)

    def __repr__(self) -> str:
        return f"RDCurve({self.points!r})"


def _as_curve(c) -> RDCurve:
    return c if isinstance(c, RDCurve) else RDCurve(c)


def bd_rate(test, reference) -> float:
    """Average bit-rate difference (%) of ``test`` against ``reference`` at equal PSNR.

    Log10-rate is fitted as a cubic polynomial of PSNR for each curve and the
    fits are integrated over the common PSNR interval. Negative means savings.
    """
    test, reference = _as_curve(test), _as_curve(reference)
    lo = max(test.psnrs.min(), reference.psnrs.min())
    hi = min(test.psnrs.max(), reference.psnrs.max())
    if not hi > lo:
        raise EvaluationError("RD curves have no overlapping PSNR range")
    areas = []
    for c in (test, reference):
        poly = np.polyint(np.polyfit(c.psnrs, np.log10(c.rates), 3))
        areas.append(np.polyval(poly, hi) - np.polyval(poly, lo))
    avg = (areas[0] - areas[1]) / (hi - lo)
    return float((10.0 ** avg - 1.0) * 100.0)


# ---------------------------------------------------------------------------
# CSV I/O


def read_curve(path) -> RDCurve:
    """Read an RD curve from CSV with ``rate,psnr`` or ``bl_rate,el_rate,psnr`` columns."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    try:
        if rows and "rate" in rows[0]:
            pts = [(float(r["rate"]), float(r["psnr"])) for r in rows]
        else:
            pts = [(float(r["bl_rate"]) + float(r["el_rate"]), float(r["psnr"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ShapeError(f"{path}: not an RD curve CSV") from exc
    return RDCurve(pts)


def write_curve(path, curve) -> None:
    curve = _as_curve(curve)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["rate", "psnr"])
        for p in curve.points:
            w.writerow([repr(p.rate), repr(p.psnr)])


def _write_rows(path, fields, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_dat(path, curve, title: str = "") -> None:
    """Gnuplot-compatible two-column RD data."""
    curve = _as_curve(curve)
    with open(path, "w", encoding="utf-8") as f:
        if title:
            f.write(f"# {title}\n")
        f.write("# rate_bpp psnr_db\n")
        for p in curve.points:
            f.write(f"{p.rate!r} {p.psnr!r}\n")


# ---------------------------------------------------------------------------
# Experiment grid


@dataclass
class ExperimentGrid:
    images: dict[str, np.ndarray]
    eps_m: Sequence[float]
    quant_steps: Sequence[float] = DEFAULT_QUANT_STEPS
    methods: Sequence[Method] = (Method.LLE, Method.LLM)
    block_size: int = 8
    transform_block: int = 8
    params: RestorationParams = field(default_factory=RestorationParams)
    search_step: int = 1

    def __post_init__(self):
        self.methods = [Method.parse(m) for m in self.methods]
        if not (self.images and self.eps_m and self.quant_steps and self.methods):
            raise ValueError("experiment grid axes must be non-empty")


@dataclass
class GridResult:
    rows: list[dict]
    baseline: list[dict]
    summary: list[dict]
    failures: list[dict]


def _bpp(bits: float, image: np.ndarray) -> float:
    return bits / image.size


def run_grid(grid: ExperimentGrid, out_dir=None, threads: int = 1,
             peak: float = PEAK, epitomes: dict | None = None) -> GridResult:
    """One pipeline run per (image, eps_m, quant_step, method) cell.

    Rates are in bits per EL pixel. Epitomes are generated once per
    (image, eps_m) and base layers once per (image, quant_step). Failed cells
    are recorded and skipped. ``epitomes`` may map ``(image, eps_m)`` to an
    already generated :class:`Epitome` to skip its generation. With ``out_dir`` the CSV files ``rd.csv``,
    ``baseline.csv``, ``summary.csv`` and per-curve ``.dat`` files are written.
    """
    rows: list[dict] = []
    baseline: list[dict] = []
    failures: list[dict] = []
    cfgs = [CodecConfig(float(q), grid.transform_block) for q in grid.quant_steps]

    for name, image in grid.images.items():
        image = as_plane(image)
        bases = [code_base_layer(image, cfg, peak) for cfg in cfgs]
        for cfg, base in zip(cfgs, bases):
            full, el_rate = code_full_el(image, cfg, base[1], peak)
            baseline.append({"image": name, "quant_step": cfg.quant_step,
                             "bl_rate": _bpp(base[2], image), "el_rate": _bpp(el_rate, image),
                             "psnr": psnr(image, full, peak)})

        cache = epitomes or {}
        epitomes_here = {}
        for eps in grid.eps_m:
            try:
                ep = cache.get((name, eps))
                if ep is None:
                    ep, _, _ = generate_epitome(image, grid.block_size, float(eps),
                                                grid.search_step, peak)
                epitomes_here[eps] = pad_to_block_grid(ep, grid.transform_block)
            except (EpitomeError, ValueError) as exc:
                failures.append({"image": name, "eps_m": eps, "error": str(exc)})

        cells = [(eps, m, i) for eps in grid.eps_m if eps in epitomes_here
                 for m in grid.methods for i in range(len(cfgs))]

        def work(cell, name=name, image=image, bases=bases, epitomes=epitomes_here):
            eps, method, i = cell
            params = RestorationParams(grid.params.n, grid.params.s, grid.params.k,
                                       method, grid.params.lam)
            res = run_pipeline(image, float(eps), cfgs[i], params, grid.block_size,
                               epitome=epitomes[eps], base_layer=bases[i], peak=peak)
            return {"image": name, "eps_m": float(eps), "epitome_pct": res.stats.epitome_fraction,
                    "method": method.value, "quant_step": cfgs[i].quant_step,
                    "bl_rate": _bpp(res.stats.bl_rate, image),
                    "el_rate": _bpp(res.stats.el_rate, image), "psnr": res.psnr_el}

        def guarded(cell):
            try:
                return work(cell), None
            except (EpitomeError, ValueError) as exc:
                eps, method, i = cell
                return None, {"image": name, "eps_m": eps, "method": method.value,
                              "quant_step": cfgs[i].quant_step, "error": str(exc)}

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(guarded, cells))
        else:
            outcomes = [guarded(c) for c in cells]
        for row, err in outcomes:
            if row is not None:
                rows.append(row)
            else:
                failures.append(err)

    order = {n: i for i, n in enumerate(grid.images)}
    rows.sort(key=lambda r: (order[r["image"]], -r["epitome_pct"], r["eps_m"],
                             r["method"], r["quant_step"]))
    summary = summarize(rows, baseline)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "rd.csv", GRID_FIELDS, rows)
        _write_rows(out / "baseline.csv", BASELINE_FIELDS, baseline)
        _write_rows(out / "summary.csv", SUMMARY_FIELDS, summary)
        _write_dats(out, rows, baseline)
        if failures:
            _write_rows(out / "failures.csv", sorted({k for f in failures for k in f}), failures)
    return GridResult(rows, baseline, summary, failures)


def _curve_from_rows(rows) -> RDCurve:
    return RDCurve([(r["bl_rate"] + r["el_rate"], r["psnr"]) for r in rows])


def summarize(rows: list[dict], baseline: list[dict]) -> list[dict]:
    """BD-rate of every (image, eps_m, method) curve against the image's full-EL baseline."""
    out = []
    keys = []
    for r in rows:
        key = (r["image"], r["eps_m"], r["method"])
        if key not in keys:
            keys.append(key)
    for image, eps, method in keys:
        cell = [r for r in rows if (r["image"], r["eps_m"], r["method"]) == (image, eps, method)]
        ref = [r for r in baseline if r["image"] == image]
        try:
            value = bd_rate(_curve_from_rows(cell), _curve_from_rows(ref))
        except (EvaluationError, ShapeError) as exc:
            log.warning("BD-rate unavailable for %s eps=%s %s: %s", image, eps, method, exc)
            value = math.nan
        out.append({"image": image, "eps_m": eps, "epitome_pct": cell[0]["epitome_pct"],
                    "method": method, "bd_rate": value})
    return out


def _write_dats(out: Path, rows: list[dict], baseline: list[dict]) -> None:
    for image in dict.fromkeys(r["image"] for r in baseline):
        ref = [r for r in baseline if r["image"] == image]
        try:
            write_dat(out / f"{image}_baseline.dat", _curve_from_rows(ref), f"{image} full EL")
        except EpitomeError:
            pass
        for eps, method in dict.fromkeys((r["eps_m"], r["method"]) for r in rows
                                         if r["image"] == image):
            cell = [r for r in rows if (r["image"], r["eps_m"], r["method"]) == (image, eps, method)]
            try:
                write_dat(out / f"{image}_eps{eps:g}_{method}.dat", _curve_from_rows(cell),
                          f"{image} eps_m={eps:g} {method}")
            except EpitomeError:
                pass

"""Command-line entry point: ``epitome-svc <command> ...``.

Exit status is 0 on success, 2 on invalid input and 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .codec_sim import CodecConfig, run_pipeline
from .epitome import generate_epitome, load_epitome, pad_to_block_grid, save_epitome
from .errors import EpitomeError, NumericalError
from .evaluation import DEFAULT_QUANT_STEPS, ExperimentGrid, bd_rate, read_curve, run_grid
from .fixtures import facade_texture, periodic_plane, pseudo_periodic_texture
from .image_core import PEAK, as_plane, load_image, mse, upsample_2x, write_pgm
from .restoration import DEFAULT_LAMBDA, Method, RestorationParams, restore_el

log = logging.getLogger("epitome_svc")

EXIT_INPUT = 2
EXIT_NUMERIC = 3


def default_threads() -> int:
    value = os.environ.get("EPITOME_THREADS", "")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def toy_corpus(seed: int = 0, size: int = 64) -> dict[str, np.ndarray]:
    """Three small textured planes used by ``sweep --toy``."""
    rng = np.random.default_rng(seed)
    shape = (size, size)
    periodic = periodic_plane(shape, period=12, amplitude=50) + rng.normal(0, 3, shape)
    return {
        "facade": facade_texture(shape, seed=seed),
        "lattice": pseudo_periodic_texture(shape, seed=seed),
        "periodic": np.clip(np.round(periodic), 0, PEAK),
    }


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _restoration_params(args) -> RestorationParams:
    return RestorationParams(args.patch, args.step, args.k, args.method, args.lam)


# ---------------------------------------------------------------------------
# Commands


def cmd_epitome(args) -> int:
    image = load_image(args.image, args.block_size)
    ep, amap, ml = generate_epitome(image, args.block_size, args.eps_m, args.search_step)
    if args.pad:
        ep = pad_to_block_grid(ep, args.pad)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_epitome(ep, amap, out / "epitome_mask.pgm", out / "epitome.json")
    stats = {
        "image": str(args.image),
        "shape": list(image.shape),
        "eps_m": args.eps_m,
        "epitome_fraction": ep.fraction,
        "n_charts": ep.n_charts,
        "match_entries": ml.n_entries,
        "max_block_mse": float(np.max(amap.mse)),
        "reconstruction_mse": float(np.mean(amap.mse)),
    }
    print(json.dumps(stats, indent=1, sort_keys=True))
    return 0


def cmd_restore(args) -> int:
    el = load_image(args.el_epitome)
    bl = load_image(args.bl)
    bl_up = upsample_2x(bl) if bl.shape != el.shape else bl
    if bl_up.shape != el.shape:
        raise EpitomeError(f"base layer {bl.shape} does not match EL {el.shape}")
    ep, _ = load_epitome(args.mask, args.meta)
    diagnostics = [] if args.diagnostics else None
    out = restore_el(bl_up, el, ep.mask, _restoration_params(args), threads=args.threads,
                     diagnostics=diagnostics)
    write_pgm(args.output, out)
    if diagnostics is not None:
        with open(args.diagnostics, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["row", "col", "method", "distances"])
            for d in diagnostics:
                w.writerow([d["row"], d["col"], d["method"],
                            " ".join(f"{v:.6g}" for v in d["distances"])])
    return 0


def cmd_pipeline(args) -> int:
    image = load_image(args.image, 2 * max(args.block_size, args.transform))
    cfg = CodecConfig(args.qstep, args.transform)
    res = run_pipeline(image, args.eps_m, cfg, _restoration_params(args), args.block_size,
                       search_step=args.search_step, threads=args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "decoded_bl.pgm", res.decoded_bl)
    write_pgm(out / "bl_up.pgm", res.bl_up)
    write_pgm(out / "el_epitome.pgm", res.el_epitome_plane)
    write_pgm(out / "restored_el.pgm", res.restored_el)
    write_pgm(out / "epitome_mask.pgm", res.epitome.mask * 255.0)
    stats = res.stats_json()
    stats.update(image=str(args.image), eps_m=args.eps_m, quant_step=args.qstep,
                 method=Method.parse(args.method).value,
                 el_mse=mse(image, np.round(res.restored_el)))
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    print(json.dumps({k: stats[k] for k in ("bl_rate", "el_rate", "mask_bits",
                                            "epitome_fraction", "psnr_el")}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    images = toy_corpus(args.seed, args.toy_size) if args.toy else {}
    for path in args.images:
        images[Path(path).stem] = load_image(path, 2 * max(args.block_size, args.transform))
    if not images:
        raise EpitomeError("no images given (pass paths or --toy)")
    base = _restoration_params(args)
    grid = ExperimentGrid(images, _floats(args.eps_m), _floats(args.qsteps),
                          [m for m in args.methods.split(",") if m], args.block_size,
                          args.transform, base, args.search_step)
    res = run_grid(grid, args.out_dir, threads=args.threads)
    for row in res.summary:
        print(f"{row['image']}\teps_m={row['eps_m']:g}\tepitome={row['epitome_pct']:.2f}%"
              f"\t{row['method']}\tBD-rate={row['bd_rate']:+.2f}%")
    print(f"{len(res.rows)} rows, {len(res.failures)} failures -> {args.out_dir}")
    return 0


def cmd_bdrate(args) -> int:
    print(f"{bd_rate(read_curve(args.test), read_curve(args.reference)):.2f}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_restoration_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", default="e-lle", type=Method.parse,
                   help="e-lle or e-llm (default e-lle)")
    p.add_argument("--patch", type=int, default=8, help="restoration patch size N")
    p.add_argument("--step", type=int, default=3, help="overlap step s")
    p.add_argument("-k", type=int, default=20, help="nearest neighbors K")
    p.add_argument("--lam", type=float, default=DEFAULT_LAMBDA, help="regularization weight")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $EPITOME_THREADS or 1)")
    common.add_argument("--seed", type=int, default=0, help="seed for generated fixtures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="epitome-svc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("epitome", parents=[common], help="generate an epitome and print stats")
    p.add_argument("image")
    p.add_argument("--eps-m", type=float, required=True)
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--search-step", type=int, default=1)
    p.add_argument("--pad", type=int, default=0, help="pad charts to this codec block size")
    p.add_argument("--out-dir", default="epitome_out")
    p.set_defaults(func=cmd_epitome)

    p = sub.add_parser("restore", parents=[common], help="restore the non-epitome EL pixels")
    p.add_argument("el_epitome", help="EL plane holding decoded epitome blocks")
    p.add_argument("bl", help="decoded base layer (half or full EL resolution)")
    p.add_argument("mask", help="epitome mask PGM")
    p.add_argument("--meta", default=None, help="epitome JSON metadata")
    p.add_argument("-o", "--output", default="restored_el.pgm")
    p.add_argument("--diagnostics", default=None, help="per-patch CSV")
    _add_restoration_args(p)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("pipeline", parents=[common], help="single end-to-end coding run")
    p.add_argument("image")
    p.add_argument("--eps-m", type=float, required=True)
    p.add_argument("--qstep", type=float, default=8.0)
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--transform", type=int, default=8, help="codec transform block size")
    p.add_argument("--search-step", type=int, default=1)
    p.add_argument("--out-dir", default="pipeline_out")
    _add_restoration_args(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", parents=[common], help="eps_m x quant_step x method grid")
    p.add_argument("images", nargs="*")
    p.add_argument("--toy", action="store_true", help="add the 3-image generated corpus")
    p.add_argument("--toy-size", type=int, default=64)
    p.add_argument("--eps-m", default="9,25", help="comma-separated thresholds")
    p.add_argument("--qsteps", default=",".join(f"{q:g}" for q in DEFAULT_QUANT_STEPS))
    p.add_argument("--methods", default="e-lle,e-llm")
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--transform", type=int, default=8)
    p.add_argument("--search-step", type=int, default=1)
    p.add_argument("--out-dir", default="sweep_out")
    _add_restoration_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bdrate", parents=[common], help="BD-rate (%%) of TEST against REFERENCE")
    p.add_argument("test")
    p.add_argument("reference")
    p.set_defaults(func=cmd_bdrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is None:
        args.threads = default_threads()
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (EpitomeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

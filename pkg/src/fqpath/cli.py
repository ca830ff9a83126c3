"""Command line entry point: ``fqpath <subcommand> ...``.

Exit status: 0 success or gate pass, 1 usage error, 2 I/O or data error,
3 gate fail. Options may also come from a JSON ``--config`` file whose keys are
the fields of :class:`RunConfig`; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import evaluation, hvsm, projection, scoring, wsi
from ._io import atomic_write_text
from .errors import FQPathError
from .optics import PsfModel

log = logging.getLogger("fqpath")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATE = 0, 1, 2, 3
BENCH_SIZES = (64, 128, 256, 512, 1024, 2048)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every option that a config file may set."""

    na: float = 0.75
    refractive_index: float = 1.0
    wavelength: float = 550e-9
    quadrature_nodes: int = 128
    pixel_pitch: float = hvsm.DEFAULT_PIXEL_PITCH
    z_star: float = hvsm.DEFAULT_Z_STAR
    order_count: int = hvsm.DEFAULT_ORDER_COUNT
    cutoff: float = hvsm.DEFAULT_CUTOFF
    half_length: int = hvsm.DEFAULT_HALF_LENGTH
    kernel: str | None = None
    projection: str | None = None
    moment_order: int = 2
    retention: tuple = (0.25, 60.0, 0.095, 0.09)
    percentile: float = 0.95
    max_mean: float = 0.92
    min_std: float = 0.02
    patch: int = wsi.DEFAULT_PATCH
    threshold: float = wsi.DEFAULT_THRESHOLD
    pass_ratio: float = 0.5
    jobs: int = 1
    block: int = 16
    z_cap: float = 8.0
    out: str | None = None
    out_png: str | None = None
    out_csv: str | None = None
    out_curve: str | None = None

    def __post_init__(self):
        if int(self.jobs) != self.jobs or self.jobs < 1:
            raise UsageError(f"jobs must be an integer >= 1, got {self.jobs}")
        if int(self.patch) != self.patch or self.patch < scoring.MIN_PATCH_SIZE:
            raise UsageError(f"patch must be an integer >= {scoring.MIN_PATCH_SIZE}, got {self.patch}")
        if int(self.block) != self.block or self.block < 1:
            raise UsageError(f"block must be an integer >= 1, got {self.block}")
        if not 0.0 <= self.pass_ratio <= 1.0:
            raise UsageError(f"pass_ratio must lie in [0, 1], got {self.pass_ratio}")

    def psf_model(self) -> PsfModel:
        return PsfModel(numerical_aperture=self.na, refractive_index=self.refractive_index,
                        wavelength=self.wavelength, quadrature_nodes=self.quadrature_nodes)

    def scoring_params(self) -> scoring.ScoringParams:
        return scoring.ScoringParams(moment_order=self.moment_order, retention=tuple(self.retention),
                                     percentile=self.percentile)

    def tissue_config(self) -> wsi.TissueConfig:
        return wsi.TissueConfig(max_mean=self.max_mean, min_std=self.min_std)


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"config {path} must hold a JSON object")
    unknown = sorted(set(obj) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return obj


def _run_config(args) -> RunConfig:
    merged = _load_config(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if "retention" in merged:
        merged["retention"] = tuple(merged["retention"])
    return RunConfig(**merged)


# ----------------------------------------------------------------------------
# helpers

def _require_file(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")


def _require_out(path, what):
    if path is None:
        return
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise DataError(f"directory for {what} does not exist: {parent}")


def _emit_json(obj, out=None):
    text = json.dumps(obj, indent=2, allow_nan=False, default=_json_default) + "\n"
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None


def _kernel(cfg: RunConfig) -> hvsm.HvsmKernel:
    if cfg.kernel:
        return hvsm.load_kernel(cfg.kernel)
    log.info("no --kernel given; synthesizing from the optics settings")
    return _synthesize(cfg)


def _synthesize(cfg: RunConfig) -> hvsm.HvsmKernel:
    return hvsm.synthesize_kernel(cfg.psf_model(), z_star=cfg.z_star, order_count=cfg.order_count,
                                  cutoff=cfg.cutoff, half_length=cfg.half_length,
                                  pixel_pitch=cfg.pixel_pitch)


def parse_levels(text: str) -> list:
    """``"0..8"`` (inclusive integer range) or a comma list such as ``"0,0.5,1"``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad level list {text!r}; use lo..hi or a comma list") from None


def parse_grid(text: str) -> np.ndarray:
    """``"lo:hi:step"``, inclusive of ``hi`` when it lies on the grid."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"bad grid {text!r}; use lo:hi:step") from None
    if not (step > 0 and hi >= lo):
        raise UsageError(f"bad grid {text!r}; need step > 0 and hi >= lo")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def _read_csv(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _float_column(rows, column, path):
    out = []
    for line, row in enumerate(rows, start=2):
        try:
            out.append(float(row[column]))
        except (TypeError, ValueError):
            raise DataError(f"{path}:{line}: bad {column} value {row[column]!r}") from None
    return out


def _write_csv(path, header, rows):
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    if path:
        atomic_write_text(path, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())


# ----------------------------------------------------------------------------
# subcommands

def cmd_synth_kernel(args, cfg: RunConfig) -> int:
    out = cfg.out
    if out is None:
        raise UsageError("--out is required")
    _require_out(out, "--out")
    kernel = _synthesize(cfg)
    hvsm.save_kernel(kernel, out)
    log.info("kernel: %d taps, fit band limit %.4f, residual %.3g", kernel.taps.size,
             kernel.fit_band_limit, kernel.fit_residual)
    return EXIT_OK


def cmd_score(args, cfg: RunConfig) -> int:
    paths = list(args.images)
    if args.list:
        _require_file(args.list, "--list")
        base = os.path.dirname(os.path.abspath(args.list))
        rows = _read_csv(args.list, ["path"])
        paths += [os.path.join(base, row["path"]) for row in rows]
        shown = [row["path"] for row in rows]
    else:
        shown = []
    shown = list(args.images) + shown
    if not paths:
        raise UsageError("give image paths or --list")
    for p in paths:
        _require_file(p, "image")
    if cfg.kernel:
        _require_file(cfg.kernel, "--kernel")
    if cfg.projection:
        _require_file(cfg.projection, "--projection")
    _require_out(cfg.out, "--out")

    kernel = _kernel(cfg)
    params = cfg.scoring_params()
    model = projection.load_projection(cfg.projection) if cfg.projection else None
    rows = []
    for name, path in zip(shown, paths):
        with wsi.open_slide(path) as reader:
            image = reader.read_band(0, reader.shape[0])
        result = scoring.score_patch(image, kernel, params)
        proj = projection.project_score(model, result.raw) if model else float("nan")
        rows.append([name, repr(result.raw), repr(proj) if model else "", result.n_retained,
                     repr(result.sigma95), int(result.degenerate)])
    _write_csv(cfg.out, ["path", "raw_score", "projected_score", "n_retained", "sigma95", "degenerate_flag"],
               rows)
    return EXIT_OK


def cmd_heatmap(args, cfg: RunConfig) -> int:
    _require_file(args.image, "image")
    if cfg.kernel:
        _require_file(cfg.kernel, "--kernel")
    _require_file(cfg.projection, "--projection")
    for key in ("out_png", "out_csv", "out_curve", "out"):
        _require_out(getattr(cfg, key), "--" + key.replace("_", "-"))

    kernel = _kernel(cfg)
    model = projection.load_projection(cfg.projection)
    start = time.perf_counter()
    grid = wsi.tile_and_score(args.image, kernel, cfg.scoring_params(), model, cfg.tissue_config(),
                              patch_size=cfg.patch, jobs=cfg.jobs,
                              slide_id=os.path.splitext(os.path.basename(args.image))[0])
    elapsed = time.perf_counter() - start
    decision = wsi.decide(grid, cfg.threshold, cfg.pass_ratio)
    if cfg.out_curve and decision.no_tissue:
        # checked before any file is written so a failed run leaves nothing behind
        raise DataError("no tissue tiles: cannot write a cumulative curve")
    if cfg.out_png:
        wsi.save_png(wsi.render_heatmap(grid, cfg.z_cap, cfg.block), cfg.out_png)
    if cfg.out_csv:
        wsi.write_tiles_csv(grid, cfg.out_csv)
    if cfg.out_curve:
        wsi.write_curve_csv(*wsi.cumsum_curve(grid), cfg.out_curve)
    summary = {
        "slide_id": grid.slide_id,
        "rows": grid.rows,
        "cols": grid.cols,
        "patch_size": grid.patch_size,
        "n_tissue_tiles": decision.n_tissue_tiles,
        "acceptance_ratio": decision.acceptance_ratio,
        "threshold": decision.threshold,
        "pass_ratio": cfg.pass_ratio,
        "passed": decision.passed,
        "no_tissue": decision.no_tissue,
        "seconds": round(elapsed, 3),
    }
    _emit_json(summary, cfg.out)
    if args.gate and not decision.passed:
        return EXIT_GATE
    return EXIT_OK


def cmd_fit_projection(args, cfg: RunConfig) -> int:
    _require_file(args.training, "--training")
    if cfg.out is None:
        raise UsageError("--out is required")
    _require_out(cfg.out, "--out")
    window = parse_levels(args.window.replace(":", ".."))
    profiles = projection.read_training_csv(args.training)
    model = projection.fit_projection(profiles, window=(window[0], window[-1]))
    projection.save_projection(model, cfg.out)
    log.info("projection: a*=%.6g b*=%.6g c*=%.6g", model.a_star, model.b_star, model.c_star)
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    _require_file(args.pred, "--pred")
    _require_file(args.truth, "--truth")
    _require_out(cfg.out, "--out")
    pred_rows = _read_csv(args.pred, ["path", args.column])
    truth_rows = _read_csv(args.truth, ["path", "z"])
    truth = dict(zip((r["path"] for r in truth_rows), _float_column(truth_rows, "z", args.truth)))
    preds = _float_column(pred_rows, args.column, args.pred)
    x, y = [], []
    for row, value in zip(pred_rows, preds):
        key = row["path"]
        if key not in truth:
            key = os.path.basename(key)
        if key not in truth:
            raise DataError(f"{args.pred}: no truth label for {row['path']!r}")
        x.append(value)
        y.append(abs(truth[key]))
    report = evaluation.correlation_report(x, y, use_logistic=args.logistic)
    _emit_json(report.as_dict(), cfg.out)
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    if not os.path.isdir(args.slides):
        raise DataError(f"--slides is not a directory: {args.slides}")
    _require_file(args.subjective, "--subjective")
    _require_out(cfg.out, "--out")
    grid = parse_grid(args.grid)
    subj_rows = _read_csv(args.subjective, ["slide_id", "acceptance_ratio"])
    ratios = _float_column(subj_rows, "acceptance_ratio", args.subjective)
    slide_scores = []
    for row in subj_rows:
        path = os.path.join(args.slides, row["slide_id"] + ".csv")
        if not os.path.isfile(path):
            raise DataError(f"no tile CSV for slide {row['slide_id']!r} in {args.slides}")
        tiles = _read_csv(path, ["tissue", "projected_score"])
        slide_scores.append([float(t["projected_score"]) for t in tiles
                             if t["tissue"] == "1" and t["projected_score"] != ""])
    best, curve = evaluation.threshold_sweep(slide_scores, ratios, grid)
    _emit_json({
        "best_threshold": best,
        "best_plcc": _finite_or_none(curve[int(np.argmin(np.abs(grid - best)))]),
        "grid": [float(t) for t in grid],
        "plcc": [_finite_or_none(v) for v in curve],
    }, cfg.out)
    return EXIT_OK


def cmd_make_ladder(args, cfg: RunConfig) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    levels = parse_levels(args.levels)
    parent = os.path.dirname(os.path.abspath(args.out))
    if not os.path.isdir(parent):
        raise DataError(f"parent of --out does not exist: {parent}")
    items = evaluation.make_blur_ladder(args.seed, args.count, levels, size=args.size, mode=args.mode,
                                        model=cfg.psf_model())
    labels = evaluation.write_ladder(items, args.out)
    log.info("wrote %d images and %s", len(items), labels)
    return EXIT_OK


def run_bench(size: int, iters: int, seed: int = 0, kernel=None, params=None) -> dict:
    """Score ``iters`` random textures of ``size`` x ``size`` and time each call."""
    if size not in BENCH_SIZES:
        raise UsageError(f"size must be one of {BENCH_SIZES}")
    if iters < 1:
        raise UsageError("iters must be >= 1")
    kernel = hvsm.synthesize_kernel() if kernel is None else kernel
    params = scoring.ScoringParams() if params is None else params
    rng = np.random.default_rng(seed)
    scoring.score_patch(evaluation.make_texture(rng, size), kernel, params)  # warm caches
    samples = []
    for _ in range(iters):
        image = evaluation.make_texture(rng, size)
        start = time.perf_counter()
        scoring.score_patch(image, kernel, params)
        samples.append(time.perf_counter() - start)
    mean = float(np.mean(samples))
    return {
        "size": size,
        "iters": iters,
        "mean_s": mean,
        "min_s": float(np.min(samples)),
        "per_pixel_s": mean / (size * size),
        "samples": samples,
    }


def cmd_bench(args, cfg: RunConfig) -> int:
    _require_out(cfg.out, "--out")
    if args.size not in BENCH_SIZES:
        raise UsageError(f"--size must be one of {BENCH_SIZES}")
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    kernel = _kernel(cfg)
    _emit_json(run_bench(args.size, args.iters, args.seed, kernel, cfg.scoring_params()), cfg.out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_optics(p):
    g = p.add_argument_group("optics and kernel")
    g.add_argument("--na", type=float, help="numerical aperture (default 0.75)")
    g.add_argument("--refractive-index", type=float, help="immersion refractive index (default 1.0)")
    g.add_argument("--wavelength", type=float, help="wavelength in meters (default 550e-9)")
    g.add_argument("--quadrature-nodes", type=int, help="pupil quadrature nodes (default 128)")
    g.add_argument("--pixel-pitch", type=float, help="pixel pitch in meters (default 0.25e-6)")
    g.add_argument("--z-star", type=float, help="defocus of the inverted PSF in depth units (default 4)")
    g.add_argument("--order-count", type=int, help="number of even-derivative basis filters (default 7)")
    g.add_argument("--cutoff", type=float, help="basis cutoff frequency in rad/sample (default 2)")
    g.add_argument("--half-length", type=int, help="kernel half length in taps (default 37)")


def _add_scoring(p):
    g = p.add_argument_group("scoring")
    g.add_argument("--kernel", help="kernel JSON from synth-kernel (synthesized if omitted)")
    g.add_argument("--moment-order", type=int, help="central moment order (default 2)")
    g.add_argument("--percentile", type=float, help="response percentile for retention (default 0.95)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fqpath", description="No-reference focus quality scoring for slide images.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON file of RunConfig keys; flags override it")
        p.set_defaults(func=func)
        return p

    p = command("synth-kernel", cmd_synth_kernel, "Synthesize the deblurring kernel and save it as JSON.")
    _add_optics(p)
    p.add_argument("--out", help="output kernel JSON")

    p = command("score", cmd_score, "Score whole images as single patches.")
    p.add_argument("images", nargs="*", help="image files")
    p.add_argument("--list", help="CSV with a path column (for example a ladder labels.csv)")
    p.add_argument("--projection", help="projection JSON; adds projected_score")
    p.add_argument("--out", help="output CSV (stdout if omitted)")
    _add_scoring(p)
    _add_optics(p)

    p = command("heatmap", cmd_heatmap, "Tile, score and gate a whole-slide image.")
    p.add_argument("image", help="PNG or TIFF slide")
    p.add_argument("--projection", help="projection JSON (required)")
    p.add_argument("--patch", type=int, help="tile size in pixels (default 1024)")
    p.add_argument("--threshold", type=float, help="acceptance threshold (default 1.7688)")
    p.add_argument("--pass-ratio", type=float, help="acceptance ratio needed to pass (default 0.5)")
    p.add_argument("--max-mean", type=float, help="tissue rule: maximum mean intensity (default 0.92)")
    p.add_argument("--min-std", type=float, help="tissue rule: minimum standard deviation (default 0.02)")
    p.add_argument("--block", type=int, help="heatmap pixels per tile (default 16)")
    p.add_argument("--z-cap", type=float, help="projected score shown as pure blue (default 8)")
    p.add_argument("--jobs", type=int, help="tile worker threads (default 1)")
    p.add_argument("--out-png", help="heatmap PNG")
    p.add_argument("--out-csv", help="per-tile CSV")
    p.add_argument("--out-curve", help="cumulative curve CSV")
    p.add_argument("--out", help="summary JSON (stdout if omitted)")
    p.add_argument("--gate", action="store_true", help="exit 3 when the slide fails")
    _add_scoring(p)
    _add_optics(p)

    p = command("fit-projection", cmd_fit_projection, "Fit the inverse Gaussian projection.")
    p.add_argument("--training", help="CSV with profile_id, z, raw_score")
    p.add_argument("--window", default="-3:3", help="integer z window lo:hi (default -3:3)")
    p.add_argument("--out", help="output projection JSON")

    p = command("eval", cmd_eval, "Correlate predictions with |z| labels.")
    p.add_argument("--pred", help="CSV with path and a score column")
    p.add_argument("--truth", help="CSV with path, z")
    p.add_argument("--column", default="raw_score", help="prediction column (default raw_score)")
    p.add_argument("--logistic", action="store_true", help="logistic mapping before PLCC and RMSE")
    p.add_argument("--out", help="report JSON (stdout if omitted)")

    p = command("sweep", cmd_sweep, "Find the acceptance threshold that best matches subjective ratios.")
    p.add_argument("--slides", help="directory of per-slide tile CSVs named <slide_id>.csv")
    p.add_argument("--subjective", help="CSV with slide_id, acceptance_ratio")
    p.add_argument("--grid", default="0:8:0.01", help="threshold grid lo:hi:step (default 0:8:0.01)")
    p.add_argument("--out", help="result JSON (stdout if omitted)")

    p = command("make-ladder", cmd_make_ladder, "Generate a synthetic defocus ladder with labels.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10, help="number of textures")
    p.add_argument("--levels", default="0..8", help="lo..hi or comma list of depth levels")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--mode", choices=("psf", "gaussian"), default="psf")
    p.add_argument("--out", required=True, help="output directory")
    _add_optics(p)

    p = command("bench", cmd_bench, "Time patch scoring on random textures.")
    p.add_argument("--size", type=int, default=1024)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report JSON (stdout if omitted)")
    _add_scoring(p)
    _add_optics(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"fqpath: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FQPathError, OSError, ValueError) as exc:
        print(f"fqpath: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

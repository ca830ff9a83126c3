"""Accuracy harness: correlations, logistic-mapped RMSE, significance, threshold
sweeps and a synthetic defocus ladder."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage, signal, stats

from ._io import atomic_write_bytes, atomic_write_text
from ._lm import levenberg_marquardt
from .errors import FQPathError
from .optics import PsfModel, psf_sampled_plane

__all__ = [
    "DegenerateInputError",
    "PairedSamples",
    "CorrelationReport",
    "LogisticFit",
    "SignificanceResult",
    "plcc",
    "srcc",
    "krcc",
    "krcc_bruteforce",
    "rmse_after_fit",
    "correlation_report",
    "significance_test",
    "acceptance_ratio",
    "threshold_sweep",
    "make_texture",
    "blur_image",
    "make_blur_ladder",
    "write_ladder",
    "LadderItem",
    "write_synthetic_slide",
]


class DegenerateInputError(FQPathError, ValueError):
    """Input has no variance (or no ranks) where a statistic needs some."""


@dataclass(frozen=True)
class PairedSamples:
    predictions: np.ndarray
    truths: np.ndarray

    def __post_init__(self):
        p = np.array(self.predictions, dtype=float).ravel()
        t = np.array(self.truths, dtype=float).ravel()
        if p.size == 0 or p.size != t.size:
            raise ValueError(f"need equal nonzero lengths, got {p.size} and {t.size}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
            raise ValueError("samples must be finite")
        p.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "truths", t)

    def __len__(self):
        return self.predictions.size


def _paired(samples, truths=None) -> PairedSamples:
    if isinstance(samples, PairedSamples):
        return samples
    return PairedSamples(samples, truths)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("correlation undefined: a sequence has zero variance")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def plcc(samples, truths=None) -> float:
    """Pearson linear correlation."""
    s = _paired(samples, truths)
    if len(s) < 3:
        raise ValueError("plcc needs at least 3 samples")
    return _pearson(s.predictions, s.truths)


def srcc(samples, truths=None) -> float:
    """Spearman correlation: Pearson of average ranks."""
    s = _paired(samples, truths)
    if len(s) < 3:
        raise ValueError("srcc needs at least 3 samples")
    return _pearson(stats.rankdata(s.predictions), stats.rankdata(s.truths))


def _tie_pairs(sorted_values: np.ndarray) -> int:
    _, counts = np.unique(sorted_values, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _count_inversions(values: list) -> int:
    """Strict inversions (i < j, v[i] > v[j]) by bottom-up merge sort."""
    n = len(values)
    src = list(values)
    dst = [None] * n
    swaps = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[i] <= src[j]:
                    dst[k] = src[i]
                    i += 1
                else:
                    dst[k] = src[j]
                    swaps += mid - i
                    j += 1
                k += 1
            dst[k:hi] = src[i:mid] + src[j:hi] if i < mid else src[j:hi]
        src, dst = dst, src
        width *= 2
    return swaps


def krcc(samples, truths=None) -> float:
    """Kendall tau-b in O(n log n).

    Pairs are sorted by (prediction, truth); discordant pairs are the strict
    inversions of the truth sequence in that order.
    """
    s = _paired(samples, truths)
    n = len(s)
    if n < 3:
        raise ValueError("krcc needs at least 3 samples")
    x, y = s.predictions, s.truths
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    total = n * (n - 1) // 2
    ties_x = _tie_pairs(xs)
    ties_y = _tie_pairs(np.sort(ys))
    joint = np.unique(np.stack([xs, ys]), axis=1, return_counts=True)[1]
    ties_xy = int(np.sum(joint * (joint - 1) // 2))
    discordant = _count_inversions(ys.tolist())
    denom = (total - ties_x) * (total - ties_y)
    if denom == 0:
        raise DegenerateInputError("krcc undefined: a sequence is entirely tied")
    concordant_minus_discordant = total - ties_x - ties_y + ties_xy - 2 * discordant
    tau = concordant_minus_discordant / math.sqrt(denom)
    return max(-1.0, min(1.0, tau))


def krcc_bruteforce(samples, truths=None) -> float:
    """O(n^2) tau-b by explicit pair enumeration; reference for :func:`krcc`."""
    s = _paired(samples, truths)
    x, y = s.predictions, s.truths
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(x.size, 1)
    dx, dy = dx[iu], dy[iu]
    num = float(np.sum(dx * dy))
    n1 = float(np.sum(dx != 0))
    n2 = float(np.sum(dy != 0))
    if n1 == 0 or n2 == 0:
        raise DegenerateInputError("krcc undefined: a sequence is entirely tied")
    return num / math.sqrt(n1 * n2)


# ----------------------------------------------------------------------------
# logistic mapping

@dataclass(frozen=True)
class LogisticFit:
    rmse: float
    plcc: float
    params: np.ndarray | None
    logistic_fitted: bool


# The best logistic-plus-linear map can sit at infinite parameters (it then
# tends to a cubic), so the fit stops once a step gains under 1e-6 of the cost.
LOGISTIC_FTOL = 1e-6
LOGISTIC_MAX_ITER = 500


def _logistic(params, x):
    b1, b2, b3, b4, b5 = params
    z = np.clip(b2 * (x - b3), -500.0, 500.0)
    return b1 * (0.5 - 1.0 / (1.0 + np.exp(z))) + b4 * x + b5


def _logistic_jac(params, x):
    b1, b2, b3, _, _ = params
    z = np.clip(b2 * (x - b3), -500.0, 500.0)
    e = np.exp(z)
    sig = 1.0 / (1.0 + e)
    dsig = e * sig * sig  # derivative of -1/(1+e^z) w.r.t. z
    return np.column_stack([
        0.5 - sig,
        b1 * dsig * (x - b3),
        -b1 * dsig * b2,
        x,
        np.ones_like(x),
    ])


def rmse_after_fit(samples, truths=None, use_logistic: bool = False) -> LogisticFit:
    """RMSE (and PLCC) of predictions against truths, optionally after a
    monotone logistic-plus-linear mapping fitted by damped Gauss-Newton.

    Non-convergence or constant predictions fall back to the unmapped values
    with ``logistic_fitted = False``.
    """
    s = _paired(samples, truths)
    x, y = s.predictions, s.truths

    def unmapped():
        rmse = float(np.sqrt(np.mean((x - y) ** 2)))
        try:
            r = _pearson(x, y)
        except DegenerateInputError:
            r = float("nan")
        return LogisticFit(rmse, r, None, False)

    if not use_logistic:
        return unmapped()
    if len(s) < 5:
        raise ValueError("the logistic mapping needs at least 5 samples")
    if np.ptp(x) == 0.0:
        return unmapped()

    slope, intercept = np.polyfit(x, y, 1)
    spread = float(np.std(x))
    direction = 1.0 if slope >= 0 else -1.0
    starts = [
        np.array([0.0, direction / spread, float(np.mean(x)), slope, intercept]),
        np.array([float(np.ptp(y)) * direction, 4.0 / float(np.ptp(x)), float(np.median(x)), 0.0,
                  float(np.mean(y))]),
    ]
    best = None
    for start in starts:
        fit = levenberg_marquardt(lambda p: _logistic(p, x) - y, lambda p: _logistic_jac(p, x), start,
                                  max_iter=LOGISTIC_MAX_ITER, ftol=LOGISTIC_FTOL)
        if fit.converged and (best is None or fit.residual_norm < best.residual_norm):
            best = fit
    if best is None:
        return unmapped()
    mapped = _logistic(best.params, x)
    rmse = float(np.sqrt(np.mean((mapped - y) ** 2)))
    try:
        r = _pearson(mapped, y)
    except DegenerateInputError:
        r = float("nan")
    return LogisticFit(rmse, r, best.params, True)


@dataclass(frozen=True)
class CorrelationReport:
    plcc: float
    srcc: float
    krcc: float
    rmse: float
    n: int
    logistic_fitted: bool

    def as_dict(self) -> dict:
        return {"plcc": self.plcc, "srcc": self.srcc, "krcc": self.krcc, "rmse": self.rmse,
                "n": self.n, "logistic_fitted": self.logistic_fitted}


def correlation_report(samples, truths=None, use_logistic: bool = False) -> CorrelationReport:
    """SRCC/KRCC on raw values; PLCC/RMSE after the optional logistic mapping."""
    s = _paired(samples, truths)
    fit = rmse_after_fit(s, use_logistic=use_logistic)
    pearson = fit.plcc if fit.logistic_fitted else plcc(s)
    return CorrelationReport(plcc=pearson, srcc=srcc(s), krcc=krcc(s), rmse=fit.rmse, n=len(s),
                             logistic_fitted=fit.logistic_fitted)


# ----------------------------------------------------------------------------
# significance

@dataclass(frozen=True)
class SignificanceResult:
    decision: int
    statistic: float
    p_value: float
    degenerate: bool = False


def significance_test(errors_a, errors_b, alpha: float = 0.05) -> SignificanceResult:
    """One-sided paired t-test on per-item squared errors.

    ``decision`` is +1 when method A has significantly smaller squared error,
    -1 when significantly larger, 0 otherwise. Differences with zero variance
    are flagged ``degenerate``; their decision follows the sign of the mean
    difference (0 when all differences vanish).
    """
    a = np.asarray(errors_a, dtype=float).ravel()
    b = np.asarray(errors_b, dtype=float).ravel()
    if a.size != b.size or a.size < 10:
        raise ValueError("need two equal-length error sequences with at least 10 items")
    d = a * a - b * b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        decision = 0 if mean == 0.0 else (1 if mean < 0.0 else -1)
        stat = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        return SignificanceResult(decision, stat, 0.0 if mean != 0.0 else 1.0, degenerate=True)
    t = mean / (sd / math.sqrt(d.size))
    dof = d.size - 1
    p_less = float(stats.t.cdf(t, dof))
    p_greater = float(stats.t.sf(t, dof))
    if p_less < alpha:
        return SignificanceResult(1, t, p_less)
    if p_greater < alpha:
        return SignificanceResult(-1, t, p_greater)
    return SignificanceResult(0, t, min(p_less, p_greater))


# ----------------------------------------------------------------------------
# threshold sweep

def acceptance_ratio(scores, threshold: float) -> float:
    """Fraction of ``scores`` at or below ``threshold``; 0 for an empty set."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        return 0.0
    return float(np.count_nonzero(scores <= threshold)) / scores.size


def threshold_sweep(slide_scores, subjective_ratios, grid):
    """PLCC between objective and subjective acceptance ratios per threshold.

    Returns ``(best_threshold, curve)`` where ``curve`` holds one PLCC per grid
    value (NaN where the objective ratios do not vary). Ties go to the smallest
    threshold.
    """
    subjective = np.asarray(subjective_ratios, dtype=float)
    if len(slide_scores) != subjective.size:
        raise ValueError("one subjective ratio per slide is required")
    if subjective.size < 10:
        raise ValueError("threshold_sweep needs at least 10 slides")
    if np.ptp(subjective) == 0.0:
        raise DegenerateInputError("subjective ratios have zero variance")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-D sequence")
    sorted_scores = [np.sort(np.asarray(s, dtype=float)) for s in slide_scores]
    curve = np.full(grid.size, np.nan)
    for i, t in enumerate(grid):
        objective = np.array([
            np.searchsorted(s, t, side="right") / s.size if s.size else 0.0 for s in sorted_scores
        ])
        if np.ptp(objective) == 0.0:
            continue
        curve[i] = _pearson(objective, subjective)
    if np.all(np.isnan(curve)):
        raise DegenerateInputError("objective ratios are constant at every threshold")
    best = int(np.nanargmax(curve))
    return float(grid[best]), curve


# ----------------------------------------------------------------------------
# synthetic defocus ladder

@dataclass(frozen=True)
class LadderItem:
    texture: int
    level: float
    image: np.ndarray


def make_texture(rng: np.random.Generator, size: int = 256, octaves: int = 5) -> np.ndarray:
    """Multi-octave band-limited noise texture as an 8-bit grayscale image.

    Octave ``o`` is white noise band-passed around 0.35 / 2^o cycles per pixel.
    Gains grow as 2^o so every octave carries about the same variance (a 1/f
    amplitude spectrum, as in natural images), each scaled by a random factor.
    The sum is mapped to a random mid-gray level and contrast.
    """
    noise = np.fft.rfft2(rng.standard_normal((size, size)))
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = 1.0
    spectrum = np.zeros_like(noise)
    for o in range(octaves):
        centre = 0.35 / 2 ** o
        band = np.exp(-0.5 * (np.log2(radius / centre) / 0.5) ** 2)
        spectrum += noise * band * rng.uniform(0.4, 1.0) * 2.0 ** o
    spectrum[0, 0] = 0.0
    field = np.fft.irfft2(spectrum, s=(size, size))
    field /= field.std()
    level = rng.uniform(0.4, 0.7)
    contrast = rng.uniform(0.08, 0.16)
    img = np.clip(level + contrast * field, 0.0, 1.0)
    return np.rint(img * 255.0).astype(np.uint8)


@lru_cache(maxsize=64)
def _unit_psf_plane(model: PsfModel, level: float, pixel_pitch: float) -> np.ndarray:
    plane = psf_sampled_plane(model, level * model.depth_unit, pixel_pitch)
    plane /= plane.sum()
    plane.flags.writeable = False
    return plane


def blur_image(image: np.ndarray, level: float, mode: str = "psf", model: PsfModel | None = None,
               pixel_pitch: float = 0.25e-6) -> np.ndarray:
    """Blur an 8-bit image by ``level``.

    ``mode="psf"``: 2-D convolution with the unit-sum PSF sampled on the pixel
    grid at ``level`` depth units of defocus, mirror boundaries.
    ``mode="gaussian"``: Gaussian of standard deviation ``level`` pixels.
    Level 0 returns an identical copy.
    """
    img = np.asarray(image)
    if level == 0:
        return img.copy()
    data = img.astype(float)
    if mode == "psf":
        plane = _unit_psf_plane(PsfModel() if model is None else model, abs(float(level)), pixel_pitch)
        half = plane.shape[0] // 2
        padded = np.pad(data, half, mode="symmetric")
        data = signal.fftconvolve(padded, plane, mode="valid")
    elif mode == "gaussian":
        data = ndimage.gaussian_filter(data, sigma=level, mode="reflect", axes=(0, 1))
    else:
        raise ValueError(f"unknown blur mode {mode!r}")
    return np.clip(np.rint(data), 0, 255).astype(np.uint8)


def make_blur_ladder(seed: int, count: int, levels, size: int = 256, mode: str = "psf",
                     model: PsfModel | None = None) -> list:
    """``count`` textures, each blurred at every level; deterministic in ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    levels = [float(v) for v in levels]
    rng = np.random.default_rng(seed)
    items = []
    for t in range(count):
        texture = make_texture(rng, size)
        for level in levels:
            items.append(LadderItem(t, level, blur_image(texture, level, mode, model)))
    return items


def write_ladder(items, out_dir) -> str:
    """Write each ladder image as PNG plus ``labels.csv`` (path, z). Returns the CSV path."""
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "z"])
    for item in items:
        name = f"tex{item.texture:04d}_z{item.level:g}.png"
        png = io.BytesIO()
        Image.fromarray(item.image).save(png, format="PNG")
        atomic_write_bytes(os.path.join(out_dir, name), png.getvalue())
        writer.writerow([name, f"{item.level:g}"])
    labels = os.path.join(out_dir, "labels.csv")
    atomic_write_text(labels, buf.getvalue())
    return labels


_STAIN = np.array([0.92, 0.72, 0.88])


def write_synthetic_slide(path, size: int = 16384, seed: int = 0, tile: int = 256,
                          region: int = 1024, levels=(0, 2, 4)) -> None:
    """Write a tiled RGB TIFF of ``size`` x ``size`` pixels without holding it in memory.

    An elliptical tissue region on a white background is filled with
    ``region``-sized texture blocks, each blurred to one of ``levels``.
    """
    import tifffile

    if size % tile or region % tile:
        raise ValueError("size and region must be multiples of tile")
    rng = np.random.default_rng(seed)
    bank = []
    for _ in range(3):
        sharp = make_texture(rng, region)
        for level in levels:
            gray = blur_image(sharp, level) / 255.0
            rgb = 255.0 - (255.0 - 255.0 * gray[..., None]) * _STAIN
            bank.append(np.rint(rgb).astype(np.uint8))
    picks = rng.integers(0, len(bank), size=(-(-size // region),) * 2)
    centre = (size - 1) / 2.0
    radius = 0.45 * size

    def tiles():
        yy, xx = np.mgrid[0:tile, 0:tile]
        for ty in range(0, size, tile):
            for tx in range(0, size, tile):
                block = bank[picks[ty // region, tx // region]]
                out = block[ty % region:ty % region + tile, tx % region:tx % region + tile].copy()
                outside = np.hypot(yy + ty - centre, xx + tx - centre) > radius
                out[outside] = 255
                yield out

    tifffile.imwrite(path, tiles(), shape=(size, size, 3), dtype=np.uint8, tile=(tile, tile),
                     photometric="rgb")

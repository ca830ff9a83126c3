"""Focus score of a single image patch.

Pipeline: unit-range grayscale, separable filtering with the HVS-M kernel along
each axis, rectification, a retention fraction driven by the 95th percentile of
the positive responses, l_1/2 pooling of the two axis features, and the
central moment of the strongest pooled responses. Lower scores are sharper.

Filtering uses the DCT-II: multiplying the transform by the kernel's cosine
response and inverting is the same as convolving with the kernel under
half-sample mirror boundaries, at O(n log n) cost per line. Column filtering is
done as row filtering of a transposed copy, which makes the score exactly
invariant under transposing the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft

from .hvsm import HvsmKernel

__all__ = [
    "ScoringParams",
    "PatchScore",
    "to_grayscale_unit",
    "decompose",
    "retention_fraction",
    "score_patch",
    "MIN_PATCH_SIZE",
]

MIN_PATCH_SIZE = 64
_BLOCK = 64


@dataclass(frozen=True)
class ScoringParams:
    """Scoring constants.

    ``retention`` holds (scale, slope, centre, offset) of
    P = scale * (1 - tanh(slope * (sigma95 - centre))) + offset.
    """

    moment_order: int = 2
    retention: tuple = (0.25, 60.0, 0.095, 0.09)
    percentile: float = 0.95
    log_floor: float = 1e-12

    def __post_init__(self):
        from .errors import InvariantError

        if int(self.moment_order) != self.moment_order or self.moment_order < 2 or self.moment_order % 2:
            raise InvariantError(f"moment_order must be an even integer >= 2, got {self.moment_order}")
        ret = tuple(float(x) for x in self.retention)
        if len(ret) != 4:
            raise InvariantError("retention needs four values (scale, slope, centre, offset)")
        scale, slope, _, offset = ret
        if not (scale > 0 and slope > 0 and offset > 0 and 2 * scale + offset <= 1.0):
            raise InvariantError(f"retention must satisfy scale, slope, offset > 0 and 2*scale + offset <= 1, got {ret}")
        if not 0 < self.percentile < 1:
            raise InvariantError(f"percentile must lie in (0, 1), got {self.percentile}")
        if not self.log_floor > 0:
            raise InvariantError(f"log_floor must be positive, got {self.log_floor}")
        object.__setattr__(self, "retention", ret)


@dataclass(frozen=True)
class PatchScore:
    raw: float
    n_retained: int
    sigma95: float
    degenerate: bool = False
    projected: float | None = None


def to_grayscale_unit(image) -> np.ndarray:
    """8-bit RGB or single-channel image to float64 luma in [0, 1]."""
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        _check_8bit(img)
        return img / 255.0
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected 1 or 3 channels, got shape {img.shape}")
    _check_8bit(img)
    # integer luma keeps the weights exact: white maps to 255000 / 255000
    luma = img[..., 0].astype(np.uint32)
    luma *= 299
    tmp = img[..., 1].astype(np.uint32)
    tmp *= 587
    luma += tmp
    np.multiply(img[..., 2], 114, out=tmp, dtype=np.uint32)
    luma += tmp
    return luma / 255000.0


def _check_8bit(img):
    if img.dtype == np.uint8:
        return
    if not np.issubdtype(img.dtype, np.integer):
        raise ValueError(f"expected an integer image with 8-bit channels, got dtype {img.dtype}")
    if img.size and (img.min() < 0 or img.max() > 255):
        raise ValueError("channel values must lie in [0, 255]")


def _transpose(a: np.ndarray) -> np.ndarray:
    """Contiguous transpose, blocked for cache locality."""
    rows, cols = a.shape
    out = np.empty((cols, rows), dtype=a.dtype)
    for i in range(0, rows, _BLOCK):
        for j in range(0, cols, _BLOCK):
            out[j:j + _BLOCK, i:i + _BLOCK] = a[i:i + _BLOCK, j:j + _BLOCK].T
    return out


@lru_cache(maxsize=32)
def _dct_response(taps_bytes: bytes, width: int) -> np.ndarray:
    half = np.frombuffer(taps_bytes, dtype=float)
    w = math.pi * np.arange(width) / width
    k = np.arange(1, half.size)
    resp = half[0] + 2.0 * np.cos(np.outer(w, k)) @ half[1:]
    # the 1 / (2 width) of the inverse transform is folded in here
    resp /= 2 * width
    resp.flags.writeable = False
    return resp


def _filter_rows(a: np.ndarray, kernel: HvsmKernel) -> np.ndarray:
    """Convolve every row of ``a`` with the kernel, mirror boundaries."""
    half = np.ascontiguousarray(kernel.taps[kernel.half_length:])
    resp = _dct_response(half.tobytes(), a.shape[1])
    coef = fft.dct(a, type=2, axis=1)
    coef *= resp
    return fft.idct(coef, type=2, axis=1, norm="forward", overwrite_x=True)


def _check_size(shape, kernel: HvsmKernel):
    if min(shape) <= kernel.half_length:
        raise ValueError(
            f"patch {shape[0]}x{shape[1]} is smaller than the kernel support "
            f"(half length {kernel.half_length})"
        )


def decompose(image, kernel: HvsmKernel):
    """Row-wise and column-wise kernel responses of a 2-D unit-range image.

    Returns ``(fx, fy)``, both the shape of ``image``. Boundaries are mirrored
    about the half-sample point (edge samples repeated).
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    _check_size(img.shape, kernel)
    fx = _filter_rows(img, kernel)
    fy = _transpose(_filter_rows(_transpose(img), kernel))
    return fx, fy


def retention_fraction(sigma95: float, params: ScoringParams = ScoringParams()) -> float:
    """Fraction of pooled responses kept, decreasing in ``sigma95``."""
    scale, slope, centre, offset = params.retention
    return scale * (1.0 - math.tanh(slope * (sigma95 - centre))) + offset


def _positive_quantile(fx: np.ndarray, fy: np.ndarray, level: float):
    """Linear-interpolation quantile of the strictly positive entries of both maps.

    Maps are already rectified. Returns ``None`` when no entry is positive.
    """
    count = int(np.count_nonzero(fx > 0.0)) + int(np.count_nonzero(fy > 0.0))
    if count == 0:
        return None
    pos = (count - 1) * level
    lo = int(math.floor(pos))
    frac = pos - lo
    # order statistics lo and lo + 1 among positives, counted from the top
    from_top = count - 1 - lo
    low, high = _upper_order_pair(fx, fy, from_top, count)
    return float(low + frac * (high - low))


def _upper_order_pair(fx, fy, from_top, count):
    """Values of descending ranks ``from_top`` and ``from_top - 1`` among the
    ``count`` positive entries (the second clamped to the maximum)."""
    need = from_top + 1
    # a threshold from a strided subsample usually isolates a small candidate set;
    # zeros are dropped first because heavy ties slow selection down
    sample = np.concatenate((fx.ravel()[::17], fy.ravel()[::17]))
    sample = sample[sample > 0.0]
    candidates = None
    if sample.size:
        frac = min(1.0, 1.5 * need / count)
        cut = sample.size - 1 - int(frac * (sample.size - 1))
        sample.partition(cut)
        threshold = sample[cut]
        candidates = np.concatenate((fx[fx >= threshold], fy[fy >= threshold]))
        if candidates.size < need:
            candidates = None
    if candidates is None:
        candidates = np.concatenate((fx[fx > 0.0], fy[fy > 0.0]))
    kth = candidates.size - need
    candidates.partition(kth)
    low = candidates[kth]
    high = candidates[kth + 1:].min() if need > 1 else low
    return low, high


def score_patch(image, kernel: HvsmKernel, params: ScoringParams = ScoringParams()) -> PatchScore:
    """Focus score of one patch; ``raw`` is lower for sharper content.

    ``image`` is an 8-bit RGB or grayscale array, or a 2-D float array that
    is already in unit range.
    """
    img = np.asarray(image)
    if img.ndim == 2 and np.issubdtype(img.dtype, np.floating):
        gray = img.astype(float, copy=False)
    else:
        gray = to_grayscale_unit(img)
    rows, cols = gray.shape
    if min(rows, cols) < MIN_PATCH_SIZE:
        raise ValueError(f"patch must be at least {MIN_PATCH_SIZE} pixels on each side, got {rows}x{cols}")
    _check_size(gray.shape, kernel)
    total = rows * cols

    fx = _filter_rows(gray, kernel)
    fy_t = _filter_rows(_transpose(gray), kernel)
    del gray
    np.maximum(fx, 0.0, out=fx)
    np.maximum(fy_t, 0.0, out=fy_t)

    sigma95 = _positive_quantile(fx, fy_t, params.percentile)
    if sigma95 is None:
        n_keep = _clamp_count(retention_fraction(0.0, params) * total, total)
        return PatchScore(raw=-math.log(params.log_floor), n_retained=n_keep, sigma95=0.0, degenerate=True)
    n_keep = _clamp_count(retention_fraction(sigma95, params) * total, total)

    # pooled (sqrt(a) + sqrt(b))^2, accumulated in the row layout
    np.sqrt(fx, out=fx)
    np.sqrt(fy_t, out=fy_t)
    pooled = fx
    pooled += _transpose(fy_t)
    del fy_t
    np.square(pooled, out=pooled)

    flat = pooled.ravel()
    flat.partition(total - n_keep)
    # sorting fixes the summation order, so the result does not depend on layout
    top = np.sort(flat[total - n_keep:])
    mean = top.mean()
    top -= mean
    np.power(top, params.moment_order, out=top)
    moment = top.mean()
    raw = -math.log(max(float(moment), params.log_floor))
    return PatchScore(raw=raw, n_retained=n_keep, sigma95=sigma95, degenerate=False)


def _clamp_count(x: float, total: int) -> int:
    return int(min(max(math.floor(x + 0.5), 1), total))

"""Whole-slide tiling, heatmaps, CDF curves and slide acceptance."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .errors import FQPathError, InvariantError
from .hvsm import HvsmKernel
from .projection import ProjectionModel, project_score
from .scoring import ScoringParams, score_patch, to_grayscale_unit

__all__ = [
    "SlideReadError",
    "TissueConfig",
    "HeatmapGrid",
    "SlideDecision",
    "SlideReader",
    "ArraySlide",
    "TiffSlide",
    "PillowSlide",
    "open_slide",
    "tissue_test",
    "tile_and_score",
    "render_heatmap",
    "cumsum_curve",
    "decide",
    "write_tiles_csv",
    "write_curve_csv",
    "save_png",
    "DEFAULT_THRESHOLD",
    "COLOR_ANCHORS",
    "NO_DATA_COLOR",
]

DEFAULT_THRESHOLD = 1.7688
DEFAULT_PATCH = 1024
# blue, cyan, green, yellow, red at quality 0, 0.25, 0.5, 0.75, 1
COLOR_ANCHORS = np.array([[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]], dtype=float)
NO_DATA_COLOR = (128, 128, 128)


class SlideReadError(FQPathError):
    """The slide cannot be opened or decoded."""


@dataclass(frozen=True)
class TissueConfig:
    max_mean: float = 0.92
    min_std: float = 0.02


def tissue_test(tile, cfg: TissueConfig = TissueConfig()) -> bool:
    """A unit-range tile holds tissue if it is dark enough and not flat."""
    tile = np.asarray(tile, dtype=float)
    return bool(tile.mean() <= cfg.max_mean and tile.std() >= cfg.min_std)


# ----------------------------------------------------------------------------
# readers

class SlideReader:
    """Row-band access to an 8-bit image. Subclasses set ``shape`` (H, W)."""

    shape: tuple

    def read_band(self, y0: int, y1: int) -> np.ndarray:
        raise NotImplementedError

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ArraySlide(SlideReader):
    def __init__(self, image):
        image = np.asarray(image)
        if image.ndim not in (2, 3) or image.dtype != np.uint8:
            raise SlideReadError(f"expected an 8-bit H x W or H x W x C array, got {image.dtype} {image.shape}")
        self.image = image
        self.shape = image.shape[:2]

    def read_band(self, y0, y1):
        return self.image[y0:y1]


def _as_rgb_or_gray(data: np.ndarray, source) -> np.ndarray:
    if data.dtype != np.uint8:
        raise SlideReadError(f"{source}: only 8-bit samples are supported, got {data.dtype}")
    if data.ndim == 3 and data.shape[2] == 4:
        return data[..., :3]
    if data.ndim == 3 and data.shape[2] not in (1, 3):
        raise SlideReadError(f"{source}: unsupported channel count {data.shape[2]}")
    return data


class PillowSlide(SlideReader):
    """Any Pillow-readable image (PNG, JPEG, ...); decoded in full on open."""

    def __init__(self, path):
        from PIL import Image, UnidentifiedImageError

        Image.MAX_IMAGE_PIXELS = None
        try:
            with Image.open(path) as img:
                if img.mode not in ("L", "RGB", "RGBA"):
                    img = img.convert("RGB") if img.mode in ("P", "CMYK", "YCbCr", "LA") else img
                if img.mode not in ("L", "RGB", "RGBA"):
                    raise SlideReadError(f"{path}: unsupported pixel mode {img.mode}")
                data = np.asarray(img)
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
            raise SlideReadError(f"{path}: cannot decode image ({exc})") from exc
        self.image = _as_rgb_or_gray(data, path)
        self.shape = self.image.shape[:2]

    def read_band(self, y0, y1):
        return self.image[y0:y1]


class TiffSlide(SlideReader):
    """Level-0 plane of a strip or tile organised TIFF, decoded one band at a time."""

    def __init__(self, path):
        import tifffile

        try:
            self._tif = tifffile.TiffFile(path)
            page = self._tif.pages.first
        except Exception as exc:  # tifffile raises a variety of types on corrupt input
            raise SlideReadError(f"{path}: cannot open TIFF ({exc})") from exc
        self._path = path
        self._page = page
        if page.dtype != np.uint8:
            self.close()
            raise SlideReadError(f"{path}: only 8-bit samples are supported, got {page.dtype}")
        samples = page.samplesperpixel
        if samples not in (1, 3, 4):
            self.close()
            raise SlideReadError(f"{path}: unsupported samples per pixel {samples}")
        self.shape = (page.imagelength, page.imagewidth)
        self._samples = samples
        self._chunked = page.planarconfig == 1 or samples == 1
        if page.is_tiled:
            self._seg_h, self._seg_w = page.tilelength, page.tilewidth
        else:
            self._seg_h, self._seg_w = min(page.rowsperstrip, page.imagelength), page.imagewidth
        self._per_row = -(-self.shape[1] // self._seg_w)
        self._full = None

    def close(self):
        tif = getattr(self, "_tif", None)
        if tif is not None:
            tif.close()
            self._tif = None

    def _decode_segment(self, index):
        page = self._page
        fh = self._tif.filehandle
        offset, count = page.dataoffsets[index], page.databytecounts[index]
        if count == 0:
            return None
        fh.seek(offset)
        raw = fh.read(count)
        segment, _, _ = page.decode(raw, index, jpegtables=page.jpegtables)
        return segment

    def read_band(self, y0, y1):
        height, width = self.shape
        y1 = min(y1, height)
        try:
            if not self._chunked:
                # planar-separate layouts are read whole once
                if self._full is None:
                    planes = self._page.asarray()
                    self._full = _as_rgb_or_gray(np.moveaxis(planes, 0, -1), self._path)
                return self._full[y0:y1]
            out = np.empty((y1 - y0, width, self._samples), dtype=np.uint8)
            for sy in range(y0 // self._seg_h, (y1 - 1) // self._seg_h + 1):
                top = sy * self._seg_h
                for sx in range(self._per_row):
                    left = sx * self._seg_w
                    segment = self._decode_segment(sy * self._per_row + sx)
                    r0, r1 = max(y0, top), min(y1, top + self._seg_h)
                    c1 = min(width, left + self._seg_w)
                    if segment is None:
                        out[r0 - y0:r1 - y0, left:c1] = 0
                        continue
                    seg = segment.reshape(segment.shape[-3:])
                    out[r0 - y0:r1 - y0, left:c1] = seg[r0 - top:r1 - top, :c1 - left]
        except SlideReadError:
            raise
        except Exception as exc:
            raise SlideReadError(f"{self._path}: cannot decode rows {y0}..{y1} ({exc})") from exc
        if self._samples == 1:
            return out[..., 0]
        return out[..., :3]


def open_slide(source) -> SlideReader:
    """Reader for a path (TIFF by signature, otherwise Pillow), array or reader."""
    if isinstance(source, SlideReader):
        return source
    if isinstance(source, np.ndarray):
        return ArraySlide(source)
    path = os.fspath(source)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as exc:
        raise SlideReadError(f"{path}: cannot read ({exc})") from exc
    if magic[:2] in (b"II", b"MM") and magic[2:4] in (b"*\x00", b"\x00*", b"+\x00", b"\x00+"):
        return TiffSlide(path)
    return PillowSlide(path)


# ----------------------------------------------------------------------------
# grid

@dataclass(frozen=True)
class HeatmapGrid:
    """Per-tile results. Non-tissue tiles hold NaN in ``raw`` and ``projected``."""

    rows: int
    cols: int
    patch_size: int
    raw: np.ndarray
    projected: np.ndarray
    tissue: np.ndarray
    slide_id: str = ""

    def __post_init__(self):
        shape = (self.rows, self.cols)
        raw = np.array(self.raw, dtype=float)
        projected = np.array(self.projected, dtype=float)
        tissue = np.array(self.tissue, dtype=bool)
        if raw.shape != shape or projected.shape != shape or tissue.shape != shape:
            raise InvariantError(f"raw, projected and tissue must all be {shape}")
        if not np.array_equal(np.isfinite(projected), tissue):
            raise InvariantError("projected must be defined exactly on tissue tiles")
        for arr in (raw, projected, tissue):
            arr.flags.writeable = False
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "projected", projected)
        object.__setattr__(self, "tissue", tissue)

    @property
    def scored(self) -> np.ndarray:
        """Projected scores of tissue tiles in row-major order."""
        return self.projected[self.tissue]


@dataclass(frozen=True)
class SlideDecision:
    acceptance_ratio: float
    threshold: float
    n_tissue_tiles: int
    passed: bool
    no_tissue: bool = False


def _score_tile(tile, kernel, params, projection, tissue_cfg):
    gray = to_grayscale_unit(tile)
    if not tissue_test(gray, tissue_cfg):
        return False, math.nan, math.nan
    result = score_patch(gray, kernel, params)
    return True, result.raw, project_score(projection, result.raw)


def tile_and_score(source, kernel: HvsmKernel, params: ScoringParams, projection: ProjectionModel,
                   tissue_cfg: TissueConfig = TissueConfig(), patch_size: int = DEFAULT_PATCH,
                   jobs: int = 1, slide_id: str = "", order=None) -> HeatmapGrid:
    """Score every full tile of a slide, one band of tiles at a time.

    Partial tiles on the right and bottom borders are dropped. With ``jobs > 1``
    the tiles of a band are scored on a thread pool; results are placed by
    index, so the grid does not depend on ``jobs`` or on ``order`` (an optional
    permutation of column indices used within each band).
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    reader = open_slide(source)
    owned = reader is not source
    try:
        height, width = reader.shape
        rows, cols = height // patch_size, width // patch_size
        if rows == 0 or cols == 0:
            raise SlideReadError(
                f"image {height}x{width} holds no full {patch_size}x{patch_size} tile"
            )
        raw = np.full((rows, cols), np.nan)
        projected = np.full((rows, cols), np.nan)
        tissue = np.zeros((rows, cols), dtype=bool)
        col_order = list(range(cols)) if order is None else list(order)
        if sorted(col_order) != list(range(cols)):
            raise ValueError("order must be a permutation of the column indices")
        pool = ThreadPoolExecutor(max_workers=jobs) if jobs > 1 else None
        try:
            for r in range(rows):
                band = reader.read_band(r * patch_size, (r + 1) * patch_size)
                tiles = {c: band[:, c * patch_size:(c + 1) * patch_size] for c in col_order}
                if pool is None:
                    results = {c: _score_tile(tiles[c], kernel, params, projection, tissue_cfg) for c in col_order}
                else:
                    futures = {c: pool.submit(_score_tile, tiles[c], kernel, params, projection, tissue_cfg)
                               for c in col_order}
                    results = {c: f.result() for c, f in futures.items()}
                del band, tiles
                for c, (is_tissue, s_raw, s_proj) in results.items():
                    tissue[r, c] = is_tissue
                    raw[r, c] = s_raw
                    projected[r, c] = s_proj
        finally:
            if pool is not None:
                pool.shutdown()
    finally:
        if owned:
            reader.close()
    return HeatmapGrid(rows, cols, patch_size, raw, projected, tissue, slide_id)


def render_heatmap(grid: HeatmapGrid, z_cap: float = 8.0, block: int = 16) -> np.ndarray:
    """RGB image with one ``block`` x ``block`` square per tile.

    Quality q = clamp(1 - projected / z_cap, 0, 1) runs from blue (q = 0) to
    red (q = 1); tiles without a score are gray.
    """
    if block < 1 or not z_cap > 0:
        raise ValueError("block must be >= 1 and z_cap positive")
    with np.errstate(invalid="ignore"):
        q = np.clip(1.0 - grid.projected / z_cap, 0.0, 1.0)
    pos = np.nan_to_num(q) * (len(COLOR_ANCHORS) - 1)
    lo = np.minimum(pos.astype(int), len(COLOR_ANCHORS) - 2)
    frac = (pos - lo)[..., None]
    colors = COLOR_ANCHORS[lo] * (1.0 - frac) + COLOR_ANCHORS[lo + 1] * frac
    colors = np.rint(colors).astype(np.uint8)
    colors[~grid.tissue] = NO_DATA_COLOR
    return np.repeat(np.repeat(colors, block, axis=0), block, axis=1)


def cumsum_curve(grid: HeatmapGrid, bins: int = 256, scores=None):
    """Empirical CDF of tissue-tile projected scores.

    Evaluated on ``bins`` uniform points from 0 (or the smallest score, if
    negative) to the largest score, or on the explicit ``scores`` grid. When all
    scores coincide the axis is widened by one unit so it stays increasing.
    Returns ``(scores, cdf)``.
    """
    values = np.sort(grid.scored)
    if values.size == 0:
        raise ValueError("no scored tiles")
    if scores is None:
        if bins < 2:
            raise ValueError("bins must be >= 2")
        lo, hi = min(0.0, float(values[0])), float(values[-1])
        if hi <= lo:
            hi = lo + 1.0
        scores = np.linspace(lo, hi, bins)
    scores = np.asarray(scores, dtype=float)
    cdf = np.searchsorted(values, scores, side="right") / values.size
    return scores, cdf


def decide(grid: HeatmapGrid, threshold: float = DEFAULT_THRESHOLD, pass_ratio: float = 0.5) -> SlideDecision:
    """Acceptance ratio: fraction of tissue tiles with projected score <= threshold."""
    values = grid.scored
    if values.size == 0:
        return SlideDecision(0.0, float(threshold), 0, False, no_tissue=True)
    ratio = float(np.count_nonzero(values <= threshold)) / values.size
    return SlideDecision(ratio, float(threshold), int(values.size), ratio >= pass_ratio)


# ----------------------------------------------------------------------------
# output

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def write_tiles_csv(grid: HeatmapGrid, path) -> None:
    rows = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            rows.append([r, c, int(grid.tissue[r, c]), _fmt(grid.raw[r, c]), _fmt(grid.projected[r, c])])
    atomic_write_text(path, _csv_text(["row", "col", "tissue", "raw_score", "projected_score"], rows))


def write_curve_csv(scores, cdf, path) -> None:
    atomic_write_text(path, _csv_text(["score", "cdf"], [[_fmt(s), _fmt(f)] for s, f in zip(scores, cdf)]))


def save_png(image: np.ndarray, path) -> None:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())

"""HVS-M kernel synthesis.

The kernel is a weighted sum of low-pass even-derivative filters whose weights
are chosen so that the combined response approximates the inverse of the
defocus PSF spectrum over the band where that inverse stays bounded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_text
from .errors import DesignError, InvariantError, ParseError
from .filters import DEFAULT_HALF_LENGTH, design_derivative_filter
from .optics import PsfModel, SampledSpectrum, psf_spectrum

__all__ = [
    "HvsmKernel",
    "fit_coefficients",
    "combine_basis",
    "synthesize_kernel",
    "save_kernel",
    "load_kernel",
    "INSTABILITY_CAP",
    "DEFAULT_ORDER_COUNT",
    "DEFAULT_Z_STAR",
    "SCHEMA_VERSION",
]

INSTABILITY_CAP = 30.0
DEFAULT_ORDER_COUNT = 7
DEFAULT_Z_STAR = 4.0
DEFAULT_CUTOFF = 2.0
DEFAULT_PIXEL_PITCH = 0.25e-6
SPECTRUM_GRID = 1024
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class HvsmKernel:
    """Combined symmetric FIR kernel and its provenance.

    ``optics`` and ``pixel_pitch`` record the PSF model the kernel was fitted
    to; they are ``None`` for kernels assembled by hand.
    """

    coefficients: np.ndarray
    taps: np.ndarray
    fit_band_limit: float
    cutoff: float
    z_star: float
    fit_residual: float
    optics: PsfModel | None = None
    pixel_pitch: float | None = None

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float).ravel()
        taps = np.array(self.taps, dtype=float)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise InvariantError("taps must be a 1-D odd-length sequence")
        if not np.array_equal(taps, taps[::-1]):
            raise InvariantError("taps must be even symmetric")
        if not np.all(np.isfinite(taps)) or not np.all(np.isfinite(coef)):
            raise InvariantError("taps and coefficients must be finite")
        if not self.fit_residual >= 0:
            raise InvariantError(f"fit_residual must be >= 0, got {self.fit_residual}")
        coef.flags.writeable = False
        taps.flags.writeable = False
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "taps", taps)

    @property
    def half_length(self) -> int:
        return self.taps.size // 2

    def response(self, frequencies) -> np.ndarray:
        """Real frequency response of the combined taps."""
        w = np.asarray(frequencies, dtype=float)
        half = self.taps[self.half_length:]
        k = np.arange(1, half.size)
        return half[0] + 2.0 * np.cos(np.outer(w, k)) @ half[1:]


def _band_limit(spectrum: SampledSpectrum, cap: float, band_limit_cap: float) -> int:
    """Index of the last grid frequency of the fit band."""
    w = spectrum.frequencies
    v = spectrum.values
    inside = v <= cap
    bad = np.flatnonzero(~np.isfinite(v))
    # the band ends just before the first sample that is over the cap or not finite
    over = np.flatnonzero(~inside)
    stop = over[0] if over.size else v.size
    if bad.size and bad[0] <= stop and w[bad[0]] <= band_limit_cap:
        raise DesignError(f"inverse spectrum is not finite at w = {w[bad[0]]:.6g} rad/sample")
    stop = min(stop, int(np.searchsorted(w, band_limit_cap, side="right")))
    return stop - 1


def fit_coefficients(inverse_spectrum: SampledSpectrum, order_count: int = DEFAULT_ORDER_COUNT,
                     band_limit_cap: float = math.pi, cap: float = INSTABILITY_CAP):
    """Least-squares weights of the even-derivative responses (-1)^n w^(2n).

    The fit band [0, w_t] ends at the last grid frequency before the inverse
    spectrum first exceeds ``cap`` and never beyond ``band_limit_cap``.

    Returns:
        ``(coefficients, band_limit, residual)`` where ``residual`` is the
        relative l2 misfit on the band.

    Raises:
        DesignError: if the spectrum is non-finite inside the band, or the band
            holds fewer samples than coefficients.
    """
    if order_count < 1:
        raise ValueError(f"order_count must be >= 1, got {order_count}")
    w = inverse_spectrum.frequencies
    if w[0] != 0.0 or w[-1] < math.pi - 1e-9:
        raise ValueError("inverse spectrum must cover [0, pi]")
    last = _band_limit(inverse_spectrum, cap, band_limit_cap)
    if last + 1 < order_count + 1:
        raise DesignError(
            f"fit band holds {max(last + 1, 0)} samples, need at least {order_count + 1}; "
            "the inverse spectrum exceeds the cap too close to w = 0"
        )
    band = w[: last + 1]
    target = inverse_spectrum.values[: last + 1]
    band_limit = float(band[-1])

    # columns (-1)^n (w / w_t)^(2n) are well scaled on [0, 1]
    x = band / band_limit
    powers = np.arange(1, order_count + 1)
    design = (-1.0) ** powers * x[:, None] ** (2 * powers)
    scaled, *_ = np.linalg.lstsq(design, target, rcond=None)
    coefficients = scaled / band_limit ** (2 * powers)
    misfit = design @ scaled - target
    residual = float(np.linalg.norm(misfit) / np.linalg.norm(target))
    return coefficients, band_limit, residual


def combine_basis(coefficients, basis) -> np.ndarray:
    """Elementwise linear combination of the basis filters' taps."""
    coefficients = np.asarray(coefficients, dtype=float)
    if len(basis) != coefficients.size:
        raise ValueError("one basis filter per coefficient is required")
    taps = np.zeros_like(basis[0].taps)
    for c, filt in zip(coefficients, basis):
        if filt.taps.shape != taps.shape:
            raise ValueError("basis filters must share a length")
        taps = taps + c * filt.taps
    return taps


def synthesize_kernel(model: PsfModel | None = None, z_star: float = DEFAULT_Z_STAR,
                      order_count: int = DEFAULT_ORDER_COUNT, cutoff: float = DEFAULT_CUTOFF,
                      half_length: int = DEFAULT_HALF_LENGTH,
                      pixel_pitch: float = DEFAULT_PIXEL_PITCH,
                      cap: float = INSTABILITY_CAP,
                      band_limit_cap: float | None = None) -> HvsmKernel:
    """Build the HVS-M kernel for defocus ``z_star`` (depth units).

    The fit band is capped at ``band_limit_cap``, which defaults to ``cutoff``:
    the basis filters are low-pass beyond it, and a band ending short of the
    cutoff leaves the polynomial free to grow between the two.
    """
    model = PsfModel() if model is None else model
    if band_limit_cap is None:
        band_limit_cap = cutoff
    spectrum = psf_spectrum(model, z_star * model.depth_unit, pixel_pitch, SPECTRUM_GRID)
    coefficients, band_limit, residual = fit_coefficients(spectrum.inverse(), order_count,
                                                          band_limit_cap, cap)
    basis = [design_derivative_filter(2 * n, cutoff, half_length) for n in range(1, order_count + 1)]
    taps = combine_basis(coefficients, basis)
    return HvsmKernel(coefficients=coefficients, taps=taps, fit_band_limit=band_limit,
                      cutoff=float(cutoff), z_star=float(z_star), fit_residual=residual,
                      optics=model, pixel_pitch=float(pixel_pitch))


def _kernel_to_dict(kernel: HvsmKernel) -> dict:
    optics = None
    if kernel.optics is not None:
        optics = {
            "na": kernel.optics.numerical_aperture,
            "wavelength_m": kernel.optics.wavelength,
            "refractive_index": kernel.optics.refractive_index,
            "pixel_pitch_m": kernel.pixel_pitch,
            "normalization": kernel.optics.normalization,
            "quadrature_nodes": kernel.optics.quadrature_nodes,
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "coefficients": [float(c) for c in kernel.coefficients],
        "taps": [float(t) for t in kernel.taps],
        "cutoff": float(kernel.cutoff),
        "fit_band_limit": float(kernel.fit_band_limit),
        "z_star": float(kernel.z_star),
        "optics": optics,
        "fit_residual": float(kernel.fit_residual),
    }


def save_kernel(kernel: HvsmKernel, path) -> None:
    """Write the kernel as JSON. Floats use shortest round-trip repr, so reload is bit-exact."""
    atomic_write_text(path, json.dumps(_kernel_to_dict(kernel), indent=2) + "\n")


def _require(obj: dict, key: str, kind, context: str = ""):
    name = f"{context}{key}"
    if key not in obj:
        raise ParseError(f"missing field '{name}'", field=name)
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"field '{name}' must be a number", field=name)
        return float(value)
    if kind is list:
        if not isinstance(value, list) or not value:
            raise ParseError(f"field '{name}' must be a non-empty list of numbers", field=name)
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ParseError(f"field '{name}' must be a non-empty list of numbers", field=name)
        return np.array(value, dtype=float)
    return value


def load_kernel(path) -> HvsmKernel:
    """Read a kernel written by :func:`save_kernel`.

    Raises:
        ParseError: malformed JSON or a missing/mistyped field (``.field`` names it).
        InvariantError: well-formed values that violate kernel invariants.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: top level must be an object")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version!r}", field="schema_version")
    coefficients = _require(obj, "coefficients", list)
    taps = _require(obj, "taps", list)
    cutoff = _require(obj, "cutoff", float)
    band_limit = _require(obj, "fit_band_limit", float)
    z_star = _require(obj, "z_star", float)
    residual = _require(obj, "fit_residual", float)
    optics_obj = obj.get("optics")
    optics = pitch = None
    if optics_obj is not None:
        if not isinstance(optics_obj, dict):
            raise ParseError("field 'optics' must be an object", field="optics")
        optics = PsfModel(
            numerical_aperture=_require(optics_obj, "na", float, "optics."),
            refractive_index=_require(optics_obj, "refractive_index", float, "optics."),
            wavelength=_require(optics_obj, "wavelength_m", float, "optics."),
            normalization=float(optics_obj.get("normalization", 2.0)),
            quadrature_nodes=int(optics_obj.get("quadrature_nodes", 128)),
        )
        pitch = _require(optics_obj, "pixel_pitch_m", float, "optics.")
    return HvsmKernel(coefficients=coefficients, taps=taps, fit_band_limit=band_limit,
                      cutoff=cutoff, z_star=z_star, fit_residual=residual,
                      optics=optics, pixel_pitch=pitch)

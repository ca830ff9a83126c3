"""Low-pass even-order derivative FIR filters.

A filter of order 2n approximates the frequency response (-1)^n w^(2n) on
[0, cutoff] and rejects frequencies above cutoff + transition. Taps are even
symmetric and sum to zero, so the response is real and vanishes at DC.

Design is a weighted, equality-constrained linear least-squares problem over a
uniform frequency grid:

* the even moments sum_k t_k k^(2j) are pinned so that the filter
  differentiates polynomials of degree <= 2n+1 exactly (the response agrees with
  the target to order w^(2n) at the origin);
* pass-band residuals are weighted by 1/|target|, i.e. relative error is
  minimized, so the response keeps the sign of the target down to the smallest
  frequencies where it is numerically resolvable;
* the shoulder (0.9 cutoff, cutoff] carries a small weight and the transition
  band (cutoff, cutoff + transition) none.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DesignError, InvariantError
from .optics import SampledSpectrum

__all__ = [
    "DerivativeFilter",
    "design_derivative_filter",
    "filter_response",
    "DEFAULT_HALF_LENGTH",
    "DEFAULT_GRID_POINTS",
    "DEFAULT_TRANSITION",
]

DEFAULT_HALF_LENGTH = 37
DEFAULT_GRID_POINTS = 4096
DEFAULT_TRANSITION = 0.2
MAX_CONDITION = 1e12
SHOULDER = 0.9
SHOULDER_WEIGHT = 1e-3
# floor on the normalized target used in the relative pass-band weight
RELATIVE_FLOOR = 1e-10


@dataclass(frozen=True)
class DerivativeFilter:
    """Symmetric FIR taps indexed -L..L (``taps[L]`` is the centre).

    ``residual`` is the weighted least-squares residual norm of the design,
    in units normalized so the pass-band target peaks at 1.
    """

    order: int
    cutoff: float
    taps: np.ndarray
    residual: float = float("nan")

    def __post_init__(self):
        taps = np.array(self.taps, dtype=float)
        if taps.ndim != 1 or taps.size % 2 == 0:
            raise InvariantError("taps must be a 1-D odd-length sequence")
        if not np.array_equal(taps, taps[::-1]):
            raise InvariantError("taps must be even symmetric")
        if self.order < 0 or self.order % 2:
            raise InvariantError(f"order must be a non-negative even integer, got {self.order}")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

    @property
    def half_length(self) -> int:
        return self.taps.size // 2


def _cosine_response(half_taps, w):
    """Response of symmetric taps given as [t0, t1, ..., tL] at frequencies w."""
    k = np.arange(1, half_taps.size)
    return half_taps[0] + 2.0 * np.cos(np.outer(w, k)) @ half_taps[1:]


def filter_response(filt: DerivativeFilter, frequencies) -> SampledSpectrum:
    """Exact real frequency response t0 + 2 sum_k t_k cos(k w)."""
    w = np.asarray(frequencies, dtype=float)
    if np.any(w < 0) or np.any(w > math.pi + 1e-12):
        raise ValueError("frequencies must lie in [0, pi]")
    half = filt.taps[filt.half_length:]
    return SampledSpectrum(w, _cosine_response(half, w))


def _condition(matrix) -> float:
    norms = np.linalg.norm(matrix, axis=0)
    norms[norms == 0] = 1.0
    s = np.linalg.svd(matrix / norms, compute_uv=False)
    if s[-1] <= 0:
        return math.inf
    return float(s[0] / s[-1])


def design_derivative_filter(order: int, cutoff: float = 2.0, half_length: int = DEFAULT_HALF_LENGTH,
                             grid_points: int = DEFAULT_GRID_POINTS,
                             transition: float = DEFAULT_TRANSITION) -> DerivativeFilter:
    """Design a low-pass derivative filter of even ``order``.

    The free parameters are the side taps t_1..t_L; the centre tap is tied to
    t_0 = -2 sum t_k so the taps sum to zero exactly.

    Raises:
        DesignError: if the weighted least-squares matrix has a condition
            number above 1e12.
    """
    if order < 2 or order > 14 or order % 2:
        raise ValueError(f"order must be even and in [2, 14], got {order}")
    if not 0 < cutoff < math.pi:
        raise ValueError(f"cutoff must lie in (0, pi), got {cutoff}")
    if half_length < order:
        raise ValueError(f"half_length must be >= order ({order}), got {half_length}")
    if grid_points < 8 * half_length:
        raise ValueError(f"grid_points must be >= 8 * half_length, got {grid_points}")

    n = order // 2
    L = half_length
    w = np.linspace(0.0, math.pi, grid_points)
    w = w[(w <= cutoff) | (w >= cutoff + transition)]
    # frequencies are scaled by the cutoff so the pass-band target peaks at 1
    scaled = (w / cutoff) ** order
    target = np.where(w <= cutoff, (-1.0) ** n * scaled, 0.0)
    weight = np.where(w <= SHOULDER * cutoff, 1.0 / (scaled + RELATIVE_FLOOR),
                      np.where(w <= cutoff, SHOULDER_WEIGHT, 1.0))

    k = np.arange(1, L + 1)
    design = 2.0 * (np.cos(np.outer(w, k)) - 1.0)

    # moments 2 sum_k t_k (k/L)^(2j), j = 1..n, in units of the scaled target
    moments = np.stack([2.0 * (k / L) ** (2 * j) for j in range(1, n + 1)])
    rhs = np.zeros(n)
    rhs[-1] = math.factorial(order) / (L * cutoff) ** order

    q, r = np.linalg.qr(moments.T, mode="complete")
    range_basis, null_basis = q[:, :n], q[:, n:]
    particular = range_basis @ np.linalg.solve(r[:n].T, rhs)

    reduced = (design @ null_basis) * weight[:, None]
    cond = _condition(reduced)
    if not cond <= MAX_CONDITION:
        raise DesignError(
            f"ill-conditioned design for order {order} with half_length {L} "
            f"(condition {cond:.3g} > {MAX_CONDITION:.0e}); try a different half_length or a smaller order"
        )
    coef, *_ = np.linalg.lstsq(reduced, (target - design @ particular) * weight, rcond=None)
    side = particular + null_basis @ coef
    residual = float(np.linalg.norm((design @ side - target) * weight))

    side = side * cutoff ** order
    centre = -2.0 * side.sum()
    taps = np.concatenate([side[::-1], [centre], side])
    return DerivativeFilter(order=order, cutoff=float(cutoff), taps=taps, residual=residual)

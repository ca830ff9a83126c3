"""Inverse Gaussian projection of raw focus scores onto a |z|-like scale.

Mean training scores dip around the focal plane. Their inverse,
``ceiling - mean(z)``, is modelled as ``a * exp(-((z - b) / c)^2)``; a raw score
is then mapped through the inverse of that Gaussian,
``c * sqrt(-ln(s_inv / a)) + b``, which grows roughly linearly with |z|.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_text
from ._lm import levenberg_marquardt
from .errors import ConvergenceError, InvariantError, ParseError

__all__ = [
    "ProjectionModel",
    "TrainingProfiles",
    "gaussian",
    "fit_projection",
    "project_score",
    "save_projection",
    "load_projection",
    "read_training_csv",
    "DEFAULT_WINDOW",
    "DEFAULT_Z_LEVELS",
]

DEFAULT_WINDOW = (-3, 3)
DEFAULT_Z_LEVELS = tuple(range(-7, 9))
MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10
SCHEMA_VERSION = 1


def gaussian(z, a, b, c):
    """a * exp(-((z - b) / c)^2)."""
    z = np.asarray(z, dtype=float)
    return a * np.exp(-(((z - b) / c) ** 2))


@dataclass(frozen=True)
class ProjectionModel:
    a_star: float
    b_star: float
    c_star: float
    score_ceiling: float
    clamp_floor: float = 1e-9
    fit_window: tuple = DEFAULT_WINDOW

    def __post_init__(self):
        for name in ("a_star", "b_star", "c_star", "score_ceiling", "clamp_floor"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvariantError(f"{name} must be finite, got {value}")
        if not self.a_star > 0:
            raise InvariantError(f"a_star must be positive, got {self.a_star}")
        if not self.c_star > 0:
            raise InvariantError(f"c_star must be positive, got {self.c_star}")
        if not 0 < self.clamp_floor < self.a_star:
            raise InvariantError(f"clamp_floor must lie in (0, a_star), got {self.clamp_floor}")
        window = tuple(int(v) for v in self.fit_window)
        if len(window) != 2 or window[0] >= window[1]:
            raise InvariantError(f"fit_window must be an increasing integer pair, got {self.fit_window}")
        object.__setattr__(self, "fit_window", window)

    @property
    def output_range(self) -> tuple:
        top = self.c_star * math.sqrt(-math.log(self.clamp_floor / self.a_star)) + self.b_star
        return self.b_star, top


@dataclass(frozen=True)
class TrainingProfiles:
    """Raw scores, one row per focus profile, one column per z level."""

    scores: np.ndarray
    z_levels: np.ndarray = np.array(DEFAULT_Z_LEVELS)

    def __post_init__(self):
        scores = np.array(self.scores, dtype=float)
        z = np.array(self.z_levels, dtype=float).ravel()
        if scores.ndim != 2 or scores.shape[1] != z.size:
            raise InvariantError(
                f"scores must be profiles x levels with {z.size} levels, got shape {scores.shape}"
            )
        if np.any(np.diff(z) <= 0):
            raise InvariantError("z_levels must be strictly increasing")
        if not np.all(np.isfinite(scores)):
            raise InvariantError("scores must be finite")
        scores.flags.writeable = False
        z.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "z_levels", z)


def fit_projection(profiles: TrainingProfiles, window=DEFAULT_WINDOW, clamp_floor: float = 1e-9) -> ProjectionModel:
    """Fit the Gaussian to the inverse mean profile inside ``window``.

    Raises:
        ConvergenceError: flat inverse profile, or no convergence within 200
            damped Gauss-Newton iterations.
    """
    if profiles.scores.shape[0] < 2:
        raise ValueError("fit_projection needs at least 2 profiles")
    lo, hi = (float(v) for v in window)
    z = profiles.z_levels
    if lo < z[0] or hi > z[-1]:
        raise ValueError(f"window {window} is outside the z range [{z[0]:g}, {z[-1]:g}]")
    inside = (z >= lo) & (z <= hi)
    if np.count_nonzero(inside) < 4:
        raise ValueError(f"window {window} holds fewer than 4 z levels")

    mean = profiles.scores.mean(axis=0)
    ceiling = float(mean.max())
    inverse = ceiling - mean
    zw, yw = z[inside], inverse[inside]
    if not np.any(yw > 0):
        raise ConvergenceError("inverse profile is identically zero in the fit window", residual=0.0)

    a0 = float(yw.max())
    weights = np.clip(yw, 0.0, None)
    centre = float(weights @ zw / weights.sum())
    variance = float(weights @ (zw - centre) ** 2 / weights.sum())
    c0 = math.sqrt(2.0 * variance) if variance > 0 else 1.0

    def residual(p):
        return gaussian(zw, *p) - yw

    def jacobian(p):
        a, b, c = p
        u = (zw - b) / c
        g = np.exp(-u * u)
        return np.column_stack([g, a * g * 2.0 * u / c, a * g * 2.0 * u * u / c])

    fit = levenberg_marquardt(residual, jacobian, [a0, 0.0, c0], max_iter=MAX_ITERATIONS,
                              xtol=STEP_TOLERANCE, ftol=0.0)
    if not fit.converged:
        raise ConvergenceError(
            f"Gaussian fit did not converge in {fit.iterations} iterations", fit.residual_norm, fit.iterations
        )
    a, b, c = (float(v) for v in fit.params)
    c = abs(c)
    if not (a > 0 and c > 0 and math.isfinite(a) and math.isfinite(b) and math.isfinite(c)):
        raise ConvergenceError(f"Gaussian fit ended at invalid parameters {(a, b, c)}",
                               fit.residual_norm, fit.iterations)
    return ProjectionModel(a, b, c, ceiling, clamp_floor, (int(math.floor(lo)), int(math.ceil(hi))))


def project_score(model: ProjectionModel, raw):
    """Projected score for a raw score (scalar or array)."""
    s_inv = np.clip(model.score_ceiling - np.asarray(raw, dtype=float), model.clamp_floor, model.a_star)
    out = model.c_star * np.sqrt(-np.log(s_inv / model.a_star)) + model.b_star
    if np.ndim(out) == 0:
        return float(out)
    return out


def save_projection(model: ProjectionModel, path) -> None:
    obj = {
        "schema_version": SCHEMA_VERSION,
        "a_star": model.a_star,
        "b_star": model.b_star,
        "c_star": model.c_star,
        "score_ceiling": model.score_ceiling,
        "clamp_floor": model.clamp_floor,
        "fit_window": list(model.fit_window),
    }
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def load_projection(path) -> ProjectionModel:
    """Read a model written by :func:`save_projection`.

    Raises:
        ParseError: malformed JSON or a missing/mistyped field (``.field`` names it).
        InvariantError: values that violate the model invariants.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: top level must be an object")
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {obj.get('schema_version')!r}", field="schema_version")
    values = {}
    for key in ("a_star", "b_star", "c_star", "score_ceiling", "clamp_floor"):
        if key not in obj:
            raise ParseError(f"missing field '{key}'", field=key)
        v = obj[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"field '{key}' must be a number", field=key)
        values[key] = float(v)
    window = obj.get("fit_window")
    if window is None:
        raise ParseError("missing field 'fit_window'", field="fit_window")
    if not (isinstance(window, list) and len(window) == 2 and all(isinstance(v, int) for v in window)):
        raise ParseError("field 'fit_window' must be a pair of integers", field="fit_window")
    return ProjectionModel(fit_window=tuple(window), **values)


def read_training_csv(path) -> TrainingProfiles:
    """Training scores from a CSV with columns profile_id, z, raw_score.

    Every profile must list the same set of z levels exactly once. Profiles are
    ordered by first appearance.
    """
    table: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"profile_id", "z", "raw_score"} - set(reader.fieldnames or [])
        if missing:
            name = sorted(missing)[0]
            raise ParseError(f"{path}: missing column '{name}'", field=name)
        for line, row in enumerate(reader, start=2):
            try:
                z = float(row["z"])
            except (TypeError, ValueError):
                raise ParseError(f"{path}:{line}: bad z value {row['z']!r}", field="z") from None
            try:
                score = float(row["raw_score"])
            except (TypeError, ValueError):
                raise ParseError(f"{path}:{line}: bad raw_score {row['raw_score']!r}", field="raw_score") from None
            levels = table.setdefault(row["profile_id"], {})
            if z in levels:
                raise ParseError(f"{path}:{line}: duplicate z {z:g} for profile {row['profile_id']!r}", field="z")
            levels[z] = score
    if not table:
        raise ParseError(f"{path}: no rows")
    z_levels = sorted(next(iter(table.values())))
    for pid, levels in table.items():
        if sorted(levels) != z_levels:
            raise ParseError(f"{path}: profile {pid!r} does not cover the same z levels", field="z")
    scores = [[levels[z] for z in z_levels] for levels in table.values()]
    return TrainingProfiles(np.array(scores), np.array(z_levels))

import json
import math

import numpy as np
import pytest

from fqpath.errors import ConvergenceError, InvariantError, ParseError
from fqpath.projection import (
    ProjectionModel,
    TrainingProfiles,
    fit_projection,
    gaussian,
    load_projection,
    project_score,
    read_training_csv,
    save_projection,
)

A, B, C = 5.389, 0.005248, 5.301
WIDE = np.arange(-40, 41)


def profiles_from(a, b, c, z, count=5, ceiling=12.0, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    clean = ceiling - gaussian(z, a, b, c)
    rows = np.tile(clean, (count, 1))
    if noise:
        rows = rows * (1.0 + noise * rng.standard_normal(rows.shape))
    return TrainingProfiles(rows, z)


def published_model(ceiling=10.0):
    return ProjectionModel(A, B, C, ceiling)


def test_exact_recovery_on_wide_range():
    model = fit_projection(profiles_from(A, B, C, WIDE))
    assert model.a_star == pytest.approx(A, rel=1e-6)
    assert model.b_star == pytest.approx(B, rel=1e-6)
    assert model.c_star == pytest.approx(C, rel=1e-6)
    assert model.fit_window == (-3, 3)


def test_default_levels_bias_from_tail_offset():
    """On -7..8 the inverse profile is offset by the Gaussian tail at z = 8."""
    z = np.arange(-7, 9)
    model = fit_projection(profiles_from(A, B, C, z))
    tail = gaussian(8.0, A, B, C)
    assert tail > 0.1
    # the fit still lands on a Gaussian of the right centre, with a shrunken height
    assert model.a_star < A
    assert abs(model.b_star - B) < 0.05


def test_projection_linearizes_model_profile():
    model = fit_projection(profiles_from(A, B, C, WIDE))
    z = np.arange(-3, 4)
    mean = model.score_ceiling - gaussian(z, model.a_star, model.b_star, model.c_star)
    projected = project_score(model, mean)
    np.testing.assert_allclose(projected, np.abs(z - model.b_star) + model.b_star, atol=1e-9)


def test_noisy_recovery_monte_carlo():
    worst = np.zeros(3)
    for seed in range(50):
        model = fit_projection(profiles_from(A, B, C, WIDE, count=20, noise=0.01, seed=seed))
        errors = [abs(model.a_star - A) / A, abs(model.b_star - B) / C, abs(model.c_star - C) / C]
        worst = np.maximum(worst, errors)
    assert np.all(worst <= 0.05), worst


def test_flat_profiles_do_not_converge():
    flat = TrainingProfiles(np.full((4, 16), 3.0), np.arange(-7, 9))
    with pytest.raises(ConvergenceError) as info:
        fit_projection(flat)
    assert info.value.residual == 0.0


@pytest.mark.parametrize("window", [(-10, 3), (0, 2)])
def test_window_preconditions(window):
    with pytest.raises(ValueError):
        fit_projection(profiles_from(A, B, C, np.arange(-7, 9)), window=window)


def test_needs_two_profiles():
    with pytest.raises(ValueError):
        fit_projection(profiles_from(A, B, C, np.arange(-7, 9), count=1))


def test_profile_invariants():
    with pytest.raises(InvariantError):
        TrainingProfiles(np.zeros((2, 5)), np.arange(6))
    with pytest.raises(InvariantError):
        TrainingProfiles(np.zeros((2, 3)), [0, 2, 1])
    with pytest.raises(InvariantError):
        TrainingProfiles(np.array([[0.0, np.nan]]), [0, 1])


# -- project_score -------------------------------------------------------------

def test_score_at_gaussian_peak_is_b():
    model = published_model()
    assert project_score(model, model.score_ceiling - A) == pytest.approx(B, abs=1e-15)
    assert project_score(model, model.score_ceiling - A - 3.0) == pytest.approx(B, abs=1e-15)


def test_score_one_width_out():
    model = published_model()
    assert project_score(model, model.score_ceiling - A / math.e) == pytest.approx(C + B, rel=1e-14)
    assert C + B == pytest.approx(5.306248, abs=1e-12)


def test_score_above_ceiling_is_capped():
    model = published_model()
    cap = C * math.sqrt(-math.log(1e-9 / A)) + B
    assert project_score(model, model.score_ceiling) == pytest.approx(cap, rel=1e-14)
    assert project_score(model, model.score_ceiling + 100.0) == pytest.approx(cap, rel=1e-14)
    assert model.output_range == pytest.approx((B, cap))


def test_project_monotone_and_range():
    model = published_model()
    raw = np.linspace(model.score_ceiling - A - 2, model.score_ceiling + 2, 5001)
    out = project_score(model, raw)
    lo, hi = model.output_range
    assert np.all(np.diff(out) >= 0)
    assert np.all((out >= lo) & (out <= hi))
    inside = (raw > model.score_ceiling - A) & (raw < model.score_ceiling - model.clamp_floor)
    assert np.all(np.diff(out[inside]) > 0)


def test_model_invariants():
    with pytest.raises(InvariantError):
        ProjectionModel(0.0, B, C, 10.0)
    with pytest.raises(InvariantError):
        ProjectionModel(A, B, -1.0, 10.0)
    with pytest.raises(InvariantError):
        ProjectionModel(A, B, C, 10.0, clamp_floor=10.0)
    with pytest.raises(InvariantError):
        ProjectionModel(A, B, C, math.nan)
    with pytest.raises(InvariantError):
        ProjectionModel(A, B, C, 10.0, fit_window=(3, -3))


# -- persistence -------------------------------------------------------------------

def test_round_trip(tmp_path):
    model = fit_projection(profiles_from(A, B, C, WIDE))
    path = tmp_path / "p.json"
    save_projection(model, path)
    assert load_projection(path) == model


def test_missing_a_star_is_named(tmp_path):
    path = tmp_path / "p.json"
    save_projection(published_model(), path)
    obj = json.loads(path.read_text())
    del obj["a_star"]
    path.write_text(json.dumps(obj))
    with pytest.raises(ParseError) as info:
        load_projection(path)
    assert info.value.field == "a_star"


def test_non_positive_a_star_rejected(tmp_path):
    path = tmp_path / "p.json"
    save_projection(published_model(), path)
    obj = json.loads(path.read_text())
    obj["a_star"] = -1.0
    path.write_text(json.dumps(obj))
    with pytest.raises(InvariantError):
        load_projection(path)


def test_training_csv(tmp_path):
    path = tmp_path / "train.csv"
    lines = ["profile_id,z,raw_score"]
    for pid in ("p1", "p2"):
        for z in range(-7, 9):
            lines.append(f"{pid},{z},{10 - gaussian(z, A, B, C) + (0.1 if pid == 'p2' else 0)}")
    path.write_text("\n".join(lines) + "\n")
    profiles = read_training_csv(path)
    assert profiles.scores.shape == (2, 16)
    assert list(profiles.z_levels) == list(range(-7, 9))


@pytest.mark.parametrize("body, field", [
    ("profile_id,z\np,1\n", "raw_score"),
    ("profile_id,z,raw_score\np,x,1\n", "z"),
    ("profile_id,z,raw_score\np,1,1\np,1,2\n", "z"),
    ("profile_id,z,raw_score\np,1,1\nq,2,1\n", "z"),
])
def test_training_csv_errors(tmp_path, body, field):
    path = tmp_path / "t.csv"
    path.write_text(body)
    with pytest.raises(ParseError) as info:
        read_training_csv(path)
    assert info.value.field == field

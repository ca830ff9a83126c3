import math

import numpy as np
import pytest
from scipy import ndimage

from fqpath.errors import InvariantError
from fqpath.evaluation import blur_image, make_blur_ladder, make_texture, srcc
from fqpath.scoring import (
    PatchScore,
    ScoringParams,
    _positive_quantile,
    decompose,
    retention_fraction,
    score_patch,
    to_grayscale_unit,
)


def reference_score(gray, kernel, params=ScoringParams()):
    """Literal, unoptimized scoring pipeline used as an oracle."""
    fx = ndimage.convolve1d(gray, kernel.taps, axis=1, mode="reflect")
    fy = ndimage.convolve1d(gray, kernel.taps, axis=0, mode="reflect")
    rx, ry = np.maximum(fx, 0), np.maximum(fy, 0)
    v = np.concatenate([rx[rx > 0], ry[ry > 0]])
    sigma = np.quantile(v, params.percentile)
    p = retention_fraction(sigma, params)
    n = int(min(max(math.floor(p * gray.size + 0.5), 1), gray.size))
    pooled = (np.sqrt(rx) + np.sqrt(ry)) ** 2
    top = np.sort(pooled.ravel())[::-1][:n]
    moment = np.mean((top - top.mean()) ** params.moment_order)
    return -math.log(max(moment, params.log_floor)), n, sigma


# -- grayscale ------------------------------------------------------------------

def test_grayscale_examples():
    px = np.array([[[255, 255, 255], [0, 0, 0], [255, 0, 0]]], dtype=np.uint8)
    np.testing.assert_allclose(to_grayscale_unit(px), [[1.0, 0.0, 0.299]], rtol=0, atol=1e-15)
    assert to_grayscale_unit(px)[0, 0] == 1.0


def test_grayscale_single_channel():
    gray = np.array([[0, 51, 255]], dtype=np.uint8)
    np.testing.assert_allclose(to_grayscale_unit(gray), [[0.0, 0.2, 1.0]])
    np.testing.assert_allclose(to_grayscale_unit(gray[..., None]), [[0.0, 0.2, 1.0]])


def test_grayscale_matches_float_formula(rng):
    img = rng.integers(0, 256, (17, 23, 3), dtype=np.uint8)
    expected = (0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]) / 255.0
    np.testing.assert_allclose(to_grayscale_unit(img), expected, rtol=1e-13)


def test_grayscale_rejects_bad_channels():
    with pytest.raises(ValueError):
        to_grayscale_unit(np.zeros((4, 4, 2), dtype=np.uint8))
    with pytest.raises(ValueError):
        to_grayscale_unit(np.full((4, 4), 300, dtype=np.int32))
    with pytest.raises(ValueError):
        to_grayscale_unit(np.zeros((4, 4), dtype=float))


# -- decomposition --------------------------------------------------------------

def test_decompose_constant_image(kernel):
    fx, fy = decompose(np.full((96, 80), 0.6), kernel)
    assert np.max(np.abs(fx)) <= 1e-6 and np.max(np.abs(fy)) <= 1e-6


def test_decompose_transpose_swaps_axes(kernel, rng):
    img = rng.random((96, 128))
    fx, fy = decompose(img, kernel)
    tx, ty = decompose(img.T, kernel)
    np.testing.assert_array_equal(tx, fy.T)
    np.testing.assert_array_equal(ty, fx.T)


def test_decompose_ramp_columns_against_convolution(kernel):
    ramp = np.linspace(0.0, 1.0, 150) ** 2
    img = np.tile(ramp[:, None], (1, 90))
    _, fy = decompose(img, kernel)
    half = kernel.half_length
    oracle = np.convolve(np.pad(ramp, half, mode="symmetric"), kernel.taps, mode="valid")
    for col in (0, 45, 89):
        np.testing.assert_allclose(fy[:, col], oracle, rtol=0, atol=1e-11)


def test_decompose_matches_reflect_convolution(kernel, rng):
    img = rng.random((100, 130))
    fx, fy = decompose(img, kernel)
    np.testing.assert_allclose(fx, ndimage.convolve1d(img, kernel.taps, axis=1, mode="reflect"), atol=1e-11)
    np.testing.assert_allclose(fy, ndimage.convolve1d(img, kernel.taps, axis=0, mode="reflect"), atol=1e-11)


def test_decompose_rejects_small_patch(kernel):
    with pytest.raises(ValueError, match="smaller than the kernel"):
        decompose(np.zeros((kernel.half_length, 200)), kernel)


# -- retention --------------------------------------------------------------------

def test_retention_spot_values(params):
    assert retention_fraction(0.095, params) == pytest.approx(0.34, abs=1e-12)
    assert abs(retention_fraction(0.3, params) - 0.09) <= 1e-6


def test_retention_range(params):
    for s in np.linspace(-1, 5, 601):
        p = retention_fraction(s, params)
        assert 0.09 <= p <= 0.59


def test_params_invariants():
    for bad in (dict(moment_order=3), dict(moment_order=0), dict(retention=(0.5, 60, 0.1, 0.09)),
                dict(retention=(0.25, 60, 0.095)), dict(percentile=1.0), dict(log_floor=0.0)):
        with pytest.raises(InvariantError):
            ScoringParams(**bad)


# -- quantile -----------------------------------------------------------------------

@pytest.mark.parametrize("level", [0.5, 0.95, 0.999])
def test_positive_quantile_matches_numpy(rng, level):
    fx = np.maximum(rng.standard_normal((64, 96)), 0)
    fy = np.maximum(rng.standard_normal((96, 64)) * 2, 0)
    v = np.concatenate([fx[fx > 0], fy[fy > 0]])
    assert _positive_quantile(fx, fy, level) == pytest.approx(np.quantile(v, level), rel=1e-14)


def test_positive_quantile_with_ties():
    fx = np.zeros((50, 50))
    fx[:10] = 1.0
    fy = np.zeros((50, 50))
    fy[:5, :5] = 2.0
    v = np.concatenate([fx[fx > 0], fy[fy > 0]])
    assert _positive_quantile(fx, fy, 0.95) == np.quantile(v, 0.95)
    assert _positive_quantile(np.zeros((4, 4)), np.zeros((4, 4)), 0.95) is None


# -- score_patch ----------------------------------------------------------------------

def test_constant_patch_is_degenerate(kernel, params):
    result = score_patch(np.full((128, 128, 3), 200, dtype=np.uint8), kernel, params)
    assert result.degenerate
    assert result.raw == pytest.approx(-math.log(1e-12))
    assert result.raw == pytest.approx(27.631, abs=1e-3)
    assert 1 <= result.n_retained <= 128 * 128


def test_score_matches_reference(kernel, params):
    rng = np.random.default_rng(8)
    for size in (64, 150, 256):
        img = make_texture(rng, size)
        gray = to_grayscale_unit(img)
        raw, n, sigma = reference_score(gray, kernel, params)
        result = score_patch(img, kernel, params)
        assert result.n_retained == n
        assert result.sigma95 == pytest.approx(sigma, rel=1e-9)
        assert result.raw == pytest.approx(raw, rel=1e-9)


def test_non_square_and_rgb(kernel, params):
    rng = np.random.default_rng(2)
    gray = make_texture(rng, 256)[:200, :]
    rgb = np.repeat(gray[..., None], 3, axis=2)
    a = score_patch(gray, kernel, params)
    b = score_patch(rgb, kernel, params)
    c = score_patch(gray / 255.0, kernel, params)
    assert a.raw == pytest.approx(b.raw, rel=1e-12)
    assert a.raw == c.raw


def test_transpose_invariance_exact(kernel, params):
    rng = np.random.default_rng(4)
    for _ in range(5):
        img = make_texture(rng, 256)[:, :192]
        assert score_patch(img, kernel, params) == score_patch(img.T, kernel, params)


def test_flip_invariance(kernel, params):
    rng = np.random.default_rng(6)
    for _ in range(5):
        img = make_texture(rng, 256)
        base = score_patch(img, kernel, params).raw
        for flipped in (img[::-1], img[:, ::-1], img[::-1, ::-1]):
            assert abs(score_patch(flipped, kernel, params).raw - base) <= 1e-9


def test_determinism(kernel, params):
    img = make_texture(np.random.default_rng(1), 256)
    assert score_patch(img, kernel, params) == score_patch(img.copy(), kernel, params)


def test_min_patch_size(kernel, params):
    with pytest.raises(ValueError):
        score_patch(np.zeros((63, 200), dtype=np.uint8), kernel, params)


def test_blurrier_scores_higher(kernel, params):
    rng = np.random.default_rng(21)
    for _ in range(20):
        img = make_texture(rng, 256)
        light = score_patch(blur_image(img, 0.5, mode="gaussian"), kernel, params).raw
        heavy = score_patch(blur_image(img, 2.0, mode="gaussian"), kernel, params).raw
        assert heavy > light


def test_patch_score_fields(kernel, params):
    result = score_patch(make_texture(np.random.default_rng(0), 128), kernel, params)
    assert isinstance(result, PatchScore)
    assert math.isfinite(result.raw)
    assert 1 <= result.n_retained <= 128 * 128
    assert result.projected is None and not result.degenerate


def test_moment_order_grid_search_pins_default(kernel):
    """The default moment order maximizes SRCC over {2, 4, 6} on a seeded ladder."""
    items = make_blur_ladder(11, 30, list(range(9)), size=256)
    levels = [item.level for item in items]
    results = {}
    for order in (2, 4, 6):
        p = ScoringParams(moment_order=order)
        results[order] = srcc([score_patch(item.image, kernel, p).raw for item in items], levels)
    assert max(results, key=results.get) == ScoringParams().moment_order == 2

import math

import numpy as np
import pytest

from fqpath.errors import DesignError, InvariantError
from fqpath.filters import DerivativeFilter, design_derivative_filter, filter_response

ORACLE_POINTS = 4096


def dtft_oracle(taps):
    """Real response on 4097 points of [0, pi] from a zero-padded FFT."""
    half = len(taps) // 2
    w = np.pi * np.arange(ORACLE_POINTS + 1) / ORACLE_POINTS
    spectrum = np.fft.rfft(taps, 2 * ORACLE_POINTS) * np.exp(1j * w * half)
    return w, spectrum.real, spectrum.imag


@pytest.mark.parametrize("order", [2, 4, 6, 8, 10, 12, 14])
def test_design_tolerances(order):
    filt = design_derivative_filter(order, cutoff=2.0)
    w, response, imag = dtft_oracle(filt.taps)
    assert np.max(np.abs(imag)) < 1e-9
    target = (-1.0) ** (order // 2) * w ** order
    band = w <= 1.8
    rel = np.max(np.abs(response - target)[band]) / np.max(np.abs(target[band]))
    assert rel <= 1e-2
    assert np.max(np.abs(response[w >= 2.2])) <= 1e-2 * 2.0 ** order


@pytest.mark.parametrize("order", [2, 4, 6, 8, 10, 12, 14])
def test_type_invariants(order):
    filt = design_derivative_filter(order, cutoff=2.0)
    np.testing.assert_array_equal(filt.taps, filt.taps[::-1])
    assert abs(filt.taps.sum()) <= 1e-12 * np.abs(filt.taps).sum()
    assert filt.half_length >= order


def test_order_two_value_and_curvature_at_origin():
    for cutoff in (1.0, 2.0, 2.5):
        filt = design_derivative_filter(2, cutoff=cutoff)
        half = filt.taps[filt.half_length:]
        k = np.arange(half.size)
        assert abs(filt_value_at_zero(filt)) < 1e-12
        # d^2/dw^2 of t0 + 2 sum t_k cos(k w) at 0 is -2 sum t_k k^2
        assert -2.0 * np.sum(half[1:] * k[1:] ** 2) == pytest.approx(-2.0, rel=1e-10)


def filt_value_at_zero(filt):
    return filter_response(filt, [0.0]).values[0]


@pytest.mark.xfail(strict=True, reason="L = 12 is too short for a 1e-3 pass band with a 0.2 transition")
def test_order_two_short_filter_pass_band():
    filt = design_derivative_filter(2, cutoff=2.0, half_length=12)
    w, response, _ = dtft_oracle(filt.taps)
    band = w <= 1.8
    assert np.max(np.abs(response[band] + w[band] ** 2)) <= 1e-3 * 1.8 ** 2


def test_default_order_two_pass_band():
    filt = design_derivative_filter(2, cutoff=2.0)
    w, response, _ = dtft_oracle(filt.taps)
    band = w <= 1.8
    assert np.max(np.abs(response[band] + w[band] ** 2)) <= 1e-3 * 1.8 ** 2


def test_second_difference_of_quadratic():
    filt = design_derivative_filter(2, cutoff=2.0)
    k = np.arange(200, dtype=float)
    out = np.convolve(k ** 2 / 2.0, filt.taps, mode="valid")
    np.testing.assert_allclose(out, 1.0, atol=1e-3)


def test_delta_filter_response():
    delta = DerivativeFilter(order=0, cutoff=1.0, taps=[1.0])
    np.testing.assert_allclose(filter_response(delta, np.linspace(0, math.pi, 9)).values, 1.0)


def test_response_at_zero_is_tap_sum():
    taps = np.array([0.3, -1.0, 2.5, -1.0, 0.3])
    filt = DerivativeFilter(order=0, cutoff=1.0, taps=taps)
    assert filter_response(filt, [0.0]).values[0] == pytest.approx(taps.sum(), abs=1e-15)


def test_filter_response_matches_oracle():
    filt = design_derivative_filter(6, cutoff=2.0)
    w, oracle, _ = dtft_oracle(filt.taps)
    np.testing.assert_allclose(filter_response(filt, w).values, oracle, atol=1e-9)


def test_order_two_stop_band_at_pi():
    filt = design_derivative_filter(2, cutoff=2.0)
    assert abs(filter_response(filt, [math.pi]).values[0]) <= 1e-2 * math.pi ** 2


@pytest.mark.parametrize("order", [2, 4, 6, 8, 10, 12, 14])
def test_sign_near_origin(order):
    filt = design_derivative_filter(order, cutoff=2.0)
    w = np.linspace(0.05, 1.0, 200, endpoint=False)
    response = filter_response(filt, w).values
    # the smallest values sit below rounding noise for high orders
    visible = np.abs(w ** order) > 1e-9
    assert np.all(np.sign(response[visible]) == (-1) ** (order // 2))


@pytest.mark.parametrize("order", [2, 4])
def test_longer_filters_never_fit_worse(order):
    residuals = [design_derivative_filter(order, 2.0, L).residual for L in range(order, 30)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(residuals, residuals[1:]))


def test_ill_conditioned_design_is_rejected():
    with pytest.raises(DesignError, match="half_length"):
        design_derivative_filter(14, cutoff=3.0, half_length=37)


@pytest.mark.parametrize("kwargs", [
    dict(order=3), dict(order=0), dict(order=16), dict(order=2, cutoff=0.0),
    dict(order=2, cutoff=math.pi), dict(order=6, half_length=4), dict(order=2, grid_points=100),
])
def test_precondition_errors(kwargs):
    with pytest.raises(ValueError):
        design_derivative_filter(**kwargs)


def test_filter_invariants():
    with pytest.raises(InvariantError):
        DerivativeFilter(order=2, cutoff=2.0, taps=[1.0, -2.0, 1.5])
    with pytest.raises(InvariantError):
        DerivativeFilter(order=2, cutoff=2.0, taps=[1.0, 1.0])


def test_filter_response_rejects_out_of_range():
    filt = design_derivative_filter(2)
    with pytest.raises(ValueError):
        filter_response(filt, [-0.1])

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qconsensus.quantize import (
    DitherSource,
    QuantizerSpec,
    dithered_quantize,
    quantization_error,
    quantize,
)


def interval_level(y, delta):
    """Brute-force k with (k - 1/2) delta <= y < (k + 1/2) delta."""
    k = math.floor(y / delta) - 2
    while not ((k - 0.5) * delta <= y < (k + 0.5) * delta):
        k += 1
    return k * delta


def test_quantize_examples():
    assert quantize(0.0, 1.0) == 0.0
    assert quantize(0.74, 0.5) == 0.5
    assert interval_level(0.74, 0.5) == 0.5
    assert quantize(-0.5, 1.0) == 0.0
    assert quantize(-0.51, 1.0) == -1.0
    assert quantize(0.5, 1.0) == 1.0


def test_quantize_rejects_bad_input():
    with pytest.raises(ValueError):
        quantize(math.nan, 1.0)
    with pytest.raises(ValueError):
        quantize(math.inf, 1.0)
    with pytest.raises(ValueError):
        quantize(1.0, 0.0)
    with pytest.raises(ValueError):
        quantize(1e300, 1e-3)


@given(st.floats(-1e6, 1e6), st.sampled_from([0.1, 0.25, 0.5, 1.0, 3.0]))
def test_quantize_matches_interval_definition(y, delta):
    q = quantize(y, delta)
    assert q == pytest.approx(interval_level(y, delta), abs=1e-9 * max(1.0, abs(y)))
    e = quantization_error(y, delta)
    assert -delta / 2 - 1e-9 <= e < delta / 2 + 1e-9


@given(st.floats(-1e3, 1e3), st.integers(-10**6, 10**6))
def test_shift_invariance(y, k):
    delta = 0.5  # exact binary step keeps k * delta exact
    assert quantize(y + k * delta, delta) == quantize(y, delta) + k * delta


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_monotone(y1, y2):
    lo, hi = sorted((y1, y2))
    assert quantize(lo, 0.3) <= quantize(hi, 0.3)


def test_quantize_grid_fixed_points():
    for k in range(-50, 51):
        assert quantize(k * 0.25, 0.25) == k * 0.25


def test_dither_moments_and_support():
    src = DitherSource(123, 1.0)
    nu = src.draw(1_000_000)
    assert np.all(nu >= -0.5) and np.all(nu < 0.5)
    assert abs(nu.mean()) <= 0.0012
    assert nu.var() == pytest.approx(1 / 12, rel=0.01)


def test_dither_reproducible():
    a = DitherSource(99, 0.3)
    b = DitherSource(99, 0.3)
    np.testing.assert_array_equal([a.dither() for _ in range(100)], [b.dither() for _ in range(100)])
    assert DitherSource(100, 0.3).dither() != DitherSource(99, 0.3).dither()


def test_dither_never_hits_upper_edge():
    from qconsensus.quantize import to_dither

    nu = to_dither(np.array([0.0, np.nextafter(1.0, 0.0)]), 3.0)
    assert nu[0] == -1.5
    assert nu[1] < 1.5


def test_dithered_quantize_examples():
    assert dithered_quantize(0.2, 0.25, QuantizerSpec(1.0)) == 0.0
    assert dithered_quantize(1.2, 0.4, QuantizerSpec(1.0, levels=1)) is None
    for k in range(-3, 4):
        assert dithered_quantize(k * 0.5, 0.0, QuantizerSpec(0.5, levels=3)) == k * 0.5
    with pytest.raises(ValueError):
        dithered_quantize(0.0, 0.5, QuantizerSpec(1.0))


@given(st.floats(-20, 20), st.floats(-0.5, 0.4999))
def test_finite_quantizer_alphabet(y, nu):
    spec = QuantizerSpec(1.0, levels=4)
    out = dithered_quantize(y, nu, spec)
    if abs(y + nu) < 4.5:
        assert out in {float(k) for k in range(-4, 5)}
    else:
        assert out is None


def test_quantizer_spec():
    spec = QuantizerSpec(0.5, levels=3)
    assert spec.saturation_level == 1.75
    assert spec.n_levels == 7
    assert spec.bits == 3
    assert QuantizerSpec(1.0).saturation_level == math.inf
    with pytest.raises(ValueError):
        QuantizerSpec(0.0)
    with pytest.raises(ValueError):
        QuantizerSpec(1.0, levels=0)


def test_dithered_error_statistics():
    delta = 0.7
    n = 1_000_000
    y = np.linspace(-50.0, 50.0, n)
    nu = DitherSource(2024, delta).draw(n)
    eps = quantize(y + nu, delta) - (y + nu)
    sigma = delta / math.sqrt(12)
    assert abs(eps.mean()) <= 4 * sigma / math.sqrt(n)
    assert eps.var() == pytest.approx(delta**2 / 12, rel=0.01)
    assert abs(np.corrcoef(y, eps)[0, 1]) < 0.01

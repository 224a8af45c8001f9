import math
from fractions import Fraction

import numpy as np
import pytest

from voxquant.calib import RangeObserver, finalize_params
from voxquant.errors import QuantizedValueOutOfRange, TypeMismatch
from voxquant.quant import (QuantParams, dequantize_array, dequantize_scalar, fake_quantize, quantize_array,
                            quantize_scalar)


def exact_quantize(x, scale, zero_point, bits):
    code = round(Fraction(x) / Fraction(scale)) + zero_point
    return min(max(code, 0), (1 << bits) - 1)


def test_reference_examples():
    p = QuantParams(3 / 255, 85, 8)
    assert quantize_scalar(0.5, p) == 127
    assert quantize_scalar(-2.0, p) == 0
    assert quantize_scalar(1e300, p) == 255
    assert dequantize_scalar(85, p) == 0.0


def test_half_even_rounding():
    p = QuantParams(1.0, 0, 8)
    assert [quantize_scalar(v, p) for v in (0.5, 1.5, 2.5, 3.5)] == [0, 2, 2, 4]
    assert quantize_array(np.array([0.5, 1.5, 2.5, 3.5]), p).tolist() == [0, 2, 2, 4]


def test_against_exact_arithmetic():
    rng = np.random.default_rng(2024)
    for _ in range(10000):
        bits = int(rng.integers(2, 9))
        lo, hi = sorted(rng.uniform(-50.0, 50.0, size=2) * 10.0 ** rng.integers(-3, 2))
        p = finalize_params(RangeObserver(float(lo), float(hi), 1), bits)
        lo_z, hi_z = min(lo, 0.0), max(hi, 0.0)
        exact_scale = (Fraction(hi_z) - Fraction(lo_z)) / ((1 << bits) - 1)
        assert abs(Fraction(p.scale) - exact_scale) <= exact_scale * Fraction(1, 10 ** 12)
        assert p.zero_point == min(max(round(-Fraction(lo_z) / Fraction(p.scale)), 0), p.qmax)
        x = float(rng.uniform(lo_z - (hi_z - lo_z) * 0.1, hi_z + (hi_z - lo_z) * 0.1))
        q = quantize_scalar(x, p)
        assert q == exact_quantize(x, p.scale, p.zero_point, bits)
        back = dequantize_scalar(q, p)
        assert Fraction(back) == Fraction(float((q - p.zero_point) * Fraction(p.scale)))
        if lo_z <= x <= hi_z:
            assert abs(back - x) <= p.scale / 2 * (1 + 1e-9)


def test_array_matches_scalar():
    rng = np.random.default_rng(5)
    p = QuantParams(0.0123, 37, 8)
    x = rng.normal(0.0, 2.0, size=4096).astype(np.float32)
    codes = quantize_array(x, p)
    assert codes.dtype == np.uint8
    assert codes.tolist() == [quantize_scalar(float(v), p) for v in x]
    assert np.array_equal(dequantize_array(codes, p),
                          np.array([dequantize_scalar(int(q), p) for q in codes]).astype(np.float32))


def test_fake_quantize_error_bound():
    p = finalize_params(RangeObserver(-1.0, 3.0, 1), 8)
    x = np.linspace(-1.0, 3.0, 1001)
    assert np.max(np.abs(fake_quantize(x, p) - x)) <= p.scale / 2 + 1e-6


def test_low_bit_widths():
    p = finalize_params(RangeObserver(0.0, 1.0, 1), 4)
    assert p.qmax == 15
    assert p.scale == pytest.approx(1 / 15)
    assert quantize_scalar(1.0, p) == 15
    assert int(quantize_array(np.array([2.0]), p)[0]) == 15


def test_code_out_of_range():
    p = QuantParams(0.1, 0, 4)
    with pytest.raises(QuantizedValueOutOfRange):
        dequantize_scalar(16, p)
    with pytest.raises(QuantizedValueOutOfRange):
        dequantize_scalar(-1, p)
    with pytest.raises(QuantizedValueOutOfRange):
        dequantize_array(np.array([3, 200], dtype=np.uint8), p)


def test_params_validation():
    QuantParams(0.5, 255, 8).validate()
    for bad in (QuantParams(0.0, 0, 8), QuantParams(math.inf, 0, 8), QuantParams(0.1, 16, 4),
                QuantParams(0.1, 0, 9), QuantParams(0.1, 0, 1)):
        with pytest.raises(TypeMismatch):
            bad.validate()


@pytest.mark.parametrize('p', [QuantParams(0.05, 0, 8), QuantParams(0.05, 128, 8), QuantParams(0.3, 7, 4)])
def test_quantize_is_monotonic(p):
    rng = np.random.default_rng(p.zero_point)
    low, high = -p.zero_point * p.scale, (p.qmax - p.zero_point) * p.scale
    ties = (np.arange(-p.zero_point - 2, p.qmax - p.zero_point + 2) + 0.5) * p.scale
    edges = np.array([low, high, np.nextafter(low, -np.inf), np.nextafter(high, np.inf), -1e30, 1e30])
    for _ in range(20):
        x = np.sort(np.concatenate([rng.uniform(2 * low - 1, 2 * high + 1, size=500), ties, edges]))
        codes = quantize_array(x, p).astype(np.int64)
        assert np.all(np.diff(codes) >= 0)
        scalars = [quantize_scalar(v, p) for v in x]
        assert all(a <= b for a, b in zip(scalars, scalars[1:]))
        assert codes[0] == 0 and codes[-1] == p.qmax

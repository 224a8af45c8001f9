'''
Affine quantization of real values to unsigned k-bit codes.

  x_q = clamp(round(x / s) + z, 0, 2^k - 1)
  x   = (x_q - z) * s

round() is half-to-even everywhere: Python's round on scalars, np.rint on
arrays. Both operate on 64-bit quotients so scalar and array paths agree.
'''
import math
from collections import namedtuple

import numpy as np

from .config import MAX_BITS, MIN_BITS
from .errors import QuantizedValueOutOfRange, TypeMismatch


class QuantParams(namedtuple('_QuantParams', ['scale', 'zero_point', 'bits'])):
    '''
    Per-tensor scale, zero point and bit width.
    '''

    @property
    def qmax(self):
        return (1 << self.bits) - 1

    def validate(self):
        if not MIN_BITS <= self.bits <= MAX_BITS:
            raise TypeMismatch('bit width {} outside [{}, {}]'.format(self.bits, MIN_BITS, MAX_BITS))
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise TypeMismatch('scale must be positive and finite, got {!r}'.format(self.scale))
        if not 0 <= self.zero_point <= self.qmax:
            raise TypeMismatch('zero point {} outside [0, {}]'.format(self.zero_point, self.qmax))
        return self

    def as_attrs(self):
        return {'scale': self.scale, 'zero_point': self.zero_point, 'bits': self.bits}

    @classmethod
    def from_attrs(cls, attrs):
        return cls(float(attrs['scale']), int(attrs['zero_point']), int(attrs['bits']))


def quantize_scalar(x, p):
    q = float(x) / p.scale
    # bounded before rounding so huge quotients cannot overflow round()
    limit = float(2 << p.bits)
    q = min(max(q, -limit), limit)
    return min(max(round(q) + p.zero_point, 0), p.qmax)


def dequantize_scalar(q, p):
    if not isinstance(q, (int, np.integer)) or not 0 <= q <= p.qmax:
        raise QuantizedValueOutOfRange('code {!r} outside [0, {}]'.format(q, p.qmax))
    return (int(q) - p.zero_point) * p.scale


def quantize_array(x, p):
    '''
    Elementwise quantize; codes come back as uint8 (every supported bit
    width fits one byte).
    '''
    q = np.asarray(x, dtype=np.float64) / p.scale
    q = np.rint(q, out=q)
    q += p.zero_point
    np.clip(q, 0, p.qmax, out=q)
    return q.astype(np.uint8)


def dequantize_array(q, p):
    codes = np.asarray(q)
    if codes.size and int(codes.max()) > p.qmax:
        raise QuantizedValueOutOfRange('codes above {} for a {}-bit tensor'.format(p.qmax, p.bits))
    return ((codes.astype(np.float64) - p.zero_point) * p.scale).astype(np.float32)


def fake_quantize(x, p):
    return dequantize_array(quantize_array(x, p), p)

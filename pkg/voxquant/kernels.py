'''
Numeric kernels for 3D volumes laid out (N, C, D, H, W).

Convolutions run as im2col + matrix multiply over tiles of output depth
slices. Tile boundaries depend only on the geometry and TILE_COLUMNS, so
results are identical however many worker threads process the tiles.
'''
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import EXACT_F32_LIMIT, TILE_COLUMNS


def pad_volume(x, padding, value=0):
    pd, ph, pw = padding
    if not (pd or ph or pw):
        return x
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)), mode='constant', constant_values=value)


def _windows(xp, kernel, stride):
    # (N, C, D', H', W', kd, kh, kw)
    view = sliding_window_view(xp, kernel, axis=(2, 3, 4))
    return view[:, :, ::stride[0], ::stride[1], ::stride[2]]


def output_tiles(batch, depth, plane):
    '''
    Splits the output into (n, d0, d1) slabs of about TILE_COLUMNS columns.
    '''
    rows = max(1, TILE_COLUMNS // max(1, plane))
    return [(n, d0, min(depth, d0 + rows)) for n in range(batch) for d0 in range(0, depth, rows)]


def im2col(windows, n, d0, d1):
    '''
    Unfolds one slab of patches into a (K, columns) matrix, K ordered
    (channel, kd, kh, kw) to match a weight tensor reshaped to (C_out, K).
    '''
    patch = windows[n, :, d0:d1]
    c, dd, hh, ww, kd, kh, kw = patch.shape
    return patch.transpose(0, 4, 5, 6, 1, 2, 3).reshape(c * kd * kh * kw, dd * hh * ww)


def _run_tiles(fn, tiles, threads):
    if threads <= 1 or len(tiles) < 2:
        for tile in tiles:
            fn(tile)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fn, tiles))


def conv3d_f32(x, weight, bias, stride, padding, threads=1):
    '''
    FP32 convolution: products and sums in float64, rounded to float32 once
    per output element.
    '''
    cout = weight.shape[0]
    kernel = tuple(weight.shape[2:])
    xp = pad_volume(np.asarray(x, dtype=np.float64), padding)
    windows = _windows(xp, kernel, stride)
    batch, _, od, oh, ow = windows.shape[:5]
    matrix = np.asarray(weight, dtype=np.float64).reshape(cout, -1)
    shift = None if bias is None else np.asarray(bias, dtype=np.float64)[:, None]
    out = np.empty((batch, cout, od, oh, ow), dtype=np.float32)

    def tile(job):
        n, d0, d1 = job
        acc = matrix @ im2col(windows, n, d0, d1)
        if shift is not None:
            acc += shift
        out[n, :, d0:d1] = acc.reshape(cout, d1 - d0, oh, ow)

    _run_tiles(tile, output_tiles(batch, od, oh * ow), threads)
    return out


def exact_chunk(k, x_bound, w_bound):
    '''
    Largest reduction length whose float32 partial sums of integer products
    bounded by x_bound * w_bound cannot exceed 2^24.
    '''
    per_term = max(1, x_bound * w_bound)
    return max(1, min(k, EXACT_F32_LIMIT // per_term))


class Int8ConvWeights():
    '''
    Weight-side constants of an integer convolution, prepared once per plan.
    '''

    def __init__(self, weight_codes, weight_zero_point, bias_i32, input_zero_point):
        self.cout = weight_codes.shape[0]
        self.kernel = tuple(weight_codes.shape[2:])
        diffs = weight_codes.astype(np.int32).reshape(self.cout, -1) - weight_zero_point
        self.k = diffs.shape[1]
        self.matrix = diffs.astype(np.float32)
        self.bias = np.asarray(bias_i32, dtype=np.float64)[:, None]
        w_bound = int(np.abs(diffs).max()) if diffs.size else 0
        x_bound = max(input_zero_point, 255 - input_zero_point)
        self.chunk = exact_chunk(self.k, x_bound, w_bound)


def conv3d_int8(codes, zero_point, prepared, stride, padding, multiplier, out_zero_point, clamp_lo, threads=1):
    '''
    Integer convolution over uint8 codes with requantizing epilogue.

    The reduction runs as float32 GEMMs, not int32 arithmetic. It is exact
    only because of the chunk bound: zero-point differences are at most 255
    in magnitude, and `prepared.chunk` (see exact_chunk) caps the reduction
    length so no partial sum leaves [-2^24, 2^24], where float32 holds every
    integer. Chunk results add up in float64, still exactly, which makes the
    accumulator identical to the int32 sum of (x_q - z_x)(w_q - z_w).
    Raising the chunk past that bound would silently round.
    '''
    diffs = np.asarray(codes, dtype=np.float32) - np.float32(zero_point)
    # padding with code z_x contributes exactly zero
    xp = pad_volume(diffs, padding)
    windows = _windows(xp, prepared.kernel, stride)
    batch, _, od, oh, ow = windows.shape[:5]
    cout = prepared.cout
    out = np.empty((batch, cout, od, oh, ow), dtype=np.uint8)
    step = prepared.chunk

    def tile(job):
        n, d0, d1 = job
        cols = im2col(windows, n, d0, d1)
        if step >= prepared.k:
            acc = (prepared.matrix @ cols).astype(np.float64)
        else:
            acc = np.zeros((cout, cols.shape[1]), dtype=np.float64)
            for k0 in range(0, prepared.k, step):
                acc += prepared.matrix[:, k0:k0 + step] @ cols[k0:k0 + step]
        out[n, :, d0:d1] = requantize_array(acc, prepared.bias, multiplier, out_zero_point, clamp_lo).reshape(
            cout, d1 - d0, oh, ow)

    _run_tiles(tile, output_tiles(batch, od, oh * ow), threads)
    return out


def requantize_i32(acc, bias, multiplier, out_zero_point, clamp_lo):
    '''
    clamp(round_half_even(M * (acc + bias)) + z_y, clamp_lo, 255)
    '''
    code = round((int(acc) + int(bias)) * multiplier) + out_zero_point
    return min(max(code, clamp_lo), 255)


def requantize_array(acc, bias, multiplier, out_zero_point, clamp_lo):
    '''
    Array form of requantize_i32. `acc` and `bias` hold exact integers in
    float64, so (acc + bias) * M rounds exactly as the scalar form does.
    '''
    y = acc + bias
    y *= multiplier
    np.rint(y, out=y)
    y += out_zero_point
    np.clip(y, clamp_lo, 255, out=y)
    return y.astype(np.uint8)


def requantize_codes(codes, in_params, out_params):
    '''
    Re-expresses codes under new params: acc = q - z_in with M = s_in / s_out.
    '''
    acc = np.asarray(codes, dtype=np.float64) - in_params.zero_point
    return requantize_array(acc, 0.0, in_params.scale / out_params.scale, out_params.zero_point, 0)


def maxpool3d(x, kernel, stride):
    windows = _windows(np.asarray(x), tuple(kernel), tuple(stride))
    return np.ascontiguousarray(windows.max(axis=(5, 6, 7)))


def upsample3d(x, scale):
    '''
    Nearest-neighbour upsampling by integer factors.
    '''
    out = np.asarray(x)
    for axis, factor in zip((2, 3, 4), scale):
        if factor != 1:
            out = np.repeat(out, factor, axis=axis)
    return np.ascontiguousarray(out)


def softmax(x, axis):
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z.astype(np.float32)


def argmax(x, axis):
    return np.expand_dims(np.argmax(x, axis=axis), axis).astype(np.uint16)


def fan_in(kernel, in_channels):
    return in_channels * math.prod(kernel)

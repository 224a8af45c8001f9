import numpy as np
import pytest
from scipy import ndimage

from voxquant import kernels
from voxquant.config import EXACT_F32_LIMIT
from voxquant.engine import FusedConvInt8
from voxquant.executor import execute_fp32
from voxquant.graph import DYNAMIC, GraphBuilder
from voxquant.oracle import _conv
from voxquant.quant import QuantParams


def direct_conv(x, weight, bias, stride, padding):
    '''
    Nested-loop float64 convolution.
    '''
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    cout, cin, kd, kh, kw = weight.shape
    od, oh, ow = ((xp.shape[2 + i] - weight.shape[2 + i]) // stride[i] + 1 for i in range(3))
    out = np.zeros((x.shape[0], cout, od, oh, ow))
    for z in range(od):
        for y in range(oh):
            for v in range(ow):
                patch = xp[:, :, z * stride[0]:z * stride[0] + kd, y * stride[1]:y * stride[1] + kh,
                           v * stride[2]:v * stride[2] + kw]
                out[:, :, z, y, v] = np.einsum('ncdhw,ocdhw->no', patch, weight)
    if bias is not None:
        out += np.asarray(bias)[None, :, None, None, None]
    return out


@pytest.mark.parametrize('stride,padding', [((1, 1, 1), (1, 1, 1)), ((2, 1, 2), (0, 1, 1)), ((2, 2, 2), (2, 0, 1))])
def test_conv3d_f32_matches_direct(rng, stride, padding):
    x = rng.normal(size=(2, 3, 7, 6, 5))
    weight = rng.normal(size=(4, 3, 3, 2, 3))
    bias = rng.normal(size=4)
    got = kernels.conv3d_f32(x, weight, bias, stride, padding)
    expected = direct_conv(x, weight, bias, stride, padding)
    assert got.dtype == np.float32
    assert got.shape == expected.shape
    assert np.max(np.abs(got - expected)) <= 1e-5


def test_conv3d_f32_matches_scipy(rng):
    x = rng.normal(size=(1, 1, 9, 8, 7))
    weight = rng.normal(size=(1, 1, 3, 3, 3))
    got = kernels.conv3d_f32(x, weight, None, (1, 1, 1), (1, 1, 1))
    expected = ndimage.correlate(x[0, 0], weight[0, 0], mode='constant', cval=0.0)
    assert np.allclose(got[0, 0], expected, rtol=1e-6, atol=1e-6)


def test_two_layer_graph_matches_direct(rng):
    w1, b1 = rng.normal(size=(3, 2, 3, 3, 3)), rng.normal(size=3)
    w2 = rng.normal(size=(2, 3, 1, 1, 1))
    b = GraphBuilder('two-layer')
    x = b.input('volume', (DYNAMIC, 2, 6, 6, 6))
    h = b.conv(x, w1, b1, padding=1, relu=True, name='c1')
    b.output(b.conv(h, w2, None, name='c2'))
    g = b.build()
    volume = rng.normal(size=(1, 2, 6, 6, 6)).astype(np.float32)
    got = execute_fp32(g, volume)['c2']
    # float32 weights as stored in the graph
    hidden = np.maximum(direct_conv(volume, w1.astype(np.float32), b1.astype(np.float32), (1, 1, 1), (1, 1, 1)), 0)
    expected = direct_conv(hidden.astype(np.float32), w2.astype(np.float32), None, (1, 1, 1), (0, 0, 0))
    assert np.max(np.abs(got - expected)) <= 1e-5


def test_output_tiles_cover_volume():
    tiles = kernels.output_tiles(2, 40, 1000)
    rows = {}
    for n, d0, d1 in tiles:
        rows.setdefault(n, []).extend(range(d0, d1))
    assert rows == {0: list(range(40)), 1: list(range(40))}


def test_exact_chunk_bound():
    assert kernels.exact_chunk(100, 255, 255) == 100
    chunk = kernels.exact_chunk(10 ** 6, 255, 255)
    assert chunk * 255 * 255 <= EXACT_F32_LIMIT < (chunk + 1) * 255 * 255
    assert kernels.exact_chunk(5, 0, 0) == 5


def test_requantize_rounds_half_even():
    assert kernels.requantize_i32(1, 0, 0.5, 0, 0) == 0
    assert kernels.requantize_i32(3, 0, 0.5, 0, 0) == 2
    assert kernels.requantize_i32(-10, 0, 1.0, 5, 3) == 3
    assert kernels.requantize_i32(1000, 0, 1.0, 0, 0) == 255
    acc = np.array([[1.0, 3.0, -10.0, 1000.0]])
    assert kernels.requantize_array(acc, 0.0, 0.5, 0, 0).tolist() == [[0, 2, 0, 255]]


def test_int8_conv_chunked_matches_oracle(rng):
    # 11 input channels x 27 taps exceeds the exact float32 chunk for full-range codes
    cin, cout = 11, 2
    codes = rng.integers(0, 256, size=(1, cin, 3, 3, 3)).astype(np.uint8)
    weight_codes = rng.integers(0, 256, size=(cout, cin, 3, 3, 3)).astype(np.uint8)
    bias = rng.integers(-1000, 1000, size=cout).astype(np.int32)
    prepared = kernels.Int8ConvWeights(weight_codes, 0, bias, 0)
    assert prepared.chunk < prepared.k
    multiplier = 1.0 / (cin * 27 * 255)
    got = kernels.conv3d_int8(codes, 0, prepared, (1, 1, 1), (1, 1, 1), multiplier, 3, 0)
    op = FusedConvInt8('x', 'y', weight_codes, QuantParams(1.0, 0, 8), QuantParams(1.0, 0, 8),
                       QuantParams(1.0, 3, 8), bias, multiplier, False, 0, (3, 3, 3), (1, 1, 1), (1, 1, 1), cin, cout)
    assert np.array_equal(got, _conv(codes, op))


def test_int8_conv_zero_point_padding(rng):
    codes = rng.integers(0, 256, size=(1, 2, 4, 4, 4)).astype(np.uint8)
    weight_codes = rng.integers(0, 256, size=(3, 2, 3, 3, 3)).astype(np.uint8)
    bias = np.zeros(3, dtype=np.int32)
    prepared = kernels.Int8ConvWeights(weight_codes, 128, bias, 100)
    got = kernels.conv3d_int8(codes, 100, prepared, (2, 2, 2), (1, 1, 1), 1e-4, 128, 128, threads=2)
    op = FusedConvInt8('x', 'y', weight_codes, QuantParams(1.0, 128, 8), QuantParams(1.0, 100, 8),
                       QuantParams(1.0, 128, 8), bias, 1e-4, True, 128, (3, 3, 3), (2, 2, 2), (1, 1, 1), 2, 3)
    assert np.array_equal(got, _conv(codes, op))
    assert got.min() >= 128


def test_pool_upsample_softmax_argmax():
    x = np.arange(64, dtype=np.float32).reshape(1, 1, 4, 4, 4)
    pooled = kernels.maxpool3d(x, (2, 2, 2), (2, 2, 2))
    assert pooled.shape == (1, 1, 2, 2, 2)
    assert pooled[0, 0, 0, 0, 0] == 21 and pooled[0, 0, 1, 1, 1] == 63
    up = kernels.upsample3d(pooled, (2, 2, 2))
    assert up.shape == (1, 1, 4, 4, 4)
    assert up[0, 0, 1, 1, 1] == 21 and up[0, 0, 3, 2, 3] == 63
    logits = np.array([1.0, 3.0, 2.0], dtype=np.float32).reshape(1, 3, 1, 1, 1)
    probs = kernels.softmax(logits, 1)
    assert probs.sum() == pytest.approx(1.0)
    labels = kernels.argmax(probs, 1)
    assert labels.dtype == np.uint16 and labels.shape == (1, 1, 1, 1, 1) and labels.item() == 1

'''
Slow integer reference for engine plans: nested loops over Python ints, so
no intermediate can overflow. execute_int8_engine must match it bit for bit.
'''
import numpy as np

from .engine import (ConcatInt8, DequantizeOutput, FP32Fallback, FusedConvInt8, MaxPoolInt8, QuantizeInput,
                     RequantizeTensor, UpsampleInt8)
from .executor import bind_inputs, run_node
from .kernels import requantize_i32
from .quant import quantize_scalar


def _quantize(x, params):
    flat = [quantize_scalar(v, params) for v in np.asarray(x, dtype=np.float64).ravel().tolist()]
    return np.array(flat, dtype=np.uint8).reshape(np.shape(x))


def _dequantize(codes, params):
    flat = [(q - params.zero_point) * params.scale for q in np.asarray(codes).ravel().tolist()]
    return np.array(flat, dtype=np.float64).astype(np.float32).reshape(np.shape(codes))


def _requantize(codes, in_params, out_params):
    multiplier = in_params.scale / out_params.scale
    flat = [requantize_i32(q - in_params.zero_point, 0, multiplier, out_params.zero_point, 0)
            for q in np.asarray(codes).ravel().tolist()]
    return np.array(flat, dtype=np.uint8).reshape(np.shape(codes))


def _conv(codes, op):
    batch, cin, depth, height, width = codes.shape
    xs = codes.tolist()
    ws = np.asarray(op.weight_codes).tolist()
    bias = [int(b) for b in op.bias_i32]
    zx, zw = op.input_params.zero_point, op.weight_params.zero_point
    zy = op.output_params.zero_point
    (kd, kh, kw), (sd, sh, sw), (pd, ph, pw) = op.kernel, op.stride, op.padding
    od = (depth + 2 * pd - kd) // sd + 1
    oh = (height + 2 * ph - kh) // sh + 1
    ow = (width + 2 * pw - kw) // sw + 1
    out = np.empty((batch, op.out_channels, od, oh, ow), dtype=np.uint8)
    for n in range(batch):
        for co in range(op.out_channels):
            for z in range(od):
                for y in range(oh):
                    for x in range(ow):
                        acc = 0
                        for ci in range(cin):
                            for i in range(kd):
                                zz = z * sd - pd + i
                                if not 0 <= zz < depth:
                                    continue
                                for j in range(kh):
                                    yy = y * sh - ph + j
                                    if not 0 <= yy < height:
                                        continue
                                    for k in range(kw):
                                        xx = x * sw - pw + k
                                        if not 0 <= xx < width:
                                            continue
                                        acc += (xs[n][ci][zz][yy][xx] - zx) * (ws[co][ci][i][j][k] - zw)
                        out[n, co, z, y, x] = requantize_i32(acc, bias[co], op.requant_multiplier, zy, op.clamp_lo)
    return out


def _maxpool(codes, kernel, stride):
    batch, channels, depth, height, width = codes.shape
    (kd, kh, kw), (sd, sh, sw) = kernel, stride
    od, oh, ow = (depth - kd) // sd + 1, (height - kh) // sh + 1, (width - kw) // sw + 1
    xs = codes.tolist()
    out = np.empty((batch, channels, od, oh, ow), dtype=codes.dtype)
    for n in range(batch):
        for c in range(channels):
            for z in range(od):
                for y in range(oh):
                    for x in range(ow):
                        out[n, c, z, y, x] = max(xs[n][c][z * sd + i][y * sh + j][x * sw + k]
                                                 for i in range(kd) for j in range(kh) for k in range(kw))
    return out


def _upsample(codes, scale):
    batch, channels, depth, height, width = codes.shape
    fd, fh, fw = scale
    out = np.empty((batch, channels, depth * fd, height * fh, width * fw), dtype=codes.dtype)
    for z in range(depth * fd):
        for y in range(height * fh):
            for x in range(width * fw):
                out[:, :, z, y, x] = codes[:, :, z // fd, y // fh, x // fw]
    return out


def execute_integer_oracle(plan, volume, keep_all=False):
    '''
    Evaluates `plan` with the canonical integer formulas. With keep_all the
    whole tensor environment is returned, not only the plan outputs.
    '''
    env = bind_inputs(list(plan.inputs), plan.tensors, volume)
    for op in plan.ops:
        if isinstance(op, QuantizeInput):
            env[op.dst] = _quantize(env[op.src], op.params)
        elif isinstance(op, DequantizeOutput):
            env[op.dst] = _dequantize(env[op.src], op.params)
        elif isinstance(op, FusedConvInt8):
            env[op.dst] = _conv(env[op.src], op)
        elif isinstance(op, MaxPoolInt8):
            env[op.dst] = _maxpool(env[op.src], op.kernel, op.stride)
        elif isinstance(op, UpsampleInt8):
            env[op.dst] = _upsample(env[op.src], op.scale)
        elif isinstance(op, ConcatInt8):
            env[op.dst] = np.concatenate([env[name] for name in op.srcs], axis=op.axis)
        elif isinstance(op, RequantizeTensor):
            env[op.dst] = _requantize(env[op.src], op.in_params, op.out_params)
        elif isinstance(op, FP32Fallback):
            args = [env[name] for name in op.srcs] + [array for _, array in op.weights]
            env[op.dsts[0]] = run_node(op.kind, op.attrs, args)
        else:
            raise TypeError('unknown plan op {!r}'.format(type(op).__name__))
    if keep_all:
        return env
    return {name: env[name] for name in plan.outputs}

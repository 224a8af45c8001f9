'''
Random graph and engine fixtures shared by the engine, oracle and qdq tests.
'''
import math
from collections import namedtuple

import numpy as np

from voxquant.calib import calibrate_graph
from voxquant.engine import build_engine
from voxquant.executor import bind_inputs, execute_fp32, run_op
from voxquant.graph import DYNAMIC, GraphBuilder
from voxquant.qdq import parse_policy, insert_qdq

Fixture = namedtuple('Fixture', ['graph', 'fake', 'plan', 'volume', 'pattern', 'policy', 'fuse_relu'])

PATTERNS = ('chain', 'unet', 'residual', 'branch')
SMALL_SHAPE = (16, 16, 16)
CLASSES = 4


def random_volume(rng, shape):
    return rng.normal(0.0, 1.0, size=(1,) + tuple(shape)).astype(np.float32)


def _conv_params(rng, cout, cin, k, bias):
    weight = rng.normal(0.0, 1.0 / math.sqrt(cin * k ** 3), size=(cout, cin, k, k, k))
    return weight, (rng.normal(0.0, 0.1, size=cout) if bias else None)


def random_graph(rng, pattern=None, bias=True):
    '''
    Small conv network of one of four shapes:
      chain     strided conv (optional ReLU) -> 1x1x1 head
      unet      conv -> pool -> upsample -> concat with the conv -> head
      residual  two convs added together -> head
      branch    conv + ReLU and a plain conv of the same input, concatenated
                (non-negative next to mixed-sign channels) -> head
    '''
    pattern = pattern or PATTERNS[int(rng.integers(0, len(PATTERNS)))]
    cin = int(rng.integers(1, 3))
    width = int(rng.integers(1, 4))
    dims = tuple(int(d) for d in rng.choice([4, 6], size=3))
    relu = bool(rng.integers(0, 2))
    b = GraphBuilder('random-' + pattern)
    x = b.input('volume', (DYNAMIC, cin) + dims)
    if pattern == 'chain':
        k = int(rng.choice([1, 3]))
        stride = int(rng.integers(1, 3))
        padding = int(rng.integers(0, k // 2 + 1))
        h = b.conv(x, *_conv_params(rng, width, cin, k, bias), stride=stride, padding=padding, relu=relu, name='c1')
        head_in = width
    elif pattern == 'unet':
        h1 = b.conv(x, *_conv_params(rng, width, cin, 3, bias), padding=1, relu=relu, name='c1')
        up = b.upsample(b.maxpool(h1, 2, name='pool'), 2, name='up')
        h = b.concat([up, h1], name='cat')
        head_in = 2 * width
    elif pattern == 'residual':
        h1 = b.conv(x, *_conv_params(rng, width, cin, 3, bias), padding=1, relu=True, name='c1')
        h2 = b.conv(h1, *_conv_params(rng, width, width, 3, bias), padding=1, relu=relu, name='c2')
        h = b.add(h1, h2, name='sum')
        head_in = width
    else:
        a = b.conv(x, *_conv_params(rng, width, cin, 3, bias), padding=1, relu=True, name='a')
        c = b.conv(x, *_conv_params(rng, 1, cin, 1, bias), name='c')
        h = b.concat([a, c] if relu else [c, a], name='cat')
        head_in = width + 1
    y = b.conv(h, *_conv_params(rng, 2, head_in, 1, bias), name='head')
    b.output(y)
    return b.build()


def random_fixture(rng, pattern=None, bias=True):
    g = random_graph(rng, pattern, bias)
    shape = g.inputs[0].shape[1:]
    policy = parse_policy('all' if rng.integers(0, 2) else 'conv')
    fuse_relu = bool(rng.integers(0, 2))
    calib = [random_volume(rng, shape) for _ in range(2)]
    table = calibrate_graph(g, calib, policy)
    fake = insert_qdq(g, table, policy)
    plan = build_engine(fake, 1, fuse_relu=fuse_relu)
    return Fixture(g, fake, plan, random_volume(rng, shape), g.name.split('-', 1)[1], policy, fuse_relu)


def fake_codes(fake, volume):
    '''
    Codes every Quantize node of a fake-quantized graph emits, by tensor name.
    '''
    quantized = {node.output for node in fake.nodes if node.kind == 'Quantize'}
    codes = {}
    execute_fp32(fake, volume, observer=lambda name, data: codes.setdefault(name, data) if name in quantized else None)
    return codes


def per_op_code_gaps(plan, fake, volume):
    '''
    Runs the plan op by op, comparing every tensor the fake-quantized graph
    also quantizes and then continuing from the fake codes, so each gap
    measures one op given identical inputs. Returns {name: max |diff|}.
    '''
    reference = fake_codes(fake, volume)
    env = bind_inputs(list(plan.inputs), plan.tensors, volume)
    gaps = {}
    for i, op in enumerate(plan.ops):
        run_op(plan, i, op, env)
        for name in plan.op_writes(op):
            if name in reference:
                diff = np.abs(env[name].astype(np.int64) - reference[name].astype(np.int64))
                gaps[name] = int(diff.max())
                env[name] = reference[name]
    return gaps

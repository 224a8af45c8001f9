'''
Compiles a fake-quantized graph into an INT8 engine plan and reads/writes
the binary engine file.
'''
import json
import logging
import math
import struct
import zlib
from collections import namedtuple

import numpy as np

from .config import ENGINE_BITS, ENGINE_MAGIC, ENGINE_VERSION, MAX_FAN_IN
from .errors import (AccumulatorOverflow, BadMagic, ChecksumMismatch, EngineFormatError, GraphError,
                     MalformedQdqPattern, TruncatedFile, UnsupportedBits, UnsupportedVersion)
from .graph import OP_KINDS, QDQ_KINDS, TensorSpec, peak_live_bytes, tensor_nbytes, validate_and_infer_shapes
from .kernels import Int8ConvWeights, fan_in
from .quant import QuantParams, fake_quantize, quantize_array

logger = logging.getLogger(__name__)

QuantizeInput = namedtuple('QuantizeInput', ['src', 'dst', 'params'])
DequantizeOutput = namedtuple('DequantizeOutput', ['src', 'dst', 'params'])
FusedConvInt8 = namedtuple('FusedConvInt8', ['src', 'dst', 'weight_codes', 'weight_params', 'input_params',
                                             'output_params', 'bias_i32', 'requant_multiplier', 'relu_fused',
                                             'clamp_lo', 'kernel', 'stride', 'padding', 'in_channels',
                                             'out_channels'])
MaxPoolInt8 = namedtuple('MaxPoolInt8', ['src', 'dst', 'kernel', 'stride'])
UpsampleInt8 = namedtuple('UpsampleInt8', ['src', 'dst', 'scale'])
ConcatInt8 = namedtuple('ConcatInt8', ['srcs', 'dst', 'axis'])
RequantizeTensor = namedtuple('RequantizeTensor', ['src', 'dst', 'in_params', 'out_params'])
FP32Fallback = namedtuple('FP32Fallback', ['kind', 'attrs', 'srcs', 'dsts', 'weights'])

SizeReport = namedtuple('SizeReport', ['fp32_bytes', 'int8_bytes', 'ratio', 'sections', 'workspace'])


def op_reads(op):
    if isinstance(op, ConcatInt8):
        return tuple(op.srcs)
    if isinstance(op, FP32Fallback):
        return tuple(op.srcs)
    return (op.src,)


def op_writes(op):
    if isinstance(op, FP32Fallback):
        return tuple(op.dsts)
    return (op.dst,)


class EnginePlan():
    '''
    Ordered INT8 program plus its tensor registry. Immutable once built;
    conv weight matrices are prepared eagerly so one plan can serve
    concurrent inferences.
    '''

    def __init__(self, ops, tensors, inputs, outputs):
        self.ops = tuple(ops)
        self.tensors = dict(tensors)
        self.inputs = tuple(inputs)
        self.outputs = tuple(outputs)
        steps = [(op_reads(op), op_writes(op)) for op in self.ops]
        sizes = {name: tensor_nbytes(spec) for name, spec in self.tensors.items()}
        self.workspace_bytes, self.naive_bytes = peak_live_bytes(steps, sizes, keep=self.outputs)
        self.last_use = {}
        for i, (reads, _) in enumerate(steps):
            for name in reads:
                self.last_use[name] = i
        for name in self.outputs:
            self.last_use[name] = len(self.ops)
        self._prepared = {}
        for i, op in enumerate(self.ops):
            if isinstance(op, FusedConvInt8):
                self._prepared[i] = Int8ConvWeights(op.weight_codes, op.weight_params.zero_point, op.bias_i32,
                                                    op.input_params.zero_point)

    op_reads = staticmethod(op_reads)
    op_writes = staticmethod(op_writes)

    def prepared(self, index):
        return self._prepared[index]

    @property
    def batch(self):
        return self.tensors[self.inputs[0]].shape[0]

    def count(self, op_type):
        return sum(1 for op in self.ops if isinstance(op, op_type))

    def describe(self):
        '''
        One line per op, used by `inspect`.
        '''
        lines = []
        for i, op in enumerate(self.ops):
            name = type(op).__name__
            reads = ', '.join(op_reads(op))
            writes = ', '.join('{} {}{}'.format(n, self.tensors[n].dtype, list(self.tensors[n].shape))
                               for n in op_writes(op))
            extra = ''
            if isinstance(op, FusedConvInt8):
                extra = ' k={} s={} p={} relu_fused={} clamp_lo={} M={:.6g}'.format(
                    op.kernel, op.stride, op.padding, op.relu_fused, op.clamp_lo, op.requant_multiplier)
            elif isinstance(op, FP32Fallback):
                extra = ' kind={}'.format(op.kind)
            lines.append('{:3d} {:<17} {} -> {}{}'.format(i, name, reads, writes, extra))
        return lines


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

# domain of a graph tensor inside the plan:
#   f32     plan tensor holds real values
#   u8      plan tensor holds codes under `params`
#   const   raw manifest weight
#   wq      quantized weight awaiting its Dequantize
#   weight  fake-quantized weight, foldable into a conv
Value = namedtuple('Value', ['domain', 'name', 'params'])


class _PlanBuilder():

    def __init__(self, g, fuse_relu):
        self.g = g
        self.fuse_relu = fuse_relu
        self.consumers = g.consumers()
        self.output_names = {spec.name for spec in g.outputs}
        self.ops = []
        self.tensors = {}
        self.values = {}
        self.absorbed = set()
        self.f32_cache = {}
        self.u8_cache = {}

    def _name(self, stem, owner=None):
        name, i = stem, 1
        while name in self.tensors or (name in self.output_names and name != owner):
            name = '{}_{}'.format(stem, i)
            i += 1
        return name

    def _emit(self, op, dst, dtype, shape):
        self.tensors[dst] = TensorSpec(dst, dtype, tuple(shape))
        self.ops.append(op)

    def _shape(self, tensor):
        return self.g.tensors[tensor].shape

    def as_f32(self, tensor):
        value = self.values[tensor]
        if value.domain == 'f32':
            return value.name
        if value.domain != 'u8':
            raise MalformedQdqPattern('weight {} is used as an activation'.format(tensor))
        if value.name not in self.f32_cache:
            dst = self._name(tensor, owner=tensor)
            self._emit(DequantizeOutput(value.name, dst, value.params), dst, 'F32', self._shape(tensor))
            self.f32_cache[value.name] = dst
        return self.f32_cache[value.name]

    def as_u8(self, tensor, params, hint=None):
        value = self.values[tensor]
        if value.domain == 'u8' and value.params == params:
            return value.name
        key = (value.name, params)
        if key in self.u8_cache:
            return self.u8_cache[key]
        if value.domain == 'u8':
            dst = self._name(hint or tensor + '_rq')
            op = RequantizeTensor(value.name, dst, value.params, params)
            logger.debug('requantize %s -> %s (scale %r -> %r)', value.name, dst, value.params.scale, params.scale)
        elif value.domain == 'f32':
            dst = self._name(hint or tensor + '_q')
            op = QuantizeInput(value.name, dst, params)
        else:
            raise MalformedQdqPattern('weight {} is quantized as an activation'.format(tensor))
        self._emit(op, dst, 'U8', self._shape(tensor))
        self.u8_cache[key] = dst
        return dst

    def build(self):
        g = self.g
        for spec in g.inputs:
            if spec.dtype != 'F32':
                raise MalformedQdqPattern('engine input {} must be F32, got {}'.format(spec.name, spec.dtype))
            self.tensors[spec.name] = spec
            self.values[spec.name] = Value('f32', spec.name, None)
        for entry in g.weights:
            self.values[entry.name] = Value('const', entry.name, None)
        for node in g.topological_order():
            if node.id in self.absorbed:
                continue
            handler = getattr(self, '_' + node.kind.lower(), self._fallback)
            handler(node)
        outputs = []
        for spec in g.outputs:
            name = self.as_f32(spec.name)
            if name != spec.name:
                raise MalformedQdqPattern('graph output {} cannot leave the engine under its own name'.format(spec.name))
            outputs.append(name)
        plan = EnginePlan(self.ops, self.tensors, [spec.name for spec in g.inputs], outputs)
        logger.info('engine built: %d ops, %d fused convs, %d fallbacks, workspace %d bytes', len(plan.ops),
                    plan.count(FusedConvInt8), plan.count(FP32Fallback), plan.workspace_bytes)
        return plan

    def _quantize(self, node):
        src = node.inputs[0]
        params = QuantParams.from_attrs(node.attrs)
        value = self.values[src]
        if value.domain == 'const':
            self.values[node.output] = Value('wq', src, params)
            return
        self.values[node.output] = Value('u8', self.as_u8(src, params, hint=node.output), params)

    def _dequantize(self, node):
        value = self.values[node.inputs[0]]
        params = QuantParams.from_attrs(node.attrs)
        if value.domain == 'wq':
            self.values[node.output] = Value('weight', value.name, params)
        elif value.domain == 'u8':
            # codes are reinterpreted under the Dequantize params
            self.values[node.output] = Value('u8', value.name, params)
        else:
            raise MalformedQdqPattern('node {} dequantizes {} which holds no codes'.format(node.id, node.inputs[0]))

    def _epilogue(self, node):
        '''
        Finds the (ReLU, Quantize) tail that lets a conv emit codes directly.
        '''
        out = node.output
        relu = None
        users = self.consumers.get(out, [])
        if len(users) == 1 and users[0].kind == 'ReLU' and out not in self.output_names:
            relu = users[0]
            out = relu.output
        users = self.consumers.get(out, [])
        if out in self.output_names or len(users) != 1 or users[0].kind != 'Quantize':
            return None
        return relu, users[0]

    def _conv3d(self, node):
        x, w = node.inputs[0], node.inputs[1]
        bias = node.inputs[2] if len(node.inputs) > 2 else None
        vx, vw = self.values[x], self.values[w]
        if bias is not None and self.values[bias].domain != 'const':
            raise MalformedQdqPattern('node {} has a quantized bias {}'.format(node.id, bias))
        tail = self._epilogue(node) if vx.domain == 'u8' and vw.domain == 'weight' else None
        if tail is None:
            self._conv_fallback(node)
            return
        relu, quant = tail
        attrs = node.attrs
        k = fan_in(attrs['kernel'], attrs['in_channels'])
        if k > MAX_FAN_IN:
            raise AccumulatorOverflow('node {} has fan-in {} above {}; int32 accumulators could overflow'.format(
                node.id, k, MAX_FAN_IN))
        px, pw = vx.params, vw.params
        py = QuantParams.from_attrs(quant.attrs)
        weight_codes = quantize_array(self.g.weight_array(vw.name), pw)
        cout = attrs['out_channels']
        bias_i32 = np.zeros(cout, dtype=np.int32)
        if bias is not None:
            folded = np.rint(self.g.weight_array(bias).astype(np.float64) / (px.scale * pw.scale))
            if np.abs(folded).max() > np.iinfo(np.int32).max:
                raise AccumulatorOverflow('node {} bias does not fit int32 at scale {!r}'.format(
                    node.id, px.scale * pw.scale))
            bias_i32 = folded.astype(np.int32)
        fused = relu is not None and self.fuse_relu
        if relu is None or fused:
            dst = self._name(quant.output)
            self.absorbed.update({quant.id} | ({relu.id} if fused else set()))
            produced = quant.output
        else:
            dst = self._name(node.output)
            produced = node.output
        op = FusedConvInt8(src=vx.name, dst=dst, weight_codes=weight_codes, weight_params=pw, input_params=px,
                           output_params=py, bias_i32=bias_i32,
                           requant_multiplier=(px.scale * pw.scale) / py.scale, relu_fused=fused,
                           clamp_lo=py.zero_point if fused else 0, kernel=tuple(attrs['kernel']),
                           stride=tuple(attrs['stride']), padding=tuple(attrs['padding']),
                           in_channels=attrs['in_channels'], out_channels=cout)
        self._emit(op, dst, 'U8', self._shape(node.output))
        self.values[produced] = Value('u8', dst, py)
        logger.debug('fused %s%s into %s', node.id, ' + ' + relu.id if fused else '', dst)

    def _conv_fallback(self, node):
        x, w = node.inputs[0], node.inputs[1]
        vw = self.values[w]
        if vw.domain not in ('weight', 'const'):
            raise MalformedQdqPattern('node {} weight {} is neither raw nor dequantized'.format(node.id, w))
        data = self.g.weight_array(vw.name)
        weights = [(vw.name, fake_quantize(data, vw.params) if vw.domain == 'weight' else data)]
        if len(node.inputs) > 2:
            weights.append((node.inputs[2], self.g.weight_array(node.inputs[2])))
        logger.warning('conv %s stays in FP32: no quantized input/output pattern', node.id)
        self._fallback(node, weights=weights, srcs=[x])

    def _maxpool3d(self, node):
        value = self.values[node.inputs[0]]
        if value.domain != 'u8':
            return self._fallback(node)
        dst = self._name(node.output)
        op = MaxPoolInt8(value.name, dst, tuple(node.attrs['kernel']), tuple(node.attrs['stride']))
        self._emit(op, dst, 'U8', self._shape(node.output))
        self.values[node.output] = Value('u8', dst, value.params)

    def _upsample3d(self, node):
        value = self.values[node.inputs[0]]
        if value.domain != 'u8':
            return self._fallback(node)
        dst = self._name(node.output)
        self._emit(UpsampleInt8(value.name, dst, tuple(node.attrs['scale'])), dst, 'U8', self._shape(node.output))
        self.values[node.output] = Value('u8', dst, value.params)

    def _concat(self, node):
        values = [self.values[name] for name in node.inputs]
        if any(value.domain != 'u8' for value in values):
            return self._fallback(node)
        canonical, quant = self._concat_params(node, values)
        srcs = [self.as_u8(name, canonical) for name in node.inputs]
        # codes already on the reader's grid carry the reader's name, as fused convs do
        dst = self._name(quant.output if quant is not None else node.output)
        self._emit(ConcatInt8(tuple(srcs), dst, node.attrs['axis']), dst, 'U8', self._shape(node.output))
        self.values[node.output] = Value('u8', dst, canonical)

    def _concat_params(self, node, values):
        '''
        Returns (params, quant): the grid every concat input is requantized
        onto and the Quantize node whose grid it is, if any. When a single
        Quantize reads the concat, each input takes exactly one rounding step
        onto that grid, as in the fake-quantized graph. Otherwise the grid
        covers the union of the input ranges.
        '''
        from .calib import RangeObserver, finalize_params

        users = self.consumers.get(node.output, [])
        if len(users) == 1 and users[0].kind == 'Quantize' and node.output not in self.output_names:
            return QuantParams.from_attrs(users[0].attrs), users[0]
        if len({value.params for value in values}) == 1:
            return values[0].params, None
        lo = min(-value.params.zero_point * value.params.scale for value in values)
        hi = max((value.params.qmax - value.params.zero_point) * value.params.scale for value in values)
        return finalize_params(RangeObserver(lo, hi, len(values)), values[0].params.bits), None

    def _fallback(self, node, weights=(), srcs=None):
        srcs = [self.as_f32(name) for name in (node.inputs if srcs is None else srcs)]
        out = node.output
        dst = self._name(out, owner=out)
        spec = self.g.tensors[out]
        attrs = {key: value for key, value in node.attrs.items() if key not in ('weight', 'bias')}
        self._emit(FP32Fallback(node.kind, attrs, tuple(srcs), (dst,), tuple(weights)), dst, spec.dtype, spec.shape)
        self.values[out] = Value('f32', dst, None)
        logger.debug('%s %s runs as FP32 fallback', node.kind, node.id)


def build_engine(g_fake, batch=1, fuse_relu=True):
    '''
    Compiles a fake-quantized graph into an EnginePlan for a fixed batch.
    `fuse_relu=False` keeps ReLU as a separate FP32 step (for comparison).
    '''
    for node in g_fake.nodes:
        if node.kind in QDQ_KINDS and node.attrs['bits'] != ENGINE_BITS:
            raise UnsupportedBits('node {} uses {}-bit params; the engine runs {}-bit kernels only'.format(
                node.id, node.attrs['bits'], ENGINE_BITS))
    g = validate_and_infer_shapes(g_fake, batch)
    return _PlanBuilder(g, fuse_relu).build()


# ---------------------------------------------------------------------------
# engine file
# ---------------------------------------------------------------------------

# engine file encoding scheme:
#   magic 'VQE1' | version u8 | flags u8
#   u32 len | plan       tensor registry, input/output indices, ops
#   u32 len | params     (f64 scale, i32 zero_point, u8 bits) per entry
#   u64 len | weights    uint8 conv codes, float32 fallback weights
#   u64 len | biases     int32 per output channel of every fused conv
#   u32 crc32 of everything before it
# every op is one opcode byte followed by its operands; tensors are u32
# registry indices and params are u32 indices into the params section.
#   Q  src dst params
#   D  src dst params
#   C  src dst w_params x_params y_params M:f64 relu:u8 clamp_lo:u8 kernel stride
#      padding (3 x u16 each) in:u32 out:u32 weight_offset:u64 bias_offset:u64
#   P  src dst kernel stride
#   U  src dst scale
#   K  u16 n, n srcs, dst, axis:u8
#   R  src dst in_params out_params
#   F  kind attrs:json u16 n srcs u16 n dsts u16 n (name, rank:u8, dims:u32, offset:u64)
OPCODES = {QuantizeInput: b'Q', DequantizeOutput: b'D', FusedConvInt8: b'C', MaxPoolInt8: b'P',
           UpsampleInt8: b'U', ConcatInt8: b'K', RequantizeTensor: b'R', FP32Fallback: b'F'}
DECODE = {code: op_type for op_type, code in OPCODES.items()}
DTYPE_CODES = {'F32': 0, 'U8': 1, 'I32': 2, 'U16': 3}
DTYPE_NAMES = {code: name for name, code in DTYPE_CODES.items()}
HEADER = struct.Struct('<4sBB')


class _Writer():

    def __init__(self):
        self.parts = []

    def pack(self, fmt, *values):
        self.parts.append(struct.pack('<' + fmt, *values))

    def text(self, value):
        data = value.encode('utf-8')
        self.pack('H', len(data))
        self.parts.append(data)

    def raw(self, data):
        self.parts.append(bytes(data))

    def getvalue(self):
        return b''.join(self.parts)


class _Reader():

    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFile('engine section ends {} bytes early'.format(self.pos + n - len(self.data)))
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        fmt = struct.Struct('<' + fmt)
        values = fmt.unpack(self.take(fmt.size))
        return values if len(values) > 1 else values[0]

    def text(self):
        return self.take(self.unpack('H')).decode('utf-8')


def _json_attrs(attrs):
    return json.dumps({k: list(v) if isinstance(v, tuple) else v for k, v in attrs.items()},
                      sort_keys=True, separators=(',', ':'))


def _attrs_from_json(text):
    attrs = json.loads(text)
    if not isinstance(attrs, dict):
        raise EngineFormatError('fallback attrs must be a JSON object, got {}'.format(type(attrs).__name__))
    return {k: tuple(v) if isinstance(v, list) else v for k, v in attrs.items()}


def _check_dataflow(ops, tensors, names, inputs, outputs):
    '''
    Every op reads only plan inputs or earlier results, every fallback
    writes one tensor, and every plan output gets written.
    '''
    if len(tensors) != len(names):
        raise EngineFormatError('tensor registry names {} twice'.format(
            next(name for name in names if names.count(name) > 1)))
    ready = set(inputs)
    for i, op in enumerate(ops):
        if isinstance(op, FP32Fallback):
            if op.kind not in OP_KINDS:
                raise EngineFormatError('op {} falls back to unknown kind {!r}'.format(i, op.kind))
            if len(op.dsts) != 1:
                raise EngineFormatError('op {} ({}) writes {} tensors'.format(i, op.kind, len(op.dsts)))
        for name in op_reads(op):
            if name not in ready:
                raise EngineFormatError('op {} reads {} before anything writes it'.format(i, name))
        ready.update(op_writes(op))
    for name in outputs:
        if name not in ready:
            raise EngineFormatError('plan output {} is never written'.format(name))


def serialize_engine(p):
    '''
    Canonical binary encoding; deserialize_engine inverts it exactly.
    '''
    index = {name: i for i, name in enumerate(p.tensors)}
    params = {}
    weights = _Writer()
    biases = _Writer()
    plan = _Writer()

    def qp(value):
        return params.setdefault(value, len(params))

    def blob(data):
        offset = sum(len(part) for part in weights.parts)
        weights.raw(np.ascontiguousarray(data).tobytes())
        return offset

    plan.pack('I', len(p.tensors))
    for name, spec in p.tensors.items():
        plan.text(name)
        plan.pack('BB', DTYPE_CODES[spec.dtype], len(spec.shape))
        plan.pack('{}I'.format(len(spec.shape)), *spec.shape)
    for names in (p.inputs, p.outputs):
        plan.pack('H', len(names))
        plan.pack('{}I'.format(len(names)), *(index[name] for name in names))
    plan.pack('I', len(p.ops))
    for op in p.ops:
        plan.raw(OPCODES[type(op)])
        if isinstance(op, (QuantizeInput, DequantizeOutput)):
            plan.pack('III', index[op.src], index[op.dst], qp(op.params))
        elif isinstance(op, FusedConvInt8):
            bias_offset = sum(len(part) for part in biases.parts)
            biases.raw(np.asarray(op.bias_i32, dtype='<i4').tobytes())
            plan.pack('IIIIIdBB', index[op.src], index[op.dst], qp(op.weight_params), qp(op.input_params),
                      qp(op.output_params), op.requant_multiplier, int(op.relu_fused), op.clamp_lo)
            plan.pack('9H', *(op.kernel + op.stride + op.padding))
            plan.pack('IIQQ', op.in_channels, op.out_channels, blob(np.asarray(op.weight_codes, dtype=np.uint8)),
                      bias_offset)
        elif isinstance(op, MaxPoolInt8):
            plan.pack('II6H', index[op.src], index[op.dst], *(op.kernel + op.stride))
        elif isinstance(op, UpsampleInt8):
            plan.pack('II3H', index[op.src], index[op.dst], *op.scale)
        elif isinstance(op, ConcatInt8):
            plan.pack('H', len(op.srcs))
            plan.pack('{}I'.format(len(op.srcs)), *(index[name] for name in op.srcs))
            plan.pack('IB', index[op.dst], op.axis)
        elif isinstance(op, RequantizeTensor):
            plan.pack('IIII', index[op.src], index[op.dst], qp(op.in_params), qp(op.out_params))
        else:
            plan.text(op.kind)
            attrs = _json_attrs(op.attrs).encode('utf-8')
            plan.pack('I', len(attrs))
            plan.raw(attrs)
            for names in (op.srcs, op.dsts):
                plan.pack('H', len(names))
                plan.pack('{}I'.format(len(names)), *(index[name] for name in names))
            plan.pack('H', len(op.weights))
            for name, array in op.weights:
                plan.text(name)
                plan.pack('B', array.ndim)
                plan.pack('{}I'.format(array.ndim), *array.shape)
                plan.pack('Q', blob(np.asarray(array, dtype='<f4')))

    table = _Writer()
    for value in params:
        table.pack('diB', value.scale, value.zero_point, value.bits)

    out = _Writer()
    out.raw(HEADER.pack(ENGINE_MAGIC, ENGINE_VERSION, 0))
    for section, width in ((plan, 'I'), (table, 'I'), (weights, 'Q'), (biases, 'Q')):
        data = section.getvalue()
        out.pack(width, len(data))
        out.raw(data)
    body = out.getvalue()
    return body + struct.pack('<I', zlib.crc32(body))


def _sections(b):
    '''
    Walks the framing and verifies the checksum; returns the four section
    payloads. Raises the format error matching the first problem found.
    '''
    b = bytes(b)
    if len(b) < 4 or b[:4] != ENGINE_MAGIC:
        raise BadMagic('not an engine file (magic {!r})'.format(b[:4]))
    reader = _Reader(b)
    _, version, _ = HEADER.unpack(reader.take(HEADER.size))
    if version != ENGINE_VERSION:
        raise UnsupportedVersion('engine version {} is not supported (expected {})'.format(version, ENGINE_VERSION))
    sections = [reader.take(reader.unpack(width)) for width in ('I', 'I', 'Q', 'Q')]
    body_end = reader.pos
    stored = reader.unpack('I')
    if reader.pos != len(b):
        raise ChecksumMismatch('{} unexpected bytes after the checksum'.format(len(b) - reader.pos))
    if zlib.crc32(b[:body_end]) != stored:
        raise ChecksumMismatch('engine checksum mismatch')
    return sections


def engine_sections(b):
    '''
    Byte size of each part of an engine file.
    '''
    plan, params, weights, biases = _sections(b)
    return {'header': HEADER.size, 'plan': 4 + len(plan), 'quant_params': 4 + len(params),
            'weights': 8 + len(weights), 'biases': 8 + len(biases), 'checksum': 4}


def deserialize_engine(b):
    plan_bytes, param_bytes, weight_bytes, bias_bytes = _sections(b)
    if len(param_bytes) % 13:
        raise EngineFormatError('quant-param section length {} is not a multiple of 13'.format(len(param_bytes)))
    params = [QuantParams(*struct.unpack_from('<diB', param_bytes, i)) for i in range(0, len(param_bytes), 13)]
    reader = _Reader(plan_bytes)

    def ints(count, width='I'):
        values = reader.unpack('{}{}'.format(count, width)) if count else ()
        return tuple(values) if isinstance(values, tuple) else (values,)

    def weight_view(offset, dtype, shape):
        count = math.prod(shape)
        if offset + count * np.dtype(dtype).itemsize > len(weight_bytes):
            raise TruncatedFile('weight payload runs past the weight section')
        return np.frombuffer(weight_bytes, dtype=dtype, count=count, offset=offset).reshape(shape)

    try:
        names = []
        tensors = {}
        for _ in range(reader.unpack('I')):
            name = reader.text()
            code, rank = reader.unpack('BB')
            tensors[name] = TensorSpec(name, DTYPE_NAMES[code], ints(rank))
            names.append(name)
        inputs = [names[i] for i in ints(reader.unpack('H'))]
        outputs = [names[i] for i in ints(reader.unpack('H'))]
        ops = []
        for _ in range(reader.unpack('I')):
            op_type = DECODE[reader.take(1)]
            if op_type in (QuantizeInput, DequantizeOutput):
                src, dst, q = reader.unpack('III')
                ops.append(op_type(names[src], names[dst], params[q]))
            elif op_type is FusedConvInt8:
                src, dst, wq, xq, yq, multiplier, relu, clamp_lo = reader.unpack('IIIIIdBB')
                geometry = ints(9, 'H')
                cin, cout, w_offset, b_offset = reader.unpack('IIQQ')
                kernel = geometry[:3]
                codes = weight_view(w_offset, np.uint8, (cout, cin) + kernel)
                if b_offset + 4 * cout > len(bias_bytes):
                    raise TruncatedFile('bias payload runs past the bias section')
                bias = np.frombuffer(bias_bytes, dtype='<i4', count=cout, offset=b_offset)
                ops.append(FusedConvInt8(names[src], names[dst], codes, params[wq], params[xq], params[yq], bias,
                                         multiplier, bool(relu), clamp_lo, kernel, geometry[3:6], geometry[6:],
                                         cin, cout))
            elif op_type is MaxPoolInt8:
                src, dst = reader.unpack('II')
                geometry = ints(6, 'H')
                ops.append(MaxPoolInt8(names[src], names[dst], geometry[:3], geometry[3:]))
            elif op_type is UpsampleInt8:
                src, dst = reader.unpack('II')
                ops.append(UpsampleInt8(names[src], names[dst], ints(3, 'H')))
            elif op_type is ConcatInt8:
                srcs = tuple(names[i] for i in ints(reader.unpack('H')))
                dst, axis = reader.unpack('IB')
                ops.append(ConcatInt8(srcs, names[dst], axis))
            elif op_type is RequantizeTensor:
                src, dst, qi, qo = reader.unpack('IIII')
                ops.append(RequantizeTensor(names[src], names[dst], params[qi], params[qo]))
            else:
                kind = reader.text()
                attrs = _attrs_from_json(reader.take(reader.unpack('I')).decode('utf-8'))
                srcs = tuple(names[i] for i in ints(reader.unpack('H')))
                dsts = tuple(names[i] for i in ints(reader.unpack('H')))
                weights = []
                for _ in range(reader.unpack('H')):
                    name = reader.text()
                    shape = ints(reader.unpack('B'))
                    weights.append((name, weight_view(reader.unpack('Q'), '<f4', shape)))
                ops.append(FP32Fallback(kind, attrs, srcs, dsts, tuple(weights)))
        if reader.pos != len(plan_bytes):
            raise EngineFormatError('{} trailing bytes in the plan section'.format(len(plan_bytes) - reader.pos))
        _check_dataflow(ops, tensors, names, inputs, outputs)
        return EnginePlan(ops, tensors, inputs, outputs)
    except (KeyError, IndexError, ValueError, TypeError, AttributeError, GraphError) as err:
        raise EngineFormatError('corrupt plan section: {}'.format(err)) from None


def fp32_model_bytes(g):
    '''
    Stored size of an FP32 or fake-quantized model: its weights file. The
    model document is metadata and is reported separately.
    '''
    return len(g.blob)


def engine_size_report(fp32_model, engine):
    '''
    Size and memory comparison of an FP32 graph and its engine file.
    '''
    from .executor import fp32_workspace_bytes

    plan = deserialize_engine(engine)
    planned, naive = fp32_workspace_bytes(fp32_model, plan.batch)
    fp32_bytes = fp32_model_bytes(fp32_model)
    return SizeReport(fp32_bytes=fp32_bytes, int8_bytes=len(engine), ratio=fp32_bytes / len(engine),
                      sections=engine_sections(engine),
                      workspace={'naive_fp32': naive, 'planned_fp32': planned, 'int8': plan.workspace_bytes})


def load_engine(path):
    with open(path, 'rb') as engine_file:
        return deserialize_engine(engine_file.read())

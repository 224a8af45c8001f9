'''
Volumetric graph intermediate representation.

A model is a JSON document plus one raw little-endian weights file. The
document has exactly the top-level keys `name`, `inputs`, `outputs`, `nodes`
and `weights`:

  inputs/outputs  [{name, dtype, shape}]     shape = [N|"DYNAMIC", C, D, H, W]
  nodes           [{id, kind, inputs, outputs, attrs}]
  weights         [{name, dtype, shape, offset, nbytes}]

Unknown keys anywhere are rejected. Weight tensors are addressable by name
like any other tensor; a Conv3D names its weight/bias both as inputs and in
its attrs so the manifest entry stays reachable after QDQ rewriting.
'''
import json
import logging
import math
from collections import namedtuple

import numpy as np

from .errors import (CycleDetected, DanglingInput, DocumentSyntaxError, DuplicateTensorName,
                     ShapeMismatch, TypeMismatch, UnknownOpKind, WeightOutOfBounds)

logger = logging.getLogger(__name__)

DYNAMIC = 'DYNAMIC'
DTYPES = {'F32': np.dtype('<f4'), 'U8': np.dtype('u1'), 'I32': np.dtype('<i4'), 'U16': np.dtype('<u2')}
OP_KINDS = ('Conv3D', 'ReLU', 'MaxPool3D', 'Upsample3D', 'Concat', 'Add', 'Softmax', 'ArgMax',
            'Quantize', 'Dequantize')
QDQ_KINDS = ('Quantize', 'Dequantize')
# (min, max) input count per kind; None is unbounded
ARITY = {'Conv3D': (2, 3), 'Add': (2, 2), 'Concat': (2, None)}

TensorSpec = namedtuple('TensorSpec', ['name', 'dtype', 'shape'])
WeightEntry = namedtuple('WeightEntry', ['name', 'dtype', 'shape', 'offset', 'nbytes'])


class Node(namedtuple('_Node', ['id', 'kind', 'inputs', 'outputs', 'attrs'])):
    '''
    One operation. inputs/outputs are tuples of tensor names; attrs is the
    kind-specific attribute map with 3-tuples for per-axis values.
    '''

    @property
    def output(self):
        return self.outputs[0]


def tensor_nbytes(spec, batch=None):
    '''
    Byte size of a tensor; a DYNAMIC batch must be bound through `batch`.
    '''
    dims = list(spec.shape)
    if dims and dims[0] == DYNAMIC:
        if batch is None:
            raise ShapeMismatch('tensor {} has a dynamic batch'.format(spec.name))
        dims[0] = batch
    return math.prod(dims) * DTYPES[spec.dtype].itemsize


class Graph(namedtuple('_Graph', ['name', 'inputs', 'outputs', 'nodes', 'weights', 'blob', 'tensors'])):
    '''
    Immutable validated graph. `tensors` maps every tensor name (graph
    inputs, weights and node outputs) to its inferred TensorSpec.
    '''

    def weight(self, name):
        for entry in self.weights:
            if entry.name == name:
                return entry
        raise DanglingInput('weight {} is not in the manifest'.format(name))

    def weight_array(self, name):
        entry = self.weight(name)
        dtype = DTYPES[entry.dtype]
        count = entry.nbytes // dtype.itemsize
        return np.frombuffer(self.blob, dtype=dtype, count=count, offset=entry.offset).reshape(entry.shape)

    def weight_names(self):
        return {entry.name for entry in self.weights}

    def producers(self):
        return {name: node for node in self.nodes for name in node.outputs}

    def consumers(self):
        users = {}
        for node in self.nodes:
            for name in node.inputs:
                users.setdefault(name, []).append(node)
        return users

    def node(self, node_id):
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def topological_order(self):
        return _topological_order(self)

    def parameter_count(self):
        '''
        Number of scalar parameters stored in the weight manifest.
        '''
        return sum(math.prod(entry.shape) for entry in self.weights)


# ---------------------------------------------------------------------------
# shape rules
# ---------------------------------------------------------------------------

def conv_output_dims(dims, kernel, stride, padding):
    return tuple((d + 2 * p - k) // s + 1 for d, k, s, p in zip(dims, kernel, stride, padding))


def pool_output_dims(dims, kernel, stride):
    return tuple((d - k) // s + 1 for d, k, s in zip(dims, kernel, stride))


def upsample_output_dims(dims, scale):
    return tuple(d * f for d, f in zip(dims, scale))


def _expect_dtype(node, spec, dtype):
    if spec.dtype != dtype:
        raise TypeMismatch('node {} ({}) expects {} input {} but got {}'.format(
            node.id, node.kind, dtype, spec.name, spec.dtype))


def _expect_volume(node, spec):
    if len(spec.shape) != 5:
        raise ShapeMismatch('node {} ({}) expects a 5-D input, {} has shape {}'.format(
            node.id, node.kind, spec.name, spec.shape))


def _check_spatial(node, dims):
    if any(d < 1 for d in dims):
        raise ShapeMismatch('node {} ({}) produces non-positive spatial dims {}'.format(node.id, node.kind, dims))


def infer_node(node, specs, manifest):
    '''
    Computes the output TensorSpec of one node from its input specs.
    '''
    ins = [specs[name] for name in node.inputs]
    attrs = node.attrs
    out = node.outputs[0]
    kind = node.kind
    if kind == 'Conv3D':
        x, w = ins[0], ins[1]
        _expect_dtype(node, x, 'F32')
        _expect_dtype(node, w, 'F32')
        _expect_volume(node, x)
        cin, cout = attrs['in_channels'], attrs['out_channels']
        wshape = (cout, cin) + tuple(attrs['kernel'])
        if x.shape[1] != cin:
            raise ShapeMismatch('node {} (Conv3D) expects {} input channels, {} has {}'.format(
                node.id, cin, x.name, x.shape[1]))
        if tuple(w.shape) != wshape:
            raise ShapeMismatch('node {} (Conv3D) weight {} has shape {}, expected {}'.format(
                node.id, w.name, w.shape, wshape))
        entry = manifest.get(attrs['weight'])
        if entry is not None and tuple(entry.shape) != wshape:
            raise ShapeMismatch('node {} (Conv3D) manifest weight {} has shape {}, expected {}'.format(
                node.id, entry.name, entry.shape, wshape))
        if len(ins) == 3:
            _expect_dtype(node, ins[2], 'F32')
            if tuple(ins[2].shape) != (cout,):
                raise ShapeMismatch('node {} (Conv3D) bias {} has shape {}, expected {}'.format(
                    node.id, ins[2].name, ins[2].shape, (cout,)))
        dims = conv_output_dims(x.shape[2:], attrs['kernel'], attrs['stride'], attrs['padding'])
        _check_spatial(node, dims)
        return TensorSpec(out, 'F32', (x.shape[0], cout) + dims)
    if kind in ('ReLU', 'Softmax'):
        _expect_dtype(node, ins[0], 'F32')
        if kind == 'Softmax':
            _expect_volume(node, ins[0])
        return TensorSpec(out, 'F32', ins[0].shape)
    if kind == 'MaxPool3D':
        _expect_dtype(node, ins[0], 'F32')
        _expect_volume(node, ins[0])
        dims = pool_output_dims(ins[0].shape[2:], attrs['kernel'], attrs['stride'])
        _check_spatial(node, dims)
        return TensorSpec(out, 'F32', ins[0].shape[:2] + dims)
    if kind == 'Upsample3D':
        _expect_dtype(node, ins[0], 'F32')
        _expect_volume(node, ins[0])
        return TensorSpec(out, 'F32', ins[0].shape[:2] + upsample_output_dims(ins[0].shape[2:], attrs['scale']))
    if kind == 'Concat':
        axis = attrs['axis']
        for spec in ins:
            _expect_dtype(node, spec, 'F32')
            _expect_volume(node, spec)
        first = ins[0].shape
        for spec in ins[1:]:
            for dim in range(5):
                if dim != axis and spec.shape[dim] != first[dim]:
                    raise ShapeMismatch('node {} (Concat) inputs {} and {} disagree on dim {}: {} vs {}'.format(
                        node.id, ins[0].name, spec.name, dim, first[dim], spec.shape[dim]))
        if any(spec.shape[axis] == DYNAMIC for spec in ins):
            raise ShapeMismatch('node {} (Concat) cannot concatenate along a dynamic axis'.format(node.id))
        shape = list(first)
        shape[axis] = sum(spec.shape[axis] for spec in ins)
        return TensorSpec(out, 'F32', tuple(shape))
    if kind == 'Add':
        _expect_dtype(node, ins[0], 'F32')
        _expect_dtype(node, ins[1], 'F32')
        if ins[0].shape != ins[1].shape:
            raise ShapeMismatch('node {} (Add) inputs {} {} and {} {} differ'.format(
                node.id, ins[0].name, ins[0].shape, ins[1].name, ins[1].shape))
        return TensorSpec(out, 'F32', ins[0].shape)
    if kind == 'ArgMax':
        _expect_dtype(node, ins[0], 'F32')
        _expect_volume(node, ins[0])
        shape = list(ins[0].shape)
        shape[attrs['axis']] = 1
        return TensorSpec(out, 'U16', tuple(shape))
    if kind == 'Quantize':
        _expect_dtype(node, ins[0], 'F32')
        return TensorSpec(out, 'U8', ins[0].shape)
    if kind == 'Dequantize':
        _expect_dtype(node, ins[0], 'U8')
        return TensorSpec(out, 'F32', ins[0].shape)
    raise UnknownOpKind('node {} has unknown kind {}'.format(node.id, kind))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _topological_order(g):
    '''
    Kahn's algorithm; ties broken by declaration order so the order is stable.
    '''
    producers = {}
    for node in g.nodes:
        for name in node.outputs:
            producers[name] = node.id
    index = {node.id: i for i, node in enumerate(g.nodes)}
    pending = {}
    dependents = {}
    for node in g.nodes:
        deps = {producers[name] for name in node.inputs if name in producers}
        pending[node.id] = len(deps)
        for dep in deps:
            dependents.setdefault(dep, []).append(node.id)
    ready = sorted((index[nid] for nid, count in pending.items() if count == 0))
    order = []
    while ready:
        i = ready.pop(0)
        node = g.nodes[i]
        order.append(node)
        for nid in dependents.get(node.id, ()):
            pending[nid] -= 1
            if pending[nid] == 0:
                ready.append(index[nid])
        ready.sort()
    if len(order) != len(g.nodes):
        stuck = sorted(nid for nid, count in pending.items() if count > 0)
        raise CycleDetected('graph {} has a cycle through nodes {}'.format(g.name, ', '.join(stuck)))
    return order


def _through_qdq(name, producers, limit):
    # a fake-quantized conv reads its weight through one Quantize/Dequantize pair
    for _ in range(limit):
        node = producers.get(name)
        if node is None or node.kind not in QDQ_KINDS:
            break
        name = node.inputs[0]
    return name


def _check_structure(g):
    known = set()
    for spec in g.inputs:
        if spec.name in known:
            raise DuplicateTensorName('graph input {} declared twice'.format(spec.name))
        known.add(spec.name)
    for entry in g.weights:
        if entry.name in known:
            raise DuplicateTensorName('weight {} collides with another tensor'.format(entry.name))
        known.add(entry.name)
        itemsize = DTYPES[entry.dtype].itemsize
        if entry.offset + entry.nbytes > len(g.blob):
            raise WeightOutOfBounds('weight {} spans bytes [{}, {}) but the blob has {} bytes'.format(
                entry.name, entry.offset, entry.offset + entry.nbytes, len(g.blob)))
        if entry.nbytes != math.prod(entry.shape) * itemsize:
            raise ShapeMismatch('weight {} declares {} bytes for shape {} of {}'.format(
                entry.name, entry.nbytes, entry.shape, entry.dtype))
    ids = set()
    for node in g.nodes:
        if node.kind not in OP_KINDS:
            raise UnknownOpKind('node {} has unknown kind {}'.format(node.id, node.kind))
        if node.id in ids:
            raise DuplicateTensorName('node id {} used twice'.format(node.id))
        ids.add(node.id)
        for name in node.outputs:
            if name in known:
                raise DuplicateTensorName('tensor {} produced by node {} already exists'.format(name, node.id))
            known.add(name)
    weights = g.weight_names()
    producers = {name: node for node in g.nodes for name in node.outputs}
    for node in g.nodes:
        for name in node.inputs:
            if name not in known:
                raise DanglingInput('node {} reads {} which nothing produces'.format(node.id, name))
        if node.kind == 'Conv3D':
            for index, key in ((1, 'weight'), (2, 'bias')):
                ref = node.attrs.get(key)
                if ref is not None and ref not in weights:
                    raise DanglingInput('node {} references missing {} {}'.format(node.id, key, ref))
                if ref is not None and index < len(node.inputs):
                    source = _through_qdq(node.inputs[index], producers, len(g.nodes))
                    if source != ref:
                        raise DanglingInput('node {} reads {} {} but its attrs name {}'.format(
                            node.id, key, node.inputs[index], ref))
    for spec in g.outputs:
        if spec.name not in known:
            raise DanglingInput('graph output {} is never produced'.format(spec.name))


def _bind_batch(spec, batch):
    if batch is None:
        return spec
    head = spec.shape[0]
    if head == DYNAMIC:
        return spec._replace(shape=(batch,) + tuple(spec.shape[1:]))
    if head != batch:
        raise ShapeMismatch('tensor {} has fixed batch {} but batch {} was requested'.format(spec.name, head, batch))
    return spec


def _analyse(g, batch):
    _check_structure(g)
    order = _topological_order(g)
    inputs = tuple(_bind_batch(spec, batch) for spec in g.inputs)
    specs = {spec.name: spec for spec in inputs}
    manifest = {entry.name: entry for entry in g.weights}
    for entry in g.weights:
        specs[entry.name] = TensorSpec(entry.name, entry.dtype, tuple(entry.shape))
    for node in order:
        specs[node.outputs[0]] = infer_node(node, specs, manifest)
    outputs = []
    for declared in g.outputs:
        declared = _bind_batch(declared, batch)
        actual = specs[declared.name]
        if actual.dtype != declared.dtype:
            raise TypeMismatch('graph output {} declared {} but is {}'.format(declared.name, declared.dtype, actual.dtype))
        if tuple(actual.shape) != tuple(declared.shape):
            raise ShapeMismatch('graph output {} declared shape {} but inferred {}'.format(
                declared.name, declared.shape, actual.shape))
        outputs.append(declared)
    return inputs, tuple(outputs), specs


def make_graph(name, inputs, outputs, nodes, weights, blob):
    '''
    Builds a Graph, checking structure and inferring shapes with the batch
    left symbolic.
    '''
    g = Graph(name, tuple(inputs), tuple(outputs), tuple(nodes), tuple(weights), bytes(blob), {})
    inputs, outputs, specs = _analyse(g, None)
    return g._replace(tensors=specs)


def validate_and_infer_shapes(g, batch):
    '''
    Re-validates `g` and binds every DYNAMIC batch to `batch`. Idempotent.
    '''
    if not isinstance(batch, int) or isinstance(batch, bool) or batch < 1:
        raise ShapeMismatch('batch must be a positive integer, got {!r}'.format(batch))
    inputs, outputs, specs = _analyse(g, batch)
    return g._replace(inputs=inputs, outputs=outputs, tensors=specs)


# ---------------------------------------------------------------------------
# model document
# ---------------------------------------------------------------------------

def _fail(path, expected):
    raise DocumentSyntaxError('{}: expected {}'.format(path, expected))


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _object(value, path, keys, optional=()):
    if not isinstance(value, dict):
        _fail(path, 'an object')
    unknown = sorted(set(value) - set(keys) - set(optional))
    if unknown:
        raise DocumentSyntaxError('{}: unknown key {!r}'.format(path, unknown[0]))
    missing = [key for key in keys if key not in value]
    if missing:
        raise DocumentSyntaxError('{}: missing key {!r}'.format(path, missing[0]))
    return value


def _list(value, path):
    if not isinstance(value, list):
        _fail(path, 'a list')
    return value


def _name(value, path):
    if not isinstance(value, str) or not value:
        _fail(path, 'a non-empty string')
    return value


def _positive(value, path):
    if not _is_int(value) or value < 1:
        _fail(path, 'a positive integer')
    return value


def _non_negative(value, path):
    if not _is_int(value) or value < 0:
        _fail(path, 'a non-negative integer')
    return value


def _triple(check):
    def parse(value, path):
        if not isinstance(value, list) or len(value) != 3:
            _fail(path, 'a list of 3 integers')
        return tuple(check(v, '{}[{}]'.format(path, i)) for i, v in enumerate(value))
    return parse


def _axis(value, path):
    if not _is_int(value) or not 1 <= value <= 4:
        _fail(path, 'an axis in 1..4')
    return value


def _scale(value, path):
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value) or value <= 0:
        _fail(path, 'a positive finite number')
    return float(value)


def _bits(value, path):
    if not _is_int(value) or not 2 <= value <= 8:
        _fail(path, 'a bit width in 2..8')
    return value


def _optional_name(value, path):
    return None if value is None else _name(value, path)


ATTR_SCHEMAS = {
    'Conv3D': {'kernel': _triple(_positive), 'stride': _triple(_positive), 'padding': _triple(_non_negative),
               'in_channels': _positive, 'out_channels': _positive, 'weight': _name},
    'ReLU': {},
    'MaxPool3D': {'kernel': _triple(_positive), 'stride': _triple(_positive)},
    'Upsample3D': {'scale': _triple(_positive)},
    'Concat': {'axis': _axis},
    'Add': {},
    'Softmax': {'axis': _axis},
    'ArgMax': {'axis': _axis},
    'Quantize': {'scale': _scale, 'zero_point': _non_negative, 'bits': _bits},
    'Dequantize': {'scale': _scale, 'zero_point': _non_negative, 'bits': _bits},
}
OPTIONAL_ATTRS = {'Conv3D': {'bias': _optional_name}}


def _parse_attrs(kind, value, path):
    schema = ATTR_SCHEMAS[kind]
    optional = OPTIONAL_ATTRS.get(kind, {})
    _object(value, path, schema, optional)
    attrs = {}
    for key, check in schema.items():
        attrs[key] = check(value[key], '{}.{}'.format(path, key))
    for key, check in optional.items():
        if value.get(key) is not None:
            attrs[key] = check(value[key], '{}.{}'.format(path, key))
    if kind in QDQ_KINDS and attrs['zero_point'] > (1 << attrs['bits']) - 1:
        _fail(path + '.zero_point', 'a code in [0, 2^bits - 1]')
    return attrs


def _parse_spec(value, path):
    _object(value, path, ('name', 'dtype', 'shape'))
    name = _name(value['name'], path + '.name')
    if not isinstance(value['dtype'], str) or value['dtype'] not in DTYPES:
        _fail(path + '.dtype', 'one of ' + ', '.join(DTYPES))
    shape = _list(value['shape'], path + '.shape')
    if len(shape) != 5:
        _fail(path + '.shape', 'a 5-D shape')
    head = shape[0] if shape[0] == DYNAMIC else _positive(shape[0], path + '.shape[0]')
    tail = tuple(_positive(v, '{}.shape[{}]'.format(path, i + 1)) for i, v in enumerate(shape[1:]))
    return TensorSpec(name, value['dtype'], (head,) + tail)


def _parse_node(value, path):
    _object(value, path, ('id', 'kind', 'inputs', 'outputs', 'attrs'))
    node_id = _name(value['id'], path + '.id')
    kind = value['kind']
    if kind not in OP_KINDS:
        raise UnknownOpKind('node {} has unknown kind {!r}'.format(node_id, kind))
    inputs = tuple(_name(v, '{}.inputs[{}]'.format(path, i)) for i, v in enumerate(_list(value['inputs'], path + '.inputs')))
    outputs = tuple(_name(v, '{}.outputs[{}]'.format(path, i)) for i, v in enumerate(_list(value['outputs'], path + '.outputs')))
    low, high = ARITY.get(kind, (1, 1))
    if len(inputs) < low or (high is not None and len(inputs) > high):
        _fail(path + '.inputs', '{} to {} tensors for {}'.format(low, high or 'any', kind))
    if len(outputs) != 1:
        _fail(path + '.outputs', 'exactly one tensor')
    attrs = _parse_attrs(kind, value['attrs'], path + '.attrs')
    if kind == 'Conv3D' and (len(inputs) == 3) != ('bias' in attrs):
        _fail(path + '.inputs', 'a bias input exactly when attrs.bias is set')
    return Node(node_id, kind, inputs, outputs, attrs)


def _parse_weight(value, path):
    _object(value, path, ('name', 'dtype', 'shape', 'offset', 'nbytes'))
    name = _name(value['name'], path + '.name')
    if not isinstance(value['dtype'], str) or value['dtype'] not in DTYPES:
        _fail(path + '.dtype', 'one of ' + ', '.join(DTYPES))
    shape = _list(value['shape'], path + '.shape')
    if not 1 <= len(shape) <= 5:
        _fail(path + '.shape', 'a shape of rank 1..5')
    shape = tuple(_positive(v, '{}.shape[{}]'.format(path, i)) for i, v in enumerate(shape))
    offset = _non_negative(value['offset'], path + '.offset')
    nbytes = _non_negative(value['nbytes'], path + '.nbytes')
    return WeightEntry(name, value['dtype'], shape, offset, nbytes)


def parse_model(model_text, weights_blob):
    '''
    Parses a model document and its weights file into a validated Graph.

    Raises only GraphError subclasses, whatever the input bytes are.
    '''
    if isinstance(model_text, (bytes, bytearray)):
        try:
            model_text = bytes(model_text).decode('utf-8')
        except UnicodeDecodeError as err:
            raise DocumentSyntaxError('model document is not UTF-8 (byte {})'.format(err.start)) from None
    try:
        doc = json.loads(model_text)
    except json.JSONDecodeError as err:
        raise DocumentSyntaxError(err.msg, err.lineno, err.colno) from None
    except (ValueError, RecursionError) as err:
        raise DocumentSyntaxError('unreadable model document: {}'.format(err)) from None
    _object(doc, 'document', ('name', 'inputs', 'outputs', 'nodes', 'weights'))
    name = _name(doc['name'], 'name')
    inputs = [_parse_spec(v, 'inputs[{}]'.format(i)) for i, v in enumerate(_list(doc['inputs'], 'inputs'))]
    outputs = [_parse_spec(v, 'outputs[{}]'.format(i)) for i, v in enumerate(_list(doc['outputs'], 'outputs'))]
    if not inputs or not outputs:
        _fail('inputs/outputs', 'at least one graph input and one graph output')
    nodes = [_parse_node(v, 'nodes[{}]'.format(i)) for i, v in enumerate(_list(doc['nodes'], 'nodes'))]
    weights = [_parse_weight(v, 'weights[{}]'.format(i)) for i, v in enumerate(_list(doc['weights'], 'weights'))]
    return make_graph(name, inputs, outputs, nodes, weights, weights_blob)


def _spec_doc(spec):
    return {'name': spec.name, 'dtype': spec.dtype, 'shape': list(spec.shape)}


def _attr_doc(value):
    return list(value) if isinstance(value, tuple) else value


def serialize_model(g):
    '''
    Returns (model_text, weights_blob) such that parse_model inverts it.
    Scales are written with repr, which round-trips 64-bit floats exactly.
    '''
    doc = {
        'name': g.name,
        'inputs': [_spec_doc(spec) for spec in g.inputs],
        'outputs': [_spec_doc(spec) for spec in g.outputs],
        'nodes': [{'id': node.id, 'kind': node.kind, 'inputs': list(node.inputs), 'outputs': list(node.outputs),
                   'attrs': {key: _attr_doc(value) for key, value in node.attrs.items()}}
                  for node in g.nodes],
        'weights': [{'name': e.name, 'dtype': e.dtype, 'shape': list(e.shape), 'offset': e.offset, 'nbytes': e.nbytes}
                    for e in g.weights],
    }
    text = json.dumps(doc, indent=1) + '\n'
    return text.encode('utf-8'), bytes(g.blob)


def load_model(model_path, weights_path=None):
    '''
    Reads `<stem>.json` and its weights file (default `<stem>.bin`).
    '''
    model_path = str(model_path)
    if weights_path is None:
        weights_path = model_path[:-5] + '.bin' if model_path.endswith('.json') else model_path + '.bin'
    with open(model_path, 'rb') as model_file:
        text = model_file.read()
    with open(weights_path, 'rb') as weights_file:
        blob = weights_file.read()
    return parse_model(text, blob)


def save_model(g, model_path, weights_path=None):
    model_path = str(model_path)
    if weights_path is None:
        weights_path = model_path[:-5] + '.bin' if model_path.endswith('.json') else model_path + '.bin'
    text, blob = serialize_model(g)
    with open(model_path, 'wb') as model_file:
        model_file.write(text)
    with open(weights_path, 'wb') as weights_file:
        weights_file.write(blob)
    return model_path, weights_path


# ---------------------------------------------------------------------------
# liveness
# ---------------------------------------------------------------------------

def peak_live_bytes(steps, sizes, keep=()):
    '''
    Linear-scan liveness over `steps`, a list of (reads, writes) name lists.
    A written tensor is live from its producing step through its last read;
    tensors in `keep` stay live to the end. Unwritten names (caller-owned
    inputs, weights) are not counted. Returns (peak bytes, naive bytes).
    '''
    born = {}
    last = {}
    for i, (reads, writes) in enumerate(steps):
        for name in writes:
            born.setdefault(name, i)
            last[name] = max(last.get(name, i), i)
        for name in reads:
            if name in born:
                last[name] = i
    end = len(steps) - 1
    for name in keep:
        if name in born:
            last[name] = end
    peak = 0
    for i in range(len(steps)):
        live = sum(sizes[name] for name in born if born[name] <= i <= last[name])
        peak = max(peak, live)
    return peak, sum(sizes[name] for name in born)


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------

def _as_triple(value):
    return tuple(value) if isinstance(value, (tuple, list)) else (value,) * 3


class GraphBuilder():
    '''
    Assembles a graph node by node, packing weights into one blob.
    '''

    def __init__(self, name):
        self.name = name
        self.inputs = []
        self.outputs = []
        self.nodes = []
        self.weights = []
        self.specs = {}
        self.manifest = {}
        self.chunks = []
        self.offset = 0

    def _fresh(self, stem):
        name = stem
        i = 1
        while name in self.specs or any(node.id == name for node in self.nodes):
            name = '{}_{}'.format(stem, i)
            i += 1
        return name

    def input(self, name, shape, dtype='F32'):
        spec = TensorSpec(name, dtype, tuple(shape))
        self.inputs.append(spec)
        self.specs[name] = spec
        return name

    def weight(self, name, array):
        data = np.ascontiguousarray(array, dtype='<f4')
        entry = WeightEntry(name, 'F32', tuple(data.shape), self.offset, data.nbytes)
        self.weights.append(entry)
        self.manifest[name] = entry
        self.specs[name] = TensorSpec(name, 'F32', tuple(data.shape))
        self.chunks.append(data.tobytes())
        self.offset += data.nbytes
        return name

    def node(self, kind, inputs, attrs=None, name=None):
        node_id = self._fresh(name or kind.lower())
        out = self._fresh(node_id + '_out') if node_id in self.specs else node_id
        node = Node(node_id, kind, tuple(inputs), (out,), dict(attrs or {}))
        self.specs[out] = infer_node(node, self.specs, self.manifest)
        self.nodes.append(node)
        return out

    def conv(self, x, weight, bias=None, stride=1, padding=0, relu=False, name=None):
        name = self._fresh(name or 'conv')
        weight = np.asarray(weight, dtype=np.float32)
        w = self.weight(name + '.weight', weight)
        attrs = {'kernel': tuple(weight.shape[2:]), 'stride': _as_triple(stride), 'padding': _as_triple(padding),
                 'in_channels': int(weight.shape[1]), 'out_channels': int(weight.shape[0]), 'weight': w}
        inputs = [x, w]
        if bias is not None:
            attrs['bias'] = self.weight(name + '.bias', np.asarray(bias, dtype=np.float32))
            inputs.append(attrs['bias'])
        y = self.node('Conv3D', inputs, attrs, name=name)
        return self.relu(y, name=name + '_relu') if relu else y

    def relu(self, x, name=None):
        return self.node('ReLU', [x], name=name)

    def maxpool(self, x, kernel=2, stride=None, name=None):
        stride = kernel if stride is None else stride
        return self.node('MaxPool3D', [x], {'kernel': _as_triple(kernel), 'stride': _as_triple(stride)}, name=name)

    def upsample(self, x, scale=2, name=None):
        return self.node('Upsample3D', [x], {'scale': _as_triple(scale)}, name=name)

    def concat(self, xs, axis=1, name=None):
        return self.node('Concat', xs, {'axis': axis}, name=name)

    def add(self, a, b, name=None):
        return self.node('Add', [a, b], name=name)

    def softmax(self, x, axis=1, name=None):
        return self.node('Softmax', [x], {'axis': axis}, name=name)

    def argmax(self, x, axis=1, name=None):
        return self.node('ArgMax', [x], {'axis': axis}, name=name)

    def output(self, tensor):
        self.outputs.append(self.specs[tensor])
        return tensor

    def build(self):
        return make_graph(self.name, self.inputs, self.outputs, self.nodes, self.weights, b''.join(self.chunks))

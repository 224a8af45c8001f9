import json

import numpy as np
import pytest

from voxquant.errors import (CycleDetected, DanglingInput, DocumentSyntaxError, DuplicateTensorName, GraphError,
                             ShapeMismatch, TypeMismatch, UnknownOpKind, WeightOutOfBounds)
from voxquant.graph import (DYNAMIC, GraphBuilder, Node, TensorSpec, WeightEntry, conv_output_dims, make_graph,
                            parse_model, peak_live_bytes, serialize_model, validate_and_infer_shapes)
from voxquant.zoo import toy_unet

from helpers import PATTERNS, random_fixture, random_graph


def conv_graph():
    b = GraphBuilder('conv')
    x = b.input('volume', (DYNAMIC, 1, 8, 8, 8))
    y = b.conv(x, np.ones((2, 1, 3, 3, 3)), np.zeros(2), stride=2, padding=1, relu=True, name='c1')
    b.output(b.argmax(y, name='labels'))
    return b.build()


def test_conv_output_dims():
    assert conv_output_dims((8, 8, 8), (3, 3, 3), (2, 2, 2), (1, 1, 1)) == (4, 4, 4)
    assert conv_output_dims((5, 6, 7), (3, 1, 3), (1, 1, 2), (0, 0, 1)) == (3, 6, 4)


def test_builder_infers_shapes():
    g = conv_graph()
    assert g.tensors['c1'].shape == (DYNAMIC, 2, 4, 4, 4)
    assert g.tensors['c1_relu'].dtype == 'F32'
    assert g.tensors['labels'] == TensorSpec('labels', 'U16', (DYNAMIC, 1, 4, 4, 4))
    assert g.parameter_count() == 2 * 27 + 2


def test_validate_binds_batch():
    g = validate_and_infer_shapes(conv_graph(), 3)
    assert g.inputs[0].shape == (3, 1, 8, 8, 8)
    assert g.outputs[0].shape == (3, 1, 4, 4, 4)
    assert validate_and_infer_shapes(g, 3) == g
    with pytest.raises(ShapeMismatch):
        validate_and_infer_shapes(g, 2)
    with pytest.raises(ShapeMismatch):
        validate_and_infer_shapes(conv_graph(), 0)


def test_topological_order_is_stable():
    g = toy_unet('S', 4, 0, (16, 16, 16))
    order = [node.id for node in g.topological_order()]
    assert order == [node.id for node in g.nodes]
    assert len(order) == len(set(order))


def test_document_round_trip():
    g = toy_unet('S', 3, 5, (16, 16, 16))
    text, blob = serialize_model(g)
    again = parse_model(text, blob)
    assert serialize_model(again) == (text, blob)
    assert again.tensors == g.tensors
    assert np.array_equal(again.weight_array('enc1a.weight'), g.weight_array('enc1a.weight'))


def _doc(g):
    text, blob = serialize_model(g)
    return json.loads(text), blob


def _parse(doc, blob):
    return parse_model(json.dumps(doc), blob)


def test_unknown_kind_rejected():
    doc, blob = _doc(conv_graph())
    doc['nodes'][0]['kind'] = 'Conv2D'
    with pytest.raises(UnknownOpKind):
        _parse(doc, blob)


def test_unknown_key_rejected():
    doc, blob = _doc(conv_graph())
    doc['nodes'][1]['attrs']['alpha'] = 0.1
    with pytest.raises(DocumentSyntaxError):
        _parse(doc, blob)
    doc, blob = _doc(conv_graph())
    doc['version'] = 2
    with pytest.raises(DocumentSyntaxError):
        _parse(doc, blob)


def test_syntax_error_has_position():
    with pytest.raises(DocumentSyntaxError) as info:
        parse_model(b'{\n  "name": "x",\n  "inputs": [}', b'')
    assert info.value.line == 3


def test_weight_out_of_bounds():
    doc, blob = _doc(conv_graph())
    with pytest.raises(WeightOutOfBounds):
        _parse(doc, blob[:-4])


def test_duplicate_tensor_name():
    doc, blob = _doc(conv_graph())
    doc['nodes'][1]['outputs'] = ['c1']
    with pytest.raises(DuplicateTensorName):
        _parse(doc, blob)


def test_dangling_input():
    doc, blob = _doc(conv_graph())
    doc['nodes'][1]['inputs'] = ['missing']
    with pytest.raises(DanglingInput):
        _parse(doc, blob)


def test_cycle_detected():
    spec = TensorSpec('x', 'F32', (1, 1, 4, 4, 4))
    nodes = [Node('a', 'Add', ('x', 'b'), ('a',), {}), Node('b', 'Add', ('a', 'x'), ('b',), {})]
    with pytest.raises(CycleDetected):
        make_graph('loop', [spec], [spec._replace(name='b')], nodes, [], b'')


def test_concat_shape_mismatch():
    b = GraphBuilder('bad')
    x = b.input('a', (1, 1, 4, 4, 4))
    y = b.input('b', (1, 1, 4, 4, 2))
    with pytest.raises(ShapeMismatch):
        b.concat([x, y])


def test_dequantize_needs_codes():
    spec = TensorSpec('x', 'F32', (1, 1, 4, 4, 4))
    node = Node('dq', 'Dequantize', ('x',), ('y',), {'scale': 0.1, 'zero_point': 0, 'bits': 8})
    with pytest.raises(TypeMismatch):
        make_graph('dq', [spec], [spec._replace(name='y')], [node], [], b'')


def test_weight_size_mismatch():
    spec = TensorSpec('x', 'F32', (1, 1, 4, 4, 4))
    weights = [WeightEntry('w', 'F32', (2, 2), 0, 12)]
    with pytest.raises(ShapeMismatch):
        make_graph('w', [spec], [spec], [], weights, bytes(16))


def test_parser_never_leaks_other_errors():
    doc_text, blob = serialize_model(conv_graph())
    rng = np.random.default_rng(99)
    for _ in range(1000):
        data = bytearray(doc_text)
        action = rng.integers(0, 3)
        if action == 0:
            for _ in range(int(rng.integers(1, 4))):
                data[int(rng.integers(0, len(data)))] = int(rng.integers(0, 256))
        elif action == 1:
            data = data[:int(rng.integers(0, len(data)))]
        else:
            at = int(rng.integers(0, len(data)))
            data[at:at] = bytes(rng.choice(list(b'{}[],:"0123456789-e.'), size=int(rng.integers(1, 4))).tolist())
        try:
            parse_model(bytes(data), blob)
        except GraphError:
            pass


def test_peak_live_bytes():
    steps = [(['in'], ['a']), (['a'], ['b']), (['b'], ['c']), (['a', 'c'], ['d'])]
    sizes = {'a': 10, 'b': 20, 'c': 30, 'd': 5}
    peak, naive = peak_live_bytes(steps, sizes, keep=['d'])
    assert naive == 65
    assert peak == 60


def test_seeded_unet_round_trip():
    g = toy_unet('S', 4, 7, (16, 16, 16))
    assert len(g.nodes) >= 20
    text, blob = serialize_model(g)
    again = parse_model(text, blob)
    assert again == g


def test_random_graphs_round_trip():
    rng = np.random.default_rng(41)
    for _ in range(40):
        fixture = random_fixture(rng)
        for g in (fixture.graph, fixture.fake):
            text, blob = serialize_model(g)
            again = parse_model(text, blob)
            assert again == g
            assert serialize_model(again) == (text, blob)


def test_shapes_ignore_declaration_order():
    rng = np.random.default_rng(8)
    for g in [toy_unet('S', 3, 2, (16, 16, 16))] + [random_graph(rng, pattern) for pattern in PATTERNS]:
        doc, blob = _doc(g)
        for _ in range(5):
            doc['nodes'] = [doc['nodes'][i] for i in rng.permutation(len(doc['nodes']))]
            shuffled = _parse(doc, blob)
            assert shuffled.tensors == g.tensors
            assert validate_and_infer_shapes(shuffled, 2).tensors == validate_and_infer_shapes(g, 2).tensors


def test_conv_weight_input_must_match_attrs():
    doc, blob = _doc(conv_graph())
    doc['nodes'][0]['attrs']['weight'] = 'c1.bias'
    with pytest.raises(DanglingInput):
        _parse(doc, blob)
    doc, blob = _doc(conv_graph())
    doc['nodes'][0]['inputs'] = ['volume', 'c1.bias', 'c1.weight']
    with pytest.raises(DanglingInput):
        _parse(doc, blob)


def test_fake_conv_reads_weight_through_qdq():
    fixture = random_fixture(np.random.default_rng(9), 'chain')
    conv = next(node for node in fixture.fake.nodes if node.kind == 'Conv3D')
    assert conv.inputs[1] != conv.attrs['weight']
    doc, blob = _doc(fixture.fake)
    for node in doc['nodes']:
        if node['id'] == conv.id:
            node['attrs']['weight'] = 'head.weight'
    with pytest.raises(DanglingInput):
        _parse(doc, blob)

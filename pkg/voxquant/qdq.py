'''
Quantize/Dequantize insertion: turns an FP32 graph into a fake-quantized one.
'''
import logging
from collections import namedtuple

from .config import DEFAULT_BITS
from .errors import PolicyUnsupportedKind
from .executor import execute_fp32
from .graph import Node, make_graph

logger = logging.getLogger(__name__)

# kinds the engine has integer kernels for
SUPPORTED_KINDS = frozenset({'Conv3D', 'MaxPool3D', 'Upsample3D', 'Concat'})
POLICY_PRESETS = {'conv': frozenset({'Conv3D'}), 'all': SUPPORTED_KINDS, 'none': frozenset()}

QdqSelection = namedtuple('QdqSelection', ['activations', 'weights', 'inputs', 'outputs'])


class QdqPolicy(namedtuple('_QdqPolicy', ['quantize_kinds', 'quantize_weights', 'bits'])):
    '''
    Which node kinds get QDQ pairs on their inputs, whether conv weights are
    wrapped too, and the bit width of every inserted pair.
    '''

    def validate(self):
        unsupported = sorted(set(self.quantize_kinds) - SUPPORTED_KINDS)
        if unsupported:
            raise PolicyUnsupportedKind('no integer kernel for kind(s) {}'.format(', '.join(unsupported)))
        return self

    def select(self, g):
        '''
        Tensors the policy quantizes in `g`. `inputs` maps node id to the
        activation inputs wrapped for it; `outputs` maps each conv to the
        tensor whose QDQ pair follows it (its ReLU output when one ReLU is
        the sole consumer).
        '''
        self.validate()
        consumers = g.consumers()
        graph_outputs = {spec.name for spec in g.outputs}
        weights = g.weight_names()
        activations, weight_names, inputs, outputs = [], [], {}, {}

        def add(items, name):
            if name not in items:
                items.append(name)

        for node in g.nodes:
            if node.kind not in self.quantize_kinds:
                continue
            if node.kind == 'Conv3D':
                wrapped = [node.inputs[0]]
                if self.quantize_weights:
                    add(weight_names, node.inputs[1])
                out = node.output
                users = consumers.get(out, [])
                if len(users) == 1 and users[0].kind == 'ReLU' and out not in graph_outputs:
                    out = users[0].output
                outputs[node.id] = out
                add(activations, out)
            else:
                wrapped = [name for name in node.inputs if name not in weights]
            inputs[node.id] = wrapped
            for name in wrapped:
                add(activations, name)
        return QdqSelection(activations, weight_names, inputs, outputs)


def default_policy(bits=DEFAULT_BITS):
    return QdqPolicy(POLICY_PRESETS['conv'], True, bits)


def parse_policy(text, bits=DEFAULT_BITS):
    '''
    Policy from a CLI value: a preset name (conv, all, none) or a comma list
    of kinds. A `-noweights` suffix leaves conv weights in FP32.
    '''
    quantize_weights = True
    if text.endswith('-noweights'):
        text = text[:-len('-noweights')]
        quantize_weights = False
    if text in POLICY_PRESETS:
        kinds = POLICY_PRESETS[text]
    else:
        kinds = frozenset(kind.strip() for kind in text.split(',') if kind.strip())
    return QdqPolicy(kinds, quantize_weights, bits).validate()


def _pair(tensor, src, dst, params):
    attrs = params.as_attrs()
    return [Node(tensor + '_quantize', 'Quantize', (src,), (tensor + '_q',), dict(attrs)),
            Node(tensor + '_dequantize', 'Dequantize', (tensor + '_q',), (dst,), dict(attrs))]


def insert_qdq(g, table, policy):
    '''
    Wraps every selected edge in one Quantize -> Dequantize pair. A tensor
    read by several selected nodes gets a single pair. Conv output pairs are
    spliced in by renaming the producer output to `<t>_prequant`, so every
    downstream reader sees the fake-quantized value under the original name.
    '''
    policy.validate()
    if not policy.quantize_kinds:
        return g
    selection = policy.select(g)
    producers = g.producers()
    for node in g.nodes:
        edges = list(selection.inputs.get(node.id, []))
        if node.id in selection.outputs and policy.quantize_weights:
            edges.append(node.inputs[1])
        for name in edges:
            source = producers.get(name)
            if source is not None and source.kind in ('Dequantize', 'Quantize'):
                raise PolicyUnsupportedKind('edge {} into node {} is already quantized'.format(name, node.id))
    params = {name: table.params(name) for name in selection.activations + selection.weights}

    spliced = set(selection.outputs.values())
    renamed = {name: name + '_prequant' for name in spliced}
    wrapped = {}
    nodes = []

    def wrap(name):
        if name in spliced:
            return name
        if name not in wrapped:
            wrapped[name] = name + '_dq'
            nodes.extend(_pair(name, name, wrapped[name], params[name]))
        return wrapped[name]

    for node in g.nodes:
        inputs = list(node.inputs)
        for i, name in enumerate(inputs):
            if name in selection.inputs.get(node.id, ()):
                inputs[i] = wrap(name)
        if node.id in selection.outputs and policy.quantize_weights:
            inputs[1] = wrap(inputs[1])
        outputs = tuple(renamed.get(name, name) for name in node.outputs)
        nodes.append(node._replace(inputs=tuple(inputs), outputs=outputs))
        for name in node.outputs:
            if name in spliced:
                nodes.extend(_pair(name, renamed[name], name, params[name]))

    fake = make_graph(g.name, g.inputs, g.outputs, nodes, g.weights, g.blob)
    logger.info('inserted %d QDQ pairs into %s', (len(nodes) - len(g.nodes)) // 2, g.name)
    return fake


def execute_fake_quant(g_fake, volume, threads=1):
    '''
    Runs a fake-quantized graph in FP32; each QDQ pair rounds its tensor
    through the code grid.
    '''
    return execute_fp32(g_fake, volume, threads=threads)

'''
Reference FP32 graph executor and the INT8 engine executor.
'''
import logging

import numpy as np

from . import kernels
from .engine import (ConcatInt8, DequantizeOutput, FP32Fallback, FusedConvInt8, MaxPoolInt8, QuantizeInput,
                     RequantizeTensor, UpsampleInt8)
from .errors import NonFiniteValue, ShapeMismatch, WorkspaceTooSmall
from .graph import peak_live_bytes, tensor_nbytes, validate_and_infer_shapes
from .quant import QuantParams, dequantize_array, quantize_array

logger = logging.getLogger(__name__)


def run_node(kind, attrs, args, threads=1):
    '''
    Evaluates one FP32-domain operation on already materialized arrays.
    Conv3D takes (x, weight[, bias]).
    '''
    if kind == 'Conv3D':
        bias = args[2] if len(args) > 2 else None
        return kernels.conv3d_f32(args[0], args[1], bias, attrs['stride'], attrs['padding'], threads)
    if kind == 'ReLU':
        return np.maximum(args[0], np.float32(0))
    if kind == 'MaxPool3D':
        return kernels.maxpool3d(args[0], attrs['kernel'], attrs['stride'])
    if kind == 'Upsample3D':
        return kernels.upsample3d(args[0], attrs['scale'])
    if kind == 'Concat':
        return np.concatenate(args, axis=attrs['axis'])
    if kind == 'Add':
        return np.add(args[0], args[1], dtype=np.float32)
    if kind == 'Softmax':
        return kernels.softmax(args[0], attrs['axis'])
    if kind == 'ArgMax':
        return kernels.argmax(args[0], attrs['axis'])
    if kind == 'Quantize':
        return quantize_array(args[0], QuantParams.from_attrs(attrs))
    if kind == 'Dequantize':
        return dequantize_array(args[0], QuantParams.from_attrs(attrs))
    raise ValueError('no FP32 evaluation for kind {}'.format(kind))


def bind_inputs(names, specs, volume):
    if isinstance(volume, dict):
        feeds = dict(volume)
    elif len(names) == 1:
        feeds = {names[0]: volume}
    else:
        raise ShapeMismatch('graph has {} inputs; pass a dict of volumes'.format(len(names)))
    bound = {}
    for name in names:
        if name not in feeds:
            raise ShapeMismatch('no volume supplied for input {}'.format(name))
        data = np.ascontiguousarray(feeds[name], dtype=np.float32)
        if data.shape != tuple(specs[name].shape):
            raise ShapeMismatch('input {} expects shape {}, got {}'.format(name, tuple(specs[name].shape), data.shape))
        if not np.isfinite(data).all():
            raise NonFiniteValue('input {} contains NaN or Inf'.format(name))
        bound[name] = data
    return bound


def _last_uses(steps, keep):
    last = {}
    for i, (reads, _) in enumerate(steps):
        for name in reads:
            last[name] = i
    for name in keep:
        last[name] = len(steps)
    return last


def _batch_of(volume):
    first = next(iter(volume.values())) if isinstance(volume, dict) else volume
    return int(np.shape(first)[0])


class Fp32Executor():
    '''
    Runs a graph node by node in topological order, releasing each tensor
    after its last reader. Quantize/Dequantize nodes apply fake quantization.
    '''

    def __init__(self, g, threads=1):
        self.g = g
        self.threads = threads
        self.weights = {entry.name: g.weight_array(entry.name) for entry in g.weights}
        self.bound = {}

    def _prepare(self, batch):
        if batch not in self.bound:
            g = validate_and_infer_shapes(self.g, batch)
            order = g.topological_order()
            steps = [(node.inputs, node.outputs) for node in order]
            outputs = [spec.name for spec in g.outputs]
            self.bound[batch] = (g, order, _last_uses(steps, outputs))
        return self.bound[batch]

    def run(self, volume, observer=None):
        g, order, last = self._prepare(_batch_of(volume))
        env = bind_inputs([spec.name for spec in g.inputs], g.tensors, volume)
        if observer is not None:
            for name, data in env.items():
                observer(name, data)
        for i, node in enumerate(order):
            args = [env[name] if name in env else self.weights[name] for name in node.inputs]
            out = run_node(node.kind, node.attrs, args, self.threads)
            env[node.outputs[0]] = out
            if observer is not None:
                observer(node.outputs[0], out)
            for name in node.inputs:
                if last.get(name) == i and name in env:
                    del env[name]
        return {spec.name: env[spec.name] for spec in g.outputs}


def execute_fp32(g, volume, observer=None, threads=1):
    '''
    Evaluates `g` on one volume (or a dict of volumes keyed by input name).
    `observer(name, array)` sees every graph input and node output.
    '''
    return Fp32Executor(g, threads).run(volume, observer)


def fp32_workspace_bytes(g, batch=1):
    '''
    Returns (planned, naive) activation bytes for FP32 execution of `g`:
    planned frees tensors after their last reader, naive keeps all of them.
    '''
    g = validate_and_infer_shapes(g, batch)
    order = g.topological_order()
    steps = [(node.inputs, node.outputs) for node in order]
    sizes = {name: tensor_nbytes(spec) for name, spec in g.tensors.items()}
    return peak_live_bytes(steps, sizes, keep=[spec.name for spec in g.outputs])


class Workspace():
    '''
    Scratch budget for one in-flight inference.
    '''

    def __init__(self, nbytes):
        self.nbytes = nbytes

    @classmethod
    def for_plan(cls, plan):
        return cls(plan.workspace_bytes)


def run_op(plan, index, op, env, threads=1):
    '''
    Executes one plan op against `env` in place.
    '''
    if isinstance(op, QuantizeInput):
        env[op.dst] = quantize_array(env[op.src], op.params)
    elif isinstance(op, DequantizeOutput):
        env[op.dst] = dequantize_array(env[op.src], op.params)
    elif isinstance(op, FusedConvInt8):
        env[op.dst] = kernels.conv3d_int8(env[op.src], op.input_params.zero_point, plan.prepared(index),
                                          op.stride, op.padding, op.requant_multiplier,
                                          op.output_params.zero_point, op.clamp_lo, threads)
    elif isinstance(op, MaxPoolInt8):
        env[op.dst] = kernels.maxpool3d(env[op.src], op.kernel, op.stride)
    elif isinstance(op, UpsampleInt8):
        env[op.dst] = kernels.upsample3d(env[op.src], op.scale)
    elif isinstance(op, ConcatInt8):
        env[op.dst] = np.concatenate([env[name] for name in op.srcs], axis=op.axis)
    elif isinstance(op, RequantizeTensor):
        env[op.dst] = kernels.requantize_codes(env[op.src], op.in_params, op.out_params)
    elif isinstance(op, FP32Fallback):
        args = [env[name] for name in op.srcs] + [array for _, array in op.weights]
        env[op.dsts[0]] = run_node(op.kind, op.attrs, args, threads)
    else:
        raise TypeError('unknown plan op {!r}'.format(type(op).__name__))


def execute_int8_engine(plan, volume, workspace=None, threads=1, observer=None):
    '''
    Runs an engine plan. Engine I/O is FP32 (labels leave as U16); everything
    between QuantizeInput and DequantizeOutput stays in uint8 codes.
    '''
    if workspace is not None and workspace.nbytes < plan.workspace_bytes:
        raise WorkspaceTooSmall('workspace of {} bytes, plan needs {}'.format(workspace.nbytes, plan.workspace_bytes))
    env = bind_inputs(list(plan.inputs), plan.tensors, volume)
    last = plan.last_use
    for i, op in enumerate(plan.ops):
        run_op(plan, i, op, env, threads)
        if observer is not None:
            for name in plan.op_writes(op):
                observer(name, env[name])
        for name in plan.op_reads(op):
            if last.get(name) == i and name in env:
                del env[name]
    return {name: env[name] for name in plan.outputs}

'''
Command-line entry point. Each subcommand is one stage of the toolchain or
one experiment; all artifacts are files so stages can run as separate
processes.
'''
import argparse
import json
import logging
import os
import sys

import numpy as np

from .bench import (EngineRunnable, Fp32Runnable, bench_config, bench_latency, compare_report, evaluate_dice,
                    format_compare_table, format_sweep_table, load_artifacts, scaling_sweep)
from .calib import CalibrationTable, calibrate_graph
from .config import (BENCH_STATISTIC, BENCH_TIMED_RUNS, BENCH_WARMUP_RUNS, CALIB_METHODS, DEFAULT_BITS,
                     DEFAULT_CLASSES, DEFAULT_COUNT, DEFAULT_PERCENTILE, DEFAULT_SEED, DEFAULT_SHAPE, DEFAULT_SIGMA,
                     DEFAULT_THREADS, LOG_FORMAT, MODEL_FAMILIES, UNET_WIDTHS)
from .engine import build_engine, engine_sections, deserialize_engine, serialize_engine
from .errors import DATA_ERROR, InvalidConfig, MissingArtifact, VoxquantError
from .executor import execute_int8_engine
from .graph import load_model, save_model
from .pipeline import run_pipeline
from .qdq import insert_qdq, parse_policy
from .synth import gen_synthetic_dataset
from .volumes import load_dataset, load_volume, save_dataset, save_volume
from .zoo import gen_model

logger = logging.getLogger(__name__)


def _shape(text):
    try:
        dims = tuple(int(d) for d in text.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError('shape must look like 64x64x64, got {!r}'.format(text)) from None
    if len(dims) != 3:
        raise argparse.ArgumentTypeError('shape needs three spatial dims, got {!r}'.format(text))
    return dims


def parse_args(argv=None):
    parser = argparse.ArgumentParser(prog='voxquant', description='INT8 post-training quantization for 3D '
                                                                   'segmentation networks.')
    parser.add_argument('command', choices=['gen-data', 'gen-model', 'calibrate', 'quantize', 'build', 'run', 'bench',
                                            'eval-dice', 'compare', 'sweep', 'inspect', 'pipeline'])
    parser.add_argument('--model', action='append', help='Model document (.json); repeat for compare')
    parser.add_argument('--engine', help='Engine file (.vqe)')
    parser.add_argument('--data', help='Dataset directory or a single volume stem')
    parser.add_argument('--calib', help='Calibration table (.json)')
    parser.add_argument('--out', help='Output file or directory')
    parser.add_argument('--bits', type=int, default=DEFAULT_BITS, help='Quantization bit width')
    parser.add_argument('--policy', default='conv', help='QDQ policy: conv, all, none or a comma list of kinds')
    parser.add_argument('--seed', type=int, default=DEFAULT_SEED)
    parser.add_argument('--threads', type=int, default=DEFAULT_THREADS)
    parser.add_argument('--warmup', type=int, default=BENCH_WARMUP_RUNS, help='Untimed warmup runs')
    parser.add_argument('--runs', type=int, default=BENCH_TIMED_RUNS, help='Timed runs')
    parser.add_argument('--statistic', default=BENCH_STATISTIC, help='Latency statistic: median, mean or p95')
    parser.add_argument('--calib-method', choices=CALIB_METHODS, default='minmax')
    parser.add_argument('--percentile', type=float, default=DEFAULT_PERCENTILE)
    parser.add_argument('--calib-count', type=int, default=4, help='Volumes used for calibration in sweep')
    parser.add_argument('--count', type=int, default=DEFAULT_COUNT, help='Volumes to generate')
    parser.add_argument('--shape', type=_shape, default=DEFAULT_SHAPE, help='Spatial shape, e.g. 64x64x64')
    parser.add_argument('--classes', type=int, default=DEFAULT_CLASSES)
    parser.add_argument('--sigma', type=float, default=DEFAULT_SIGMA, help='Noise standard deviation')
    parser.add_argument('--family', choices=MODEL_FAMILIES, default='toy-unet')
    parser.add_argument('--scale', action='append', help='toy-unet scale ({}); repeat for sweep'.format(
        ', '.join(UNET_WIDTHS)))
    parser.add_argument('--unfused-relu', action='store_true', help='Keep ReLU as a separate op in the engine')
    parser.add_argument('--verbose', action='store_true')
    return parser.parse_args(argv)


def _require(args, *names):
    for name in names:
        if getattr(args, name) in (None, []):
            raise InvalidConfig('{} needs --{}'.format(args.command, name.replace('_', '-')))


def _model_paths(path):
    weights = path[:-5] + '.bin' if path.endswith('.json') else path + '.bin'
    if not os.path.exists(path):
        raise MissingArtifact('model document {} not found'.format(path))
    return path, weights


def _load_model(path):
    return load_model(*_model_paths(path))


def _read_engine(path):
    if not os.path.exists(path):
        raise MissingArtifact('engine {} not found'.format(path))
    with open(path, 'rb') as engine_file:
        return engine_file.read()


def _samples(args):
    '''
    (volume, labels) pairs from --data; labels are None for a lone volume.
    '''
    if os.path.isdir(args.data):
        return load_dataset(args.data)[1]
    return [(load_volume(args.data), None)]


def _scale(args):
    return args.scale[0] if args.scale else 'S'


def _bench_cfg(args):
    return bench_config(args.warmup, args.runs, args.statistic, threads=args.threads, seed=args.seed)


def _write_json(path, doc):
    with open(path, 'w') as out_file:
        out_file.write(json.dumps(doc, indent=1, sort_keys=True) + '\n')


def gen_data(args):
    _require(args, 'out')
    samples = gen_synthetic_dataset(args.seed, args.count, args.shape, args.classes, args.sigma)
    save_dataset(args.out, samples, {'seed': args.seed, 'shape': list(args.shape), 'classes': args.classes,
                                     'sigma': args.sigma})
    print('wrote {} volumes to {}'.format(len(samples), args.out))


def gen_model_cmd(args):
    _require(args, 'out')
    g = gen_model(args.family, _scale(args), args.classes, args.seed, args.shape)
    save_model(g, args.out)
    print('{}: {:,} parameters, {} nodes'.format(g.name, g.parameter_count(), len(g.nodes)))


def calibrate(args):
    _require(args, 'model', 'data', 'out')
    g = _load_model(args.model[0])
    policy = parse_policy(args.policy, args.bits)
    volumes = [volume for volume, _ in _samples(args)]
    table = calibrate_graph(g, volumes, policy, args.bits, args.calib_method, args.percentile, args.threads)
    table.save(args.out)
    print('calibrated {} tensors over {} volumes'.format(len(table), len(volumes)))


def quantize(args):
    _require(args, 'model', 'calib', 'out')
    g = _load_model(args.model[0])
    table = CalibrationTable.load(args.calib)
    fake = insert_qdq(g, table, parse_policy(args.policy, table.bits))
    save_model(fake, args.out)
    print('inserted {} QDQ nodes'.format(len(fake.nodes) - len(g.nodes)))


def build(args):
    _require(args, 'model', 'out')
    plan = build_engine(_load_model(args.model[0]), 1, fuse_relu=not args.unfused_relu)
    engine = serialize_engine(plan)
    with open(args.out, 'wb') as engine_file:
        engine_file.write(engine)
    print('engine: {} ops, {} bytes'.format(len(plan.ops), len(engine)))


def pipeline(args):
    _require(args, 'model', 'data', 'out')
    g = _load_model(args.model[0])
    volumes = [volume for volume, _ in _samples(args)]
    result = run_pipeline(g, volumes, args.bits, parse_policy(args.policy, args.bits), args.out,
                          args.calib_method, args.percentile, args.threads, args.seed)
    print('engine {} bytes, fp32 weights {} bytes'.format(len(result.engine), len(g.blob)))


def _runnable(args):
    if args.engine:
        return EngineRunnable(deserialize_engine(_read_engine(args.engine)), args.threads)
    _require(args, 'model')
    return Fp32Runnable(_load_model(args.model[0]), args.threads)


def run(args):
    _require(args, 'data', 'out')
    runnable = _runnable(args)
    os.makedirs(args.out, exist_ok=True)
    for i, (volume, _) in enumerate(_samples(args)):
        for name, data in runnable.run(volume).items():
            dtype = 'U16' if data.dtype == np.uint16 else 'F32'
            save_volume(os.path.join(args.out, '{}_{:04d}'.format(name, i)), data, dtype)
    print('wrote outputs to {}'.format(args.out))


def bench(args):
    stats = bench_latency(_runnable(args), _bench_cfg(args))
    doc = dict(stats._asdict(), statistic=args.statistic, threads=args.threads)
    if args.out:
        _write_json(args.out, doc)
    print('latency {} {:.3f} ms (mean {:.3f}, p95 {:.3f}, {} runs)'.format(
        args.statistic, getattr(stats, args.statistic) / 1e3, stats.mean / 1e3, stats.p95 / 1e3, len(stats.samples)))


def eval_dice(args):
    _require(args, 'data')
    samples = _samples(args)
    if any(labels is None for _, labels in samples):
        raise InvalidConfig('eval-dice needs a dataset directory with labels')
    mdsc = evaluate_dice(_runnable(args), samples, args.classes)
    if args.out:
        _write_json(args.out, {'mdsc': mdsc, 'volumes': len(samples), 'classes': args.classes})
    print('mDSC {:.4f} over {} volumes'.format(mdsc, len(samples)))


def compare(args):
    _require(args, 'model', 'data', 'out')
    samples = _samples(args)
    artifacts = [load_artifacts(path) if os.path.isdir(path) else None for path in args.model]
    if None in artifacts:
        raise InvalidConfig('compare takes pipeline output directories as --model')
    report = compare_report(artifacts, samples, args.out, _bench_cfg(args), args.classes)
    print(format_compare_table(report), end='')


def sweep(args):
    _require(args, 'data', 'out')
    _, samples = load_dataset(args.data)
    scales = args.scale or list(UNET_WIDTHS)
    report = scaling_sweep(args.family, scales, samples, args.out, _bench_cfg(args), args.classes,
                           parse_policy(args.policy, args.bits), args.bits, args.seed, args.calib_count)
    print(format_sweep_table(report), end='')


def inspect(args):
    if args.engine:
        engine = _read_engine(args.engine)
        plan = deserialize_engine(engine)
        for line in plan.describe():
            print(line)
        print('sections: ' + ', '.join('{}={}'.format(k, v) for k, v in engine_sections(engine).items()))
        print('workspace: {} bytes (naive {})'.format(plan.workspace_bytes, plan.naive_bytes))
        return
    _require(args, 'model')
    g = _load_model(args.model[0])
    for node in g.topological_order():
        outs = ', '.join('{} {}{}'.format(n, g.tensors[n].dtype, list(g.tensors[n].shape)) for n in node.outputs)
        print('{:<20} {:<10} {} -> {}'.format(node.id, node.kind, ', '.join(node.inputs), outs))
    print('{}: {:,} parameters, weights {} bytes'.format(g.name, g.parameter_count(), len(g.blob)))


COMMANDS = {'gen-data': gen_data, 'gen-model': gen_model_cmd, 'calibrate': calibrate, 'quantize': quantize,
            'build': build, 'pipeline': pipeline, 'run': run, 'bench': bench, 'eval-dice': eval_dice,
            'compare': compare, 'sweep': sweep, 'inspect': inspect}


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format=LOG_FORMAT)
    try:
        COMMANDS[args.command](args)
    except VoxquantError as err:
        print('error: {}'.format(err), file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print('error: {}'.format(err), file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == '__main__':
    sys.exit(main())

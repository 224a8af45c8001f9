'''
Experiment harness: latency measurement, accuracy evaluation, comparison
reports and the model-scale sweep.

Internally sizes are bytes and latencies microseconds; text tables show MB
and ms.
'''
import json
import logging
import os
import time
from collections import namedtuple

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .config import BENCH_STATISTIC, BENCH_STATISTICS, BENCH_TIMED_RUNS, BENCH_WARMUP_RUNS, DEFAULT_SEED
from .engine import deserialize_engine, engine_size_report, fp32_model_bytes
from .errors import InvalidConfig, MissingArtifact, ScalingRegression, ShapeMismatch
from .executor import Fp32Executor, Workspace, execute_int8_engine
from .graph import load_model
from .metrics import mean_dice
from .pipeline import artifact_paths, run_pipeline
from .zoo import gen_model

logger = logging.getLogger(__name__)

MB = 1e6

LatencyStats = namedtuple('LatencyStats', ['median', 'mean', 'p95', 'min', 'max', 'samples', 'blas_threads'])
ModelArtifacts = namedtuple('ModelArtifacts', ['name', 'fp32', 'fake', 'engine'])
CompareReport = namedtuple('CompareReport', ['statistic', 'rows'])
SweepReport = namedtuple('SweepReport', ['family', 'rows'])


class BenchConfig(namedtuple('_BenchConfig', ['warmup_runs', 'timed_runs', 'statistic', 'shape', 'threads',
                                              'seed'])):
    '''
    Latency protocol. `shape` of None takes the model's own input shape.
    '''

    def validate(self):
        if self.timed_runs < 3:
            raise InvalidConfig('timed_runs must be at least 3, got {}'.format(self.timed_runs))
        if self.warmup_runs < 0:
            raise InvalidConfig('warmup_runs must be non-negative, got {}'.format(self.warmup_runs))
        if self.statistic not in BENCH_STATISTICS:
            raise InvalidConfig('statistic must be one of {}, got {!r}'.format(', '.join(BENCH_STATISTICS),
                                                                              self.statistic))
        if self.threads < 1:
            raise InvalidConfig('threads must be positive, got {}'.format(self.threads))
        return self


def bench_config(warmup_runs=BENCH_WARMUP_RUNS, timed_runs=BENCH_TIMED_RUNS, statistic=BENCH_STATISTIC, shape=None,
                 threads=1, seed=DEFAULT_SEED):
    return BenchConfig(warmup_runs, timed_runs, statistic, shape, threads, seed).validate()


class Runnable():
    '''
    Something that maps an input volume to output tensors.
    '''
    kind = 'runnable'

    def input_shape(self):
        '''
        Concrete (1, C, D, H, W) shape of the single input.
        '''
        raise NotImplementedError('input_shape')

    def run(self, volume):
        '''
        Returns {output name: array}.
        '''
        raise NotImplementedError('run')

    def labels(self, volume):
        '''
        Label field for Dice: the first U16 output, else ArgMax over
        channels of the first output.
        '''
        outputs = self.run(volume)
        for data in outputs.values():
            if data.dtype == np.uint16:
                return data
        first = next(iter(outputs.values()))
        return np.expand_dims(np.argmax(first, axis=1), 1).astype(np.uint16)


class Fp32Runnable(Runnable):
    kind = 'fp32'

    def __init__(self, g, threads=1):
        self.g = g
        self.executor = Fp32Executor(g, threads)

    def input_shape(self):
        return (1,) + tuple(self.g.inputs[0].shape[1:])

    def run(self, volume):
        return self.executor.run(volume)


class FakeQuantRunnable(Fp32Runnable):
    kind = 'fake'


class EngineRunnable(Runnable):
    kind = 'int8'

    def __init__(self, plan, threads=1):
        self.plan = plan
        self.threads = threads
        self.workspace = Workspace.for_plan(plan)

    def input_shape(self):
        return tuple(self.plan.tensors[self.plan.inputs[0]].shape)

    def run(self, volume):
        return execute_int8_engine(self.plan, volume, self.workspace, self.threads)


def latency_stats(samples, blas_threads=None):
    data = np.asarray(samples, dtype=np.float64)
    return LatencyStats(median=float(np.median(data)), mean=float(data.mean()), p95=float(np.percentile(data, 95)),
                        min=float(data.min()), max=float(data.max()), samples=[float(s) for s in samples],
                        blas_threads=blas_threads)


def bench_latency(runnable, cfg):
    '''
    Untimed warmup runs, then timed runs on one seeded input. Microseconds.
    Native BLAS and OpenMP pools are held to `cfg.threads` for the whole
    measurement, so `threads=1` times a single core.
    '''
    cfg.validate()
    shape = runnable.input_shape()
    if cfg.shape is not None and tuple(cfg.shape) != tuple(shape[2:]):
        raise ShapeMismatch('bench shape {} does not match model input {}'.format(tuple(cfg.shape), shape))
    volume = np.random.default_rng(cfg.seed).random(shape, dtype=np.float32)
    with threadpool_limits(limits=cfg.threads):
        blas_threads = max((pool['num_threads'] for pool in threadpool_info()), default=None)
        for _ in range(cfg.warmup_runs):
            runnable.run(volume)
        samples = []
        for _ in range(cfg.timed_runs):
            start = time.perf_counter()
            runnable.run(volume)
            samples.append((time.perf_counter() - start) * 1e6)
    stats = latency_stats(samples, blas_threads)
    logger.info('%s latency: median %.1f us over %d runs (native pools at %s threads)', runnable.kind, stats.median,
                cfg.timed_runs, blas_threads)
    return stats


def evaluate_dice(runnable, samples, classes):
    '''
    Mean over volumes of each volume's mDSC.
    '''
    return mean_dice(((runnable.labels(volume), labels) for volume, labels in samples), classes)


def load_artifacts(run_dir, name=None):
    '''
    Reads the FP32 model, fake model and engine a pipeline run left behind.
    '''
    paths = artifact_paths(run_dir)
    for key in ('model', 'model_weights', 'fake', 'fake_weights', 'engine'):
        if not os.path.exists(paths[key]):
            raise MissingArtifact('{} has no {} ({})'.format(run_dir, key.replace('_', ' '), paths[key]))
    with open(paths['engine'], 'rb') as engine_file:
        engine = engine_file.read()
    fp32 = load_model(paths['model'], paths['model_weights'])
    fake = load_model(paths['fake'], paths['fake_weights'])
    return ModelArtifacts(name or fp32.name, fp32, fake, engine)


def ratio(a, b):
    return a / b if b else 0.0


def format_ratio(a, b, scale):
    '''
    Reduction factor with its operands, e.g. `3.85x (61.98/16.09)`.
    '''
    return '{:.2f}x ({:.2f}/{:.2f})'.format(ratio(a, b), a / scale, b / scale)


def _model_row(artifacts, samples, classes, cfg):
    plan = deserialize_engine(artifacts.engine)
    runnables = {'fp32': Fp32Runnable(artifacts.fp32, cfg.threads), 'fake': FakeQuantRunnable(artifacts.fake, cfg.threads),
                 'int8': EngineRunnable(plan, cfg.threads)}
    stats = {key: bench_latency(r, cfg) for key, r in runnables.items()}
    latency = {key: getattr(s, cfg.statistic) for key, s in stats.items()}
    mdsc = {key: evaluate_dice(r, samples, classes) for key, r in runnables.items()}
    size = engine_size_report(artifacts.fp32, artifacts.engine)
    return {
        'model': artifacts.name,
        'params': artifacts.fp32.parameter_count(),
        'fp32_bytes': size.fp32_bytes,
        'fake_bytes': fp32_model_bytes(artifacts.fake),
        'int8_bytes': size.int8_bytes,
        'size_ratio': ratio(size.fp32_bytes, size.int8_bytes),
        'fp32_latency_us': latency['fp32'],
        'fake_latency_us': latency['fake'],
        'int8_latency_us': latency['int8'],
        'latency_ratio': ratio(latency['fp32'], latency['int8']),
        'fp32_mdsc': mdsc['fp32'],
        'fake_mdsc': mdsc['fake'],
        'int8_mdsc': mdsc['int8'],
        'workspace_naive_fp32_bytes': size.workspace['naive_fp32'],
        'workspace_fp32_bytes': size.workspace['planned_fp32'],
        'workspace_int8_bytes': size.workspace['int8'],
        'engine_sections': size.sections,
        'blas_threads': stats['int8'].blas_threads,
    }


def check_report(report):
    '''
    Recomputes every ratio from the raw columns; returns the rows that
    disagree (empty when consistent).
    '''
    bad = []
    for row in report.rows:
        if not (np.isclose(row['size_ratio'], ratio(row['fp32_bytes'], row['int8_bytes']))
                and np.isclose(row['latency_ratio'], ratio(row['fp32_latency_us'], row['int8_latency_us']))):
            bad.append(row['model'])
    return bad


def format_compare_table(report):
    header = ['Model', 'Size FP32', 'Size Fake', 'Size INT8', 'Size reduction', 'Lat FP32', 'Lat Fake', 'Lat INT8',
              'Speedup', 'mDSC FP32', 'mDSC Fake', 'mDSC INT8', 'Mem naive', 'Mem FP32', 'Mem INT8']
    lines = []
    for row in report.rows:
        lines.append([row['model'],
                      '{:.2f}'.format(row['fp32_bytes'] / MB), '{:.2f}'.format(row['fake_bytes'] / MB),
                      '{:.2f}'.format(row['int8_bytes'] / MB), format_ratio(row['fp32_bytes'], row['int8_bytes'], MB),
                      '{:.2f}'.format(row['fp32_latency_us'] / 1e3), '{:.2f}'.format(row['fake_latency_us'] / 1e3),
                      '{:.2f}'.format(row['int8_latency_us'] / 1e3),
                      format_ratio(row['fp32_latency_us'], row['int8_latency_us'], 1e3),
                      '{:.3f}'.format(row['fp32_mdsc']), '{:.3f}'.format(row['fake_mdsc']),
                      '{:.3f}'.format(row['int8_mdsc']),
                      '{:.2f}'.format(row['workspace_naive_fp32_bytes'] / MB),
                      '{:.2f}'.format(row['workspace_fp32_bytes'] / MB),
                      '{:.2f}'.format(row['workspace_int8_bytes'] / MB)])
    return _table(header, lines, note='sizes and memory in MB, latency in ms ({})'.format(report.statistic))


def _table(header, lines, note):
    widths = [max(len(str(cell)) for cell in column) for column in zip(header, *lines)]
    rule = '-' * (sum(widths) + 2 * (len(widths) - 1))
    out = [note, rule, '  '.join(h.ljust(w) for h, w in zip(header, widths)), rule]
    for line in lines:
        out.append('  '.join(str(cell).ljust(w) for cell, w in zip(line, widths)))
    out.append(rule)
    return '\n'.join(out) + '\n'


def _write_report(outpath, doc, table):
    directory = os.path.dirname(outpath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(outpath, 'w') as report_file:
        report_file.write(json.dumps(doc, indent=1, sort_keys=True) + '\n')
    stem = outpath[:-5] if outpath.endswith('.json') else outpath
    with open(stem + '.txt', 'w') as table_file:
        table_file.write(table)


def compare_report(models, samples, outpath, cfg, classes):
    '''
    FP32 / fake-quant / INT8 comparison per model. `models` holds
    ModelArtifacts or pipeline output directories.
    '''
    cfg.validate()
    rows = []
    for model in models:
        artifacts = model if isinstance(model, ModelArtifacts) else load_artifacts(model)
        logger.info('comparing %s', artifacts.name)
        rows.append(_model_row(artifacts, samples, classes, cfg))
    report = CompareReport(cfg.statistic, rows)
    doc = {'statistic': cfg.statistic, 'warmup_runs': cfg.warmup_runs, 'timed_runs': cfg.timed_runs,
           'threads': cfg.threads, 'rows': rows}
    _write_report(outpath, doc, format_compare_table(report))
    return report


def format_sweep_table(report):
    header = ['Scale', 'Params', 'Size FP32', 'Size INT8', 'Size reduction', 'Lat FP32', 'Lat INT8', 'Saved',
              'mDSC FP32', 'mDSC INT8']
    lines = [[row['scale'], '{:,}'.format(row['params']), '{:.2f}'.format(row['fp32_bytes'] / MB),
              '{:.2f}'.format(row['int8_bytes'] / MB), format_ratio(row['fp32_bytes'], row['int8_bytes'], MB),
              '{:.2f}'.format(row['fp32_latency_us'] / 1e3), '{:.2f}'.format(row['int8_latency_us'] / 1e3),
              '{:.2f}'.format(row['latency_saved_us'] / 1e3), '{:.3f}'.format(row['fp32_mdsc']),
              '{:.3f}'.format(row['int8_mdsc'])] for row in report.rows]
    return _table(header, lines, note='{}: sizes in MB, latency in ms'.format(report.family))


def scaling_sweep(family, scales, samples, outdir, cfg, classes, policy, bits=8, seed=DEFAULT_SEED, calib_count=4):
    '''
    Runs the pipeline at each scale and checks that the compression ratio
    does not fall as parameter count grows. The report is written before
    that check so a regression can still be inspected.
    '''
    cfg.validate()
    if len(set(scales)) < 2:
        raise InvalidConfig('a sweep needs at least two distinct scales, got {}'.format(list(scales)))
    shape = tuple(samples[0][0].shape[2:])
    calib = [volume for volume, _ in samples[:max(1, calib_count)]]
    rows = []
    for scale in sorted(set(scales), key=list(scales).index):
        g = gen_model(family, scale, classes, seed, shape)
        result = run_pipeline(g, calib, bits, policy, os.path.join(outdir, scale), threads=cfg.threads, seed=seed)
        fp32 = Fp32Runnable(g, cfg.threads)
        int8 = EngineRunnable(result.plan, cfg.threads)
        fp32_stats, int8_stats = bench_latency(fp32, cfg), bench_latency(int8, cfg)
        fp32_latency = getattr(fp32_stats, cfg.statistic)
        int8_latency = getattr(int8_stats, cfg.statistic)
        rows.append({'scale': scale, 'params': g.parameter_count(), 'fp32_bytes': fp32_model_bytes(g),
                     'int8_bytes': len(result.engine), 'size_ratio': ratio(fp32_model_bytes(g), len(result.engine)),
                     'fp32_latency_us': fp32_latency, 'int8_latency_us': int8_latency,
                     'latency_saved_us': fp32_latency - int8_latency, 'blas_threads': int8_stats.blas_threads,
                     'fp32_mdsc': evaluate_dice(fp32, samples, classes),
                     'int8_mdsc': evaluate_dice(int8, samples, classes)})
    rows.sort(key=lambda row: row['params'])
    report = SweepReport(family, rows)
    doc = {'family': family, 'statistic': cfg.statistic, 'threads': cfg.threads, 'rows': rows}
    _write_report(os.path.join(outdir, 'sweep.json'), doc, format_sweep_table(report))
    for smaller, larger in zip(rows, rows[1:]):
        if larger['size_ratio'] < smaller['size_ratio']:
            raise ScalingRegression('compression ratio drops from {:.3f} ({}) to {:.3f} ({})'.format(
                smaller['size_ratio'], smaller['scale'], larger['size_ratio'], larger['scale']))
    return report

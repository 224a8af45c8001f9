'''
Range calibration: observers, parameter finalization and calibration tables.
'''
import json
import logging
import math
import os
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import (DEFAULT_BITS, DEFAULT_PERCENTILE, DEGENERATE_RANGE_EPS, DEGENERATE_RANGE_WIDTH,
                     HISTOGRAM_BINS, MAX_BITS, MIN_BITS)
from .errors import (EmptyDataset, EmptyObserver, InputShapeMismatch, InvalidConfig, MalformedArtifact,
                     MissingArtifact, MissingCalibration, NonFiniteValue, VoxquantError)
from .executor import Fp32Executor
from .graph import DYNAMIC
from .quant import QuantParams

logger = logging.getLogger(__name__)

RangeObserver = namedtuple('RangeObserver', ['min_seen', 'max_seen', 'count'])
EMPTY_OBSERVER = RangeObserver(math.inf, -math.inf, 0)
CalibEntry = namedtuple('CalibEntry', ['observer', 'params'])


def observe(o, values, name=None):
    '''
    Widens `o` by the extent of `values`.
    '''
    data = np.asarray(values)
    if data.size == 0:
        return o
    if not np.isfinite(data).all():
        raise NonFiniteValue('tensor {} contains NaN or Inf'.format(name or '<unnamed>'))
    return RangeObserver(min(o.min_seen, float(data.min())), max(o.max_seen, float(data.max())), o.count + int(data.size))


def merge_observers(a, b):
    return RangeObserver(min(a.min_seen, b.min_seen), max(a.max_seen, b.max_seen), a.count + b.count)


def finalize_params(o, bits=DEFAULT_BITS):
    '''
    Scale and zero point for the observed range, widened to include zero.
    '''
    if o.count <= 0:
        raise EmptyObserver('cannot finalize an observer that saw no values')
    if not MIN_BITS <= bits <= MAX_BITS:
        raise InvalidConfig('bit width {} outside [{}, {}]'.format(bits, MIN_BITS, MAX_BITS))
    lo = min(o.min_seen, 0.0)
    hi = max(o.max_seen, 0.0)
    if hi - lo < DEGENERATE_RANGE_EPS:
        hi = lo + DEGENERATE_RANGE_WIDTH
    qmax = (1 << bits) - 1
    scale = (hi - lo) / qmax
    zero_point = min(max(-round(lo / scale), 0), qmax)
    return QuantParams(scale, zero_point, bits)


def percentile_range(o, histogram, percentile):
    '''
    Clips the observer range to the central `percentile` mass of a histogram
    spanning [o.min_seen, o.max_seen]; edges snap outward to bin boundaries.
    '''
    total = int(histogram.sum())
    if total == 0 or o.max_seen <= o.min_seen:
        return o
    tail = total * (100.0 - percentile) / 200.0
    cdf = np.cumsum(histogram)
    edges = np.linspace(o.min_seen, o.max_seen, len(histogram) + 1)
    lo_bin = int(np.searchsorted(cdf, tail, side='right'))
    hi_bin = int(np.searchsorted(cdf, total - tail, side='left'))
    lo = float(edges[min(lo_bin, len(histogram) - 1)])
    hi = float(edges[min(hi_bin + 1, len(histogram))])
    return RangeObserver(max(o.min_seen, lo), min(o.max_seen, hi), o.count)


class CalibrationTable():
    '''
    Tensor name -> (observer, params), all at one bit width.
    '''

    def __init__(self, entries, bits):
        self.entries = dict(sorted(entries.items()))
        self.bits = bits

    def __contains__(self, name):
        return name in self.entries

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, CalibrationTable) and self.bits == other.bits and self.entries == other.entries

    def names(self):
        return list(self.entries)

    def params(self, name):
        if name not in self.entries:
            raise MissingCalibration('tensor {} has no calibration entry'.format(name))
        return self.entries[name].params

    def to_json(self):
        doc = {name: {'min': e.observer.min_seen, 'max': e.observer.max_seen, 'count': e.observer.count,
                      'scale': e.params.scale, 'zero_point': e.params.zero_point, 'bits': e.params.bits}
               for name, e in self.entries.items()}
        return json.dumps(doc, indent=1, sort_keys=True) + '\n'

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
            entries = {}
            for name, e in doc.items():
                entries[name] = CalibEntry(RangeObserver(float(e['min']), float(e['max']), int(e['count'])),
                                           QuantParams(float(e['scale']), int(e['zero_point']), int(e['bits'])))
        except (ValueError, KeyError, TypeError, AttributeError) as err:
            raise MalformedArtifact('unreadable calibration table: {!r}'.format(err)) from None
        for name, e in entries.items():
            try:
                e.params.validate()
            except VoxquantError as err:
                raise MalformedArtifact('calibration entry {}: {}'.format(name, err)) from None
        if len({e.params.bits for e in entries.values()}) > 1:
            raise MalformedArtifact('calibration table mixes bit widths')
        bits = next(iter(entries.values())).params.bits if entries else DEFAULT_BITS
        return cls(entries, bits)

    def save(self, path):
        with open(path, 'w') as table_file:
            table_file.write(self.to_json())

    @classmethod
    def load(cls, path):
        if not os.path.isfile(path):
            raise MissingArtifact('calibration table {} does not exist'.format(path))
        with open(path) as table_file:
            return cls.from_json(table_file.read())


def _check_dataset(g, dataset):
    volumes = list(dataset)
    if not volumes:
        raise EmptyDataset('calibration needs at least one volume')
    specs = {spec.name: spec for spec in g.inputs}
    for i, volume in enumerate(volumes):
        feeds = volume if isinstance(volume, dict) else {g.inputs[0].name: volume}
        for name, spec in specs.items():
            shape = np.shape(feeds.get(name, ()))
            expected = tuple(spec.shape)
            if len(shape) != 5 or any(a != b for a, b in zip(shape, expected) if b != DYNAMIC) or shape[0] < 1:
                raise InputShapeMismatch('calibration volume {} has shape {} for input {} {}'.format(
                    i, shape, name, expected))
    return volumes


def _shards(items, count):
    size = max(1, -(-len(items) // max(1, count)))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _observe_shard(g, shard, names):
    '''
    Min/max pass over one shard of the dataset.
    '''
    executor = Fp32Executor(g)
    observers = {}

    def hook(name, data):
        if name in names:
            observers[name] = observe(observers.get(name, EMPTY_OBSERVER), data, name)

    for volume in shard:
        executor.run(volume, hook)
    return observers


def _histogram_shard(g, shard, ranges):
    executor = Fp32Executor(g)
    histograms = {}

    def hook(name, data):
        if name in ranges:
            lo, hi = ranges[name]
            counts, _ = np.histogram(data, bins=HISTOGRAM_BINS, range=(lo, hi) if hi > lo else (lo, lo + 1.0))
            histograms[name] = histograms.get(name, 0) + counts

    for volume in shard:
        executor.run(volume, hook)
    return histograms


def _fan_out(fn, shards, threads):
    if threads <= 1 or len(shards) < 2:
        return [fn(shard) for shard in shards]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, shards))


def calibrate_graph(g, dataset, policy, bits=DEFAULT_BITS, method='minmax', percentile=DEFAULT_PERCENTILE,
                    threads=1):
    '''
    Runs the FP32 executor over `dataset` and finalizes one QuantParams per
    tensor the policy selects. The dataset may be split across `threads`
    workers; observers and histograms merge exactly, so the table does not
    depend on the split or on dataset order.
    '''
    if method not in ('minmax', 'percentile'):
        raise InvalidConfig('unknown calibration method {!r}'.format(method))
    volumes = _check_dataset(g, dataset)
    selection = policy.select(g)
    activations = set(selection.activations)
    shards = _shards(volumes, threads)

    observers = {}
    for part in _fan_out(lambda shard: _observe_shard(g, shard, activations), shards, threads):
        for name, o in part.items():
            observers[name] = merge_observers(observers.get(name, EMPTY_OBSERVER), o)
    missing = activations - set(observers)
    if missing:
        raise EmptyObserver('tensors never observed: {}'.format(', '.join(sorted(missing))))

    if method == 'percentile':
        ranges = {name: (o.min_seen, o.max_seen) for name, o in observers.items()}
        histograms = {}
        for part in _fan_out(lambda shard: _histogram_shard(g, shard, ranges), shards, threads):
            for name, counts in part.items():
                histograms[name] = histograms.get(name, 0) + counts
        observers = {name: percentile_range(o, histograms[name], percentile) for name, o in observers.items()}

    for name in selection.weights:
        observers[name] = observe(EMPTY_OBSERVER, g.weight_array(name), name)

    entries = {}
    for name, o in observers.items():
        if max(o.max_seen, 0.0) - min(o.min_seen, 0.0) < DEGENERATE_RANGE_EPS:
            logger.warning('tensor %s has a degenerate range [%r, %r]', name, o.min_seen, o.max_seen)
        entries[name] = CalibEntry(o, finalize_params(o, bits))
    logger.info('calibrated %d tensors over %d volumes (%s)', len(entries), len(volumes), method)
    return CalibrationTable(entries, bits)

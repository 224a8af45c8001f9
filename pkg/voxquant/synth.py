'''
Synthetic segmentation data: nested axis-aligned boxes with class-banded
intensities plus Gaussian noise.

Class c has intensity band [c/C, (c+1)/C); voxels sit at the band centre
before noise. Box c+1 lies strictly inside box c, so any 3x3x3 neighbourhood
touches at most two adjacent classes.
'''
import logging
import math

import numpy as np

from .config import MIN_SPATIAL, OUTER_MARGIN
from .errors import InvalidConfig

logger = logging.getLogger(__name__)


def check_config(count, shape, classes, sigma):
    if classes < 2 or classes > 65535:
        raise InvalidConfig('classes must be in [2, 65535], got {}'.format(classes))
    if len(shape) != 3 or any(d < MIN_SPATIAL for d in shape):
        raise InvalidConfig('shape must be 3 spatial dims of at least {}, got {}'.format(MIN_SPATIAL, tuple(shape)))
    if count < 1:
        raise InvalidConfig('count must be positive, got {}'.format(count))
    if not math.isfinite(sigma) or sigma < 0:
        raise InvalidConfig('noise sigma must be finite and non-negative, got {}'.format(sigma))


def nested_boxes(rng, shape, classes):
    '''
    Label field with class c+1 boxed inside class c; inner classes are
    dropped when the boxes run out of room.
    '''
    labels = np.zeros(shape, dtype=np.uint16)
    lo = [OUTER_MARGIN + int(rng.integers(0, 2)) for _ in shape]
    hi = [n - OUTER_MARGIN - int(rng.integers(0, 2)) for n in shape]
    insets = [max(1, (n // 2 - OUTER_MARGIN) // classes) for n in shape]
    for c in range(1, classes):
        if c > 1:
            for axis in range(3):
                lo[axis] += max(1, insets[axis] + int(rng.integers(-1, 2)))
                hi[axis] -= max(1, insets[axis] + int(rng.integers(-1, 2)))
        if any(a >= b for a, b in zip(lo, hi)):
            logger.debug('no room for classes >= %d in shape %s', c, tuple(shape))
            break
        labels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = c
    return labels


def band_centres(classes):
    return (np.arange(classes) + 0.5) / classes


def gen_synthetic_dataset(seed, count, shape, classes, sigma):
    '''
    Returns `count` (volume, labels) pairs shaped (1, 1, D, H, W); a pure
    function of its arguments.
    '''
    check_config(count, shape, classes, sigma)
    rng = np.random.default_rng(seed)
    centres = band_centres(classes)
    samples = []
    for _ in range(count):
        labels = nested_boxes(rng, tuple(shape), classes)
        volume = centres[labels]
        if sigma > 0:
            volume = volume + rng.normal(0.0, sigma, size=volume.shape)
        samples.append((volume.astype(np.float32)[None, None], labels[None, None]))
    return samples


def out_of_band_fraction(samples, classes):
    '''
    Fraction of voxels whose intensity lies outside their label's band.
    '''
    outside = 0
    total = 0
    for volume, labels in samples:
        band = np.floor(volume.astype(np.float64) * classes)
        outside += int(np.count_nonzero(band != labels))
        total += labels.size
    return outside / total

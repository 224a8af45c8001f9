'''
Model generators: the analytic centroid-net and a seeded toy U-Net family.
'''
import math

import numpy as np

from .config import DEFAULT_SHAPE, MODEL_FAMILIES, UNET_WIDTHS
from .errors import InvalidConfig
from .graph import DYNAMIC, GraphBuilder
from .synth import band_centres


def centroid_net(classes, shape=DEFAULT_SHAPE):
    '''
    3x3x3 mean filter, then a 1x1x1 conv scoring x * mu_c - mu_c^2 / 2 per
    class, then ArgMax: nearest band centre wins.
    '''
    if classes < 2:
        raise InvalidConfig('centroid-net needs at least 2 classes')
    b = GraphBuilder('centroid-net')
    x = b.input('volume', (DYNAMIC, 1) + tuple(shape))
    smooth = b.conv(x, np.full((1, 1, 3, 3, 3), 1.0 / 27.0), np.zeros(1), padding=1, name='smooth')
    mu = band_centres(classes)
    scores = b.conv(smooth, mu.reshape(classes, 1, 1, 1, 1), -mu * mu / 2.0, name='centroids')
    b.output(b.argmax(scores, name='labels'))
    return b.build()


def toy_unet(scale, classes, seed, shape=DEFAULT_SHAPE):
    '''
    Two-level encoder/decoder with skip connections. Widths w, 2w, 4w with w
    set by `scale`; parameters grow with w^2.
    '''
    if scale not in UNET_WIDTHS:
        raise InvalidConfig('unknown scale {!r}; expected one of {}'.format(scale, ', '.join(UNET_WIDTHS)))
    if any(d % 4 for d in shape):
        raise InvalidConfig('toy-unet needs spatial dims divisible by 4, got {}'.format(tuple(shape)))
    w = UNET_WIDTHS[scale]
    rng = np.random.default_rng(seed)
    b = GraphBuilder('toy-unet-{}'.format(scale))

    def conv(x, cin, cout, name, k=3, relu=True):
        weight = rng.normal(0.0, math.sqrt(2.0 / (cin * k ** 3)), size=(cout, cin, k, k, k))
        bias = rng.normal(0.0, 0.01, size=cout)
        return b.conv(x, weight, bias, padding=k // 2, relu=relu, name=name)

    def block(x, cin, cout, name):
        return conv(conv(x, cin, cout, name + 'a'), cout, cout, name + 'b')

    x = b.input('volume', (DYNAMIC, 1) + tuple(shape))
    enc1 = block(x, 1, w, 'enc1')
    enc2 = block(b.maxpool(enc1, 2, name='pool1'), w, 2 * w, 'enc2')
    mid = block(b.maxpool(enc2, 2, name='pool2'), 2 * w, 4 * w, 'mid')
    up2 = b.concat([b.upsample(mid, 2, name='up2'), enc2], name='cat2')
    dec2 = block(up2, 6 * w, 2 * w, 'dec2')
    up1 = b.concat([b.upsample(dec2, 2, name='up1'), enc1], name='cat1')
    dec1 = block(up1, 3 * w, w, 'dec1')
    logits = conv(dec1, w, classes, 'head', k=1, relu=False)
    probs = b.softmax(logits, name='probs')
    b.output(b.argmax(probs, name='labels'))
    return b.build()


def gen_model(family, scale, classes, seed, shape=DEFAULT_SHAPE):
    if family not in MODEL_FAMILIES:
        raise InvalidConfig('unknown model family {!r}; expected one of {}'.format(family, ', '.join(MODEL_FAMILIES)))
    if family == 'centroid-net':
        return centroid_net(classes, shape)
    return toy_unet(scale, classes, seed, shape)

'''
Segmentation accuracy.
'''
from collections import namedtuple

import numpy as np

from .errors import LabelOutOfRange, ShapeMismatch

DiceResult = namedtuple('DiceResult', ['per_class', 'mean'])


def dice_per_class(pred, gt, classes):
    '''
    Dice per foreground class 1..classes-1 and their mean. Classes absent
    from both volumes are left out of the mean; if every class is absent the
    mean is 1.0.
    '''
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch('prediction shape {} differs from ground truth {}'.format(pred.shape, gt.shape))
    for name, labels in (('prediction', pred), ('ground truth', gt)):
        if labels.size and (int(labels.max()) >= classes or int(labels.min()) < 0):
            raise LabelOutOfRange('{} labels outside [0, {}]'.format(name, classes - 1))
    pred_counts = np.bincount(pred.ravel().astype(np.int64), minlength=classes)
    gt_counts = np.bincount(gt.ravel().astype(np.int64), minlength=classes)
    overlap = np.bincount(gt.ravel()[pred.ravel() == gt.ravel()].astype(np.int64), minlength=classes)
    per_class = {}
    for c in range(1, classes):
        total = int(pred_counts[c] + gt_counts[c])
        if total:
            per_class[c] = 2.0 * int(overlap[c]) / total
    mean = float(np.mean(list(per_class.values()))) if per_class else 1.0
    return DiceResult(per_class, mean)


def mean_dice(pairs, classes):
    '''
    Per-volume mDSC averaged over (prediction, ground truth) pairs.
    '''
    scores = [dice_per_class(pred, gt, classes).mean for pred, gt in pairs]
    return float(np.mean(scores)) if scores else 0.0

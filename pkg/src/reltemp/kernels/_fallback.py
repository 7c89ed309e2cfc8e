"""Pure numpy implementations of the evaluation kernels."""

import numpy as np


def segments(truth):
    """(start, end) inclusive bounds of maximal runs of ones."""
    t = np.asarray(truth, dtype=np.int8)
    d = np.diff(np.concatenate(([0], t, [0])))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return starts, ends


def point_adjust(pred, truth):
    pred = np.asarray(pred, dtype=np.uint8)
    out = pred.copy()
    for a, b in zip(*segments(truth)):
        if pred[a : b + 1].any():
            out[a : b + 1] = 1
    return out


def confusion(pred, truth):
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return tp, fp, fn


def threshold_counts(scores, truth, thresholds):
    """Point-adjusted (tp, fp, fn) for ``pred = scores > theta`` at every theta."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    starts, ends = segments(truth)
    lengths = ends - starts + 1
    if len(starts):
        padded = np.append(scores, -np.inf)
        bounds = np.empty(2 * len(starts), dtype=np.intp)
        bounds[0::2] = starts
        bounds[1::2] = ends + 1
        seg_max = np.maximum.reduceat(padded, bounds)[0::2]
    else:
        seg_max = np.empty(0)
    normal = np.sort(scores[~truth])
    fp = len(normal) - np.searchsorted(normal, thresholds, side="right")
    hit = seg_max[None, :] > thresholds[:, None]
    tp = (hit * lengths[None, :]).sum(axis=1)
    fn = lengths.sum() - tp
    return tp.astype(np.int64), fp.astype(np.int64), fn.astype(np.int64)


def correlation_change(a_normal, a_anomal):
    diff = np.abs(np.asarray(a_anomal, dtype=np.float64) - np.asarray(a_normal, dtype=np.float64))
    return diff.sum(axis=1) - np.diagonal(diff)

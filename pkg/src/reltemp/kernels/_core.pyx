# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled evaluation kernels; same contracts as ``_fallback``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline const unsigned char[::1] _as_bytes(x):
    # nonzero test gives a bool array; viewing it as uint8 avoids a second copy
    return np.ascontiguousarray(np.asarray(x) != 0).view(np.uint8)


def point_adjust(pred, truth):
    cdef const unsigned char[::1] p = _as_bytes(pred)
    cdef const unsigned char[::1] t = _as_bytes(truth)
    cdef Py_ssize_t n = p.shape[0], i, a, j
    cdef bint hit
    out_arr = np.array(p, dtype=np.uint8, copy=True)
    cdef unsigned char[::1] out = out_arr
    i = 0
    while i < n:
        if t[i]:
            a = i
            hit = False
            while i < n and t[i]:
                if p[i]:
                    hit = True
                i += 1
            if hit:
                for j in range(a, i):
                    out[j] = 1
        else:
            i += 1
    return out_arr


def confusion(pred, truth):
    cdef const unsigned char[::1] p = _as_bytes(pred)
    cdef const unsigned char[::1] t = _as_bytes(truth)
    cdef Py_ssize_t i
    cdef long long tp = 0, n_pred = 0, n_true = 0
    for i in range(p.shape[0]):
        tp += p[i] & t[i]
        n_pred += p[i]
        n_true += t[i]
    return int(tp), int(n_pred - tp), int(n_true - tp)


cdef Py_ssize_t _count_le(const double[::1] sorted_vals, double theta) nogil:
    """Number of entries <= theta in an ascending array (upper bound)."""
    cdef Py_ssize_t lo = 0, hi = sorted_vals.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if sorted_vals[mid] <= theta:
            lo = mid + 1
        else:
            hi = mid
    return lo


def threshold_counts(scores, truth, thresholds):
    cdef const double[::1] s = np.ascontiguousarray(scores, dtype=np.float64)
    cdef const unsigned char[::1] t = _as_bytes(truth)
    cdef const double[::1] th = np.ascontiguousarray(thresholds, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0], c = th.shape[0], i, k, a, n_seg = 0, n_normal = 0
    cdef double peak
    cdef long long total = 0, hit

    # one pass: per-segment maximum and length, plus the scores of normal points
    seg_max_arr = np.empty(n // 2 + 1, dtype=np.float64)
    seg_len_arr = np.empty(n // 2 + 1, dtype=np.int64)
    normal_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] seg_max = seg_max_arr
    cdef long long[::1] seg_len = seg_len_arr
    cdef double[::1] normal = normal_arr
    i = 0
    while i < n:
        if t[i]:
            a = i
            peak = s[i]
            while i < n and t[i]:
                if s[i] > peak:
                    peak = s[i]
                i += 1
            seg_max[n_seg] = peak
            seg_len[n_seg] = i - a
            total += i - a
            n_seg += 1
        else:
            normal[n_normal] = s[i]
            n_normal += 1
            i += 1
    normal_arr = np.sort(normal_arr[:n_normal])
    cdef const double[::1] normal_sorted = normal_arr

    tp_arr = np.empty(c, dtype=np.int64)
    fp_arr = np.empty(c, dtype=np.int64)
    fn_arr = np.empty(c, dtype=np.int64)
    cdef long long[::1] tp = tp_arr
    cdef long long[::1] fp = fp_arr
    cdef long long[::1] fn = fn_arr
    for k in range(c):
        hit = 0
        for i in range(n_seg):
            if seg_max[i] > th[k]:
                hit += seg_len[i]
        tp[k] = hit
        fn[k] = total - hit
        fp[k] = n_normal - _count_le(normal_sorted, th[k])
    return tp_arr, fp_arr, fn_arr


def correlation_change(a_normal, a_anomal):
    cdef const double[:, ::1] an = np.ascontiguousarray(a_normal, dtype=np.float64)
    cdef const double[:, ::1] aa = np.ascontiguousarray(a_anomal, dtype=np.float64)
    cdef Py_ssize_t m = an.shape[0], i, j
    cdef double acc, d
    out_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(m):
        acc = 0.0
        for j in range(an.shape[1]):
            if j != i:
                d = aa[i, j] - an[i, j]
                acc += d if d >= 0 else -d
        out[i] = acc
    return out_arr

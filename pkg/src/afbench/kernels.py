"""Sorted-id set kernels used by the assertion store and the grounder.

Every kernel operates on sorted, duplicate-free ``int64`` arrays of term ids.
Each has a numba implementation and a pure-numpy fallback with identical
output. The numba path is used when numba imports cleanly and the
``AFBENCH_NUMBA`` environment variable is not ``"0"``; set it to ``0`` to force
the numpy path (the test-suite exercises both).
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("AFBENCH_NUMBA", "1") != "0"

_EMPTY = np.empty(0, dtype=np.int64)


# --------------------------------------------------------------------------
# numpy reference path
# --------------------------------------------------------------------------


def _fused_candidates_np(pos_data, pos_ptr, neg_data, neg_ptr):
    n_pos = len(pos_ptr) - 1
    if n_pos == 0:
        return _EMPTY.copy()
    out = pos_data[pos_ptr[0] : pos_ptr[1]]
    for i in range(1, n_pos):
        out = np.intersect1d(out, pos_data[pos_ptr[i] : pos_ptr[i + 1]], assume_unique=True)
    if len(neg_data):
        out = out[~np.isin(out, neg_data)]
    return np.ascontiguousarray(out, dtype=np.int64)


def _dedup_max_np(keys, weights):
    # keys sorted ascending, may repeat
    if len(keys) == 0:
        return keys.copy(), weights.copy()
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    return keys[starts], np.maximum.reduceat(weights, starts)


def _contains_sorted_np(haystack, needles):
    if len(haystack) == 0:
        return np.zeros(len(needles), dtype=np.bool_)
    idx = np.searchsorted(haystack, needles)
    idx[idx == len(haystack)] = len(haystack) - 1
    return haystack[idx] == needles


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _in_block(arr, lo, hi, value):
        end = hi
        while lo < hi:
            mid = (lo + hi) >> 1
            if arr[mid] < value:
                lo = mid + 1
            else:
                hi = mid
        return lo < end and arr[lo] == value

    @njit(cache=True, nogil=True)
    def _gallop(arr, cur, hi, value):
        # first index in [cur, hi) with arr[index] >= value, probing 1, 2, 4, ... ahead of cur
        step = 1
        lo = cur
        while cur + step < hi and arr[cur + step] < value:
            lo = cur + step
            step <<= 1
        top = min(cur + step + 1, hi)
        while lo < top:
            mid = (lo + top) >> 1
            if arr[mid] < value:
                lo = mid + 1
            else:
                top = mid
        return lo

    @njit(cache=True, nogil=True)
    def _fused_candidates_nb(pos_data, pos_ptr, neg_data, neg_ptr):
        n_pos = len(pos_ptr) - 1
        if n_pos == 0:
            return np.empty(0, dtype=np.int64)
        # drive the scan from the smallest positive block; every other block keeps
        # a cursor that only moves forward because the driving values ascend
        best = 0
        best_len = pos_ptr[1] - pos_ptr[0]
        for i in range(1, n_pos):
            ln = pos_ptr[i + 1] - pos_ptr[i]
            if ln < best_len:
                best = i
                best_len = ln
        n_neg = len(neg_ptr) - 1
        pos_cur = pos_ptr[:-1].copy()
        neg_cur = neg_ptr[:-1].copy()
        out = np.empty(best_len, dtype=np.int64)
        k = 0
        for j in range(pos_ptr[best], pos_ptr[best + 1]):
            v = pos_data[j]
            keep = True
            for i in range(n_pos):
                if i == best:
                    continue
                hi = pos_ptr[i + 1]
                c = _gallop(pos_data, pos_cur[i], hi, v)
                pos_cur[i] = c
                if c == hi or pos_data[c] != v:
                    keep = False
                    break
            if keep:
                for i in range(n_neg):
                    hi = neg_ptr[i + 1]
                    c = _gallop(neg_data, neg_cur[i], hi, v)
                    neg_cur[i] = c
                    if c < hi and neg_data[c] == v:
                        keep = False
                        break
            if keep:
                out[k] = v
                k += 1
        return out[:k]

    @njit(cache=True, nogil=True)
    def _dedup_max_nb(keys, weights):
        n = len(keys)
        out_k = np.empty(n, dtype=keys.dtype)
        out_w = np.empty(n, dtype=weights.dtype)
        m = -1
        for i in range(n):
            if m >= 0 and keys[i] == out_k[m]:
                if weights[i] > out_w[m]:
                    out_w[m] = weights[i]
            else:
                m += 1
                out_k[m] = keys[i]
                out_w[m] = weights[i]
        return out_k[: m + 1], out_w[: m + 1]

    @njit(cache=True, nogil=True)
    def _contains_sorted_nb(haystack, needles):
        out = np.zeros(len(needles), dtype=np.bool_)
        n = len(haystack)
        for i in range(len(needles)):
            if _in_block(haystack, 0, n, needles[i]):
                out[i] = True
        return out


def _as_blocks(blocks):
    """Pack a sequence of sorted id arrays into (data, ptr) CSR form."""
    ptr = np.zeros(len(blocks) + 1, dtype=np.int64)
    for i, b in enumerate(blocks):
        ptr[i + 1] = ptr[i] + len(b)
    if ptr[-1]:
        data = np.concatenate([np.asarray(b, dtype=np.int64) for b in blocks])
    else:
        data = _EMPTY.copy()
    return data, ptr


def fused_candidates(positive, negative, *, use_numba: bool | None = None) -> np.ndarray:
    """Intersect every array in ``positive`` and remove ids found in any of ``negative``.

    Inputs are sequences of sorted unique int64 arrays. The result is sorted.
    """
    pos_data, pos_ptr = _as_blocks(positive)
    neg_blocks = [np.unique(np.asarray(b, dtype=np.int64)) for b in negative if len(b)]
    neg_data, neg_ptr = _as_blocks(neg_blocks)
    numba_on = USE_NUMBA if use_numba is None else (use_numba and _HAVE_NUMBA)
    if numba_on:
        return _fused_candidates_nb(pos_data, pos_ptr, neg_data, neg_ptr)
    return _fused_candidates_np(pos_data, pos_ptr, neg_data, neg_ptr)


def dedup_max(keys: np.ndarray, weights: np.ndarray, *, use_numba: bool | None = None):
    """Collapse runs of equal keys in a sorted key array, keeping the max weight."""
    keys = np.ascontiguousarray(keys, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    numba_on = USE_NUMBA if use_numba is None else (use_numba and _HAVE_NUMBA)
    if numba_on:
        return _dedup_max_nb(keys, weights)
    return _dedup_max_np(keys, weights)


def contains_sorted(haystack: np.ndarray, needles: np.ndarray, *, use_numba: bool | None = None):
    """Boolean mask: which ``needles`` occur in the sorted array ``haystack``."""
    haystack = np.ascontiguousarray(haystack, dtype=np.int64)
    needles = np.ascontiguousarray(needles, dtype=np.int64)
    numba_on = USE_NUMBA if use_numba is None else (use_numba and _HAVE_NUMBA)
    if numba_on:
        return _contains_sorted_nb(haystack, needles)
    return _contains_sorted_np(haystack, needles)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"

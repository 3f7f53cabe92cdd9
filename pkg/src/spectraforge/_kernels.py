"""Hot loops of the decision-forest code, with numba and pure-numpy versions.

Numba is used when it imports and ``SPECTRAFORGE_NO_NUMBA`` is unset or
``0``.  Both paths compute split scores with the same operation order on
integer class counts, so they pick identical splits.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SPECTRAFORGE_NO_NUMBA", "0") in ("", "0")


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def _feature_scores_np(x, y, n_classes):
    """Scores ``nl - sum(cl^2)/nl + nr - sum(cr^2)/nr`` for every cut of one feature."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    onehot = np.zeros((len(x), n_classes))
    onehot[np.arange(len(x)), y[order]] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]
    total = left[-1] + onehot[-1]
    right = total - left
    nl = np.arange(1, len(x), dtype=np.float64)
    nr = len(x) - nl
    score = nl - (left * left).sum(axis=1) / nl + nr - (right * right).sum(axis=1) / nr
    valid = xs[1:] > xs[:-1]
    return xs, score, valid


def best_split_np(X, y, n_classes, features, max_features):
    best_f, best_t, best_s = -1, 0.0, np.inf
    visited = 0
    for f in features:
        x = X[:, f]
        xs, score, valid = _feature_scores_np(x, y, n_classes)
        if not valid.any():
            continue
        visited += 1
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if score[i] < best_s:
            lo, hi = xs[i], xs[i + 1]
            t = 0.5 * (lo + hi)
            if t >= hi:
                t = lo
            best_f, best_t, best_s = int(f), float(t), float(score[i])
        if visited >= max_features:
            break
    return best_f, best_t, best_s


def predict_tree_np(feature, threshold, left, right, value, X):
    node = np.zeros(len(X), dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        idx = np.nonzero(active)[0]
        nd = node[idx]
        go_left = X[idx, feature[nd]] <= threshold[nd]
        node[idx] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    return value[node]


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    @numba.njit(cache=True)
    def best_split_nb(X, y, n_classes, features, max_features):
        n = X.shape[0]
        best_f = -1
        best_t = 0.0
        best_s = np.inf
        visited = 0
        left = np.zeros(n_classes)
        total = np.zeros(n_classes)
        for i in range(n):
            total[y[i]] += 1.0
        for fi in range(features.shape[0]):
            f = features[fi]
            x = X[:, f].copy()
            order = np.argsort(x, kind="mergesort")
            xs = x[order]
            if not xs[n - 1] > xs[0]:
                continue
            visited += 1
            left[:] = 0.0
            for i in range(n - 1):
                left[y[order[i]]] += 1.0
                if not xs[i + 1] > xs[i]:
                    continue
                nl = i + 1.0
                nr = n - nl
                sl = 0.0
                sr = 0.0
                for c in range(n_classes):
                    sl += left[c] * left[c]
                    r = total[c] - left[c]
                    sr += r * r
                s = nl - sl / nl + nr - sr / nr
                if s < best_s:
                    lo = xs[i]
                    hi = xs[i + 1]
                    t = 0.5 * (lo + hi)
                    if t >= hi:
                        t = lo
                    best_s = s
                    best_t = t
                    best_f = f
            if visited >= max_features:
                break
        return best_f, best_t, best_s

    @numba.njit(cache=True)
    def predict_tree_nb(feature, threshold, left, right, value, X):
        out = np.empty(X.shape[0], dtype=np.int64)
        for i in range(X.shape[0]):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = value[node]
        return out


def best_split(X, y, n_classes, features, max_features, use_numba=None):
    """Best Gini cut over ``features`` (in order), stopping after ``max_features``
    non-constant features.  Returns ``(feature, threshold, score)``; feature is
    -1 when nothing can be split.  Lower score is better.
    """
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    if use:
        f, t, s = best_split_nb(X, y, n_classes, np.asarray(features, dtype=np.int64), max_features)
        return int(f), float(t), float(s)
    return best_split_np(X, y, n_classes, features, max_features)


def predict_tree(feature, threshold, left, right, value, X, use_numba=None):
    use = USE_NUMBA if use_numba is None else (use_numba and HAVE_NUMBA)
    fn = predict_tree_nb if use else predict_tree_np
    return fn(feature, threshold, left, right, value, np.ascontiguousarray(X, dtype=np.float64))

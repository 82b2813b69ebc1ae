"""Exact Shapley attributions for tree ensembles (path-dependent TreeSHAP).

The background distribution is each tree's own cover: when a feature is
absent from a coalition, a split on it sends the instance down both branches,
weighted by the children's covers. Attributions are in log-odds.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit, types

from .learn.model import ModelError, Tree, TreeEnsemble


class ModelIntegrityError(ModelError):
    pass


@dataclass(frozen=True)
class Attribution:
    shap: np.ndarray  # (n_rows, n_features)
    base: float
    raw: np.ndarray  # model margin per row

    def probability(self) -> np.ndarray:
        z = self.base + self.shap.sum(axis=1)
        return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class GlobalImportance:
    feature_names: tuple[str, ...]
    mean_abs: np.ndarray
    rank: np.ndarray  # rank[j] = position of feature j, 0 = most influential

    @property
    def order(self) -> np.ndarray:
        return np.argsort(self.rank)

    def top(self, k: int = 10) -> list[tuple[str, float]]:
        return [(self.feature_names[j], float(self.mean_abs[j])) for j in self.order[:k]]


# ---------------------------------------------------------------------------
# path bookkeeping, after Lundberg et al.'s TreeSHAP


@njit(cache=True)
def _extend(feat, zero, one, pw, depth, zero_fraction, one_fraction, feature_index):
    feat[depth] = feature_index
    zero[depth] = zero_fraction
    one[depth] = one_fraction
    pw[depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[i + 1] += one_fraction * pw[i] * (i + 1) / (depth + 1)
        pw[i] = zero_fraction * pw[i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(feat, zero, one, pw, depth, path_index):
    one_fraction = one[path_index]
    zero_fraction = zero[path_index]
    next_one = pw[depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[i]
            pw[i] = next_one * (depth + 1) / ((i + 1) * one_fraction)
            next_one = tmp - pw[i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[i] = pw[i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(path_index, depth):
        feat[i] = feat[i + 1]
        zero[i] = zero[i + 1]
        one[i] = one[i + 1]


@njit(cache=True)
def _unwound_sum(zero, one, pw, depth, path_index):
    one_fraction = one[path_index]
    zero_fraction = zero[path_index]
    next_one = pw[depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            next_one = pw[i] - tmp * zero_fraction * (depth - i) / (depth + 1)
        else:
            total += pw[i] / zero_fraction / ((depth - i) / (depth + 1))
    return total


@njit(
    types.void(
        types.int64[:], types.float64[:], types.int64[:], types.int64[:], types.boolean[:],
        types.float64[:], types.float64[:], types.float64[:], types.float64[:],
        types.int64, types.int64,
        types.int64[:], types.float64[:], types.float64[:], types.float64[:],
        types.float64, types.float64, types.int64,
    ),
    cache=True,
)
def _recurse(feature, threshold, left, right, default_left, value, cover, x, phi,
             node, depth, p_feat, p_zero, p_one, p_pw, zero_fraction, one_fraction, feature_index):
    # each level works on its own slice of the scratch arrays
    feat = p_feat[depth + 1:]
    zero = p_zero[depth + 1:]
    one = p_one[depth + 1:]
    pw = p_pw[depth + 1:]
    feat[: depth + 1] = p_feat[: depth + 1]
    zero[: depth + 1] = p_zero[: depth + 1]
    one[: depth + 1] = p_one[: depth + 1]
    pw[: depth + 1] = p_pw[: depth + 1]
    _extend(feat, zero, one, pw, depth, zero_fraction, one_fraction, feature_index)

    f = feature[node]
    if f < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(zero, one, pw, depth, i)
            phi[feat[i]] += w * (one[i] - zero[i]) * value[node]
        return

    lc = left[node]
    rc = right[node]
    xv = x[f]
    if np.isnan(xv):
        hot = lc if default_left[node] else rc
    elif xv < threshold[node]:
        hot = lc
    else:
        hot = rc
    cold = rc if hot == lc else lc
    w = cover[lc] + cover[rc]
    hot_zero = cover[hot] / w
    cold_zero = cover[cold] / w
    in_zero = 1.0
    in_one = 1.0

    # a repeated feature on the path is folded into one entry
    k = 0
    while k <= depth:
        if feat[k] == f:
            break
        k += 1
    if k != depth + 1:
        in_zero = zero[k]
        in_one = one[k]
        _unwind(feat, zero, one, pw, depth, k)
        depth -= 1

    _recurse(feature, threshold, left, right, default_left, value, cover, x, phi,
             hot, depth + 1, feat, zero, one, pw, hot_zero * in_zero, in_one, f)
    _recurse(feature, threshold, left, right, default_left, value, cover, x, phi,
             cold, depth + 1, feat, zero, one, pw, cold_zero * in_zero, 0.0, f)


@njit(cache=True)
def _shap_forest(X, roots, feature, threshold, left, right, default_left, value, cover, max_depth, out):
    n, d = X.shape
    s = (max_depth + 2) * (max_depth + 3) // 2
    p_feat = np.empty(s, dtype=np.int64)
    p_zero = np.empty(s)
    p_one = np.empty(s)
    p_pw = np.empty(s)
    for i in range(n):
        x = X[i]
        phi = out[i]
        for t in range(roots.shape[0]):
            _recurse(feature, threshold, left, right, default_left, value, cover, x, phi,
                     roots[t], 0, p_feat, p_zero, p_one, p_pw, 1.0, 1.0, -1)


def _check_covers(model: TreeEnsemble) -> None:
    for k, t in enumerate(model.trees):
        internal = t.feature >= 0
        kids = np.concatenate([t.left[internal], t.right[internal]])
        if len(kids) and not (t.cover[kids] > 0).all():
            raise ModelIntegrityError(f"tree {k} has a node with zero cover")


def expected_value(tree: Tree) -> float:
    """Cover-weighted mean leaf value, i.e. the output with every feature absent."""

    def rec(node: int) -> float:
        if tree.feature[node] < 0:
            return float(tree.value[node])
        lc, rc = int(tree.left[node]), int(tree.right[node])
        w = tree.cover[lc] + tree.cover[rc]
        return (tree.cover[lc] * rec(lc) + tree.cover[rc] * rec(rc)) / w

    return rec(0)


def base_value(model: TreeEnsemble) -> float:
    return float(model.base_score) + math.fsum(expected_value(t) for t in model.trees)


def tree_shap(model: TreeEnsemble, X, schema_hash: str | None = None) -> Attribution:
    """Per-row SHAP values for ``X`` (one row or a matrix)."""
    model.check_schema(schema_hash)
    _check_covers(model)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    if model.trees and int(max(t.feature.max() for t in model.trees)) >= d:
        raise ModelIntegrityError("model uses more features than the input has")
    out = np.zeros((X.shape[0], d))
    if model.trees:
        roots, feature, threshold, left, right, default_left, value = model._flatten()
        cover = np.concatenate([t.cover for t in model.trees]).astype(np.float64)
        max_depth = max(t.depth() for t in model.trees)
        _shap_forest(
            np.ascontiguousarray(X), roots, feature, threshold, left, right,
            default_left.astype(np.bool_), value, cover, max_depth, out,
        )
    return Attribution(out, base_value(model), model.raw_margin(X))


# ---------------------------------------------------------------------------
# exhaustive reference


def _cond_expectation(tree: Tree, x: np.ndarray, present: frozenset[int], node: int = 0) -> float:
    f = int(tree.feature[node])
    if f < 0:
        return float(tree.value[node])
    lc, rc = int(tree.left[node]), int(tree.right[node])
    if f in present:
        xv = x[f]
        if math.isnan(xv):
            nxt = lc if tree.default_left[node] else rc
        else:
            nxt = lc if xv < tree.threshold[node] else rc
        return _cond_expectation(tree, x, present, nxt)
    w = tree.cover[lc] + tree.cover[rc]
    return (
        tree.cover[lc] * _cond_expectation(tree, x, present, lc)
        + tree.cover[rc] * _cond_expectation(tree, x, present, rc)
    ) / w


def brute_force_shap(model: TreeEnsemble, x, n_features: int | None = None) -> np.ndarray:
    """Shapley values by enumerating every coalition (exponential; tests only)."""
    x = np.asarray(x, dtype=float)
    m = len(x) if n_features is None else n_features
    players = range(m)

    def v(S: frozenset[int]) -> float:
        return math.fsum(_cond_expectation(t, x, S) for t in model.trees)

    cache: dict[frozenset[int], float] = {}
    phi = np.zeros(m)
    fact = [math.factorial(k) for k in range(m + 1)]
    for i in players:
        others = [j for j in players if j != i]
        acc = 0.0
        for size in range(m):
            weight = fact[size] * fact[m - size - 1] / fact[m]
            for S in combinations(others, size):
                S0 = frozenset(S)
                S1 = S0 | {i}
                if S0 not in cache:
                    cache[S0] = v(S0)
                if S1 not in cache:
                    cache[S1] = v(S1)
                acc += weight * (cache[S1] - cache[S0])
        phi[i] = acc
    return phi


# ---------------------------------------------------------------------------
# global ranking and export


def global_importance(shap_values: np.ndarray, feature_names: Sequence[str]) -> GlobalImportance:
    """Mean |SHAP| per feature, ranked descending; ties go to the lower index."""
    shap_values = np.atleast_2d(np.asarray(shap_values, dtype=float))
    if shap_values.shape[0] == 0:
        raise ValueError("global importance needs a nonempty sample")
    if shap_values.shape[1] != len(feature_names):
        raise ValueError("feature names do not match attribution width")
    mean_abs = np.abs(shap_values).mean(axis=0)
    order = np.lexsort((np.arange(len(mean_abs)), -mean_abs))
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    return GlobalImportance(tuple(feature_names), mean_abs, rank)


def write_shap_long(path: str | Path, attr: Attribution, X: np.ndarray, feature_names: Sequence[str], row_ids=None) -> None:
    X = np.atleast_2d(X)
    ids = range(len(X)) if row_ids is None else row_ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "feature_name", "feature_value_or_missing", "shap_value"])
        for i, rid in enumerate(ids):
            for j, name in enumerate(feature_names):
                xv = X[i, j]
                w.writerow([rid, name, "missing" if math.isnan(xv) else repr(float(xv)), repr(float(attr.shap[i, j]))])


def write_importance(path: str | Path, imp: GlobalImportance, top: int | None = None) -> None:
    """Summary CSV; the ``rank`` column counts from 1 for the most influential feature."""
    order = imp.order if top is None else imp.order[:top]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "mean_abs_shap", "rank"])
        for j in order:
            w.writerow([imp.feature_names[j], repr(float(imp.mean_abs[j])), int(imp.rank[j]) + 1])

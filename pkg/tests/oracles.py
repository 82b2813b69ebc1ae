"""Slow, obviously-correct reference implementations used by the tests."""
from __future__ import annotations

import itertools
import math

import numpy as np


def merged_episodes(records, gap):
    """Union of same-drug intervals inflated by ``gap``, by fixpoint merging."""
    out = []
    for drug in sorted({r.drug for r in records}):
        ivs = [[r.start, r.end] for r in records if r.drug == drug]
        changed = True
        while changed:
            changed = False
            for i in range(len(ivs)):
                for j in range(i + 1, len(ivs)):
                    a, b = ivs[i], ivs[j]
                    if a[0] <= b[1] + gap and b[0] <= a[1] + gap:
                        ivs[i] = [min(a[0], b[0]), max(a[1], b[1])]
                        del ivs[j]
                        changed = True
                        break
                if changed:
                    break
        out += [(drug, s, e) for s, e in ivs]
    return sorted(out, key=lambda e: (e[1], e[0]))


def scan_labels(admit, discharge, map_times, onsets):
    """(context_start, label) for every kept window, by direct enumeration."""
    rows = []
    cs = admit
    while cs + 7200 + 900 <= discharge:
        ce, te = cs + 7200, cs + 8100
        n = sum(1 for t in map_times if cs <= t < ce)
        if n >= 2:
            rows.append((cs, any(ce <= o < te for o in onsets)))
        cs += 900
    return rows


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0
    for p in pos:
        for n in neg:
            wins += 2 if p > n else (1 if p == n else 0)
    return wins / (2 * len(pos) * len(neg))


def percentile_linear(values, q):
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def naive_map_stats(points, cs, ce):
    t = np.array([p[0] for p in points], dtype=float)
    v = np.array([p[1] for p in points], dtype=float)
    n = len(v)
    mean = v.sum() / n
    w = (t - cs) / (ce - cs)
    A = np.c_[np.ones(n), t - t.mean()]
    slope = np.linalg.lstsq(A, v, rcond=None)[0][1]
    return {
        "mean": mean,
        "std": math.sqrt(((v - mean) ** 2).sum() / (n - 1)),
        "median": percentile_linear(v, 0.5),
        "iqr": percentile_linear(v, 0.75) - percentile_linear(v, 0.25),
        "min": v.min(),
        "max": v.max(),
        "first": v[0],
        "last": v[-1],
        "rate_of_change": (v[-1] - v[0]) / (t[-1] - t[0]),
        "slope": slope,
        "time_weighted_mean": (w * v).sum() / w.sum(),
    }


def brute_isotonic(y, w=None):
    """Least-squares nondecreasing fit by enumerating every contiguous partition.

    An optimal monotone fit is constant on contiguous blocks at the block
    means, so checking all 2^(n-1) partitions with nondecreasing means finds it.
    """
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    n = len(y)
    best, best_fit = math.inf, None
    for mask in range(1 << (n - 1)):
        cuts = [0] + [i + 1 for i in range(n - 1) if mask >> i & 1] + [n]
        means = [np.dot(w[a:b], y[a:b]) / w[a:b].sum() for a, b in zip(cuts, cuts[1:])]
        if any(m2 < m1 - 1e-15 for m1, m2 in zip(means, means[1:])):
            continue
        fit = np.concatenate([np.full(b - a, m) for (a, b), m in zip(zip(cuts, cuts[1:]), means)])
        err = float(np.dot(w, (y - fit) ** 2))
        if err < best - 1e-15:
            best, best_fit = err, fit
    return best_fit, best


def grid_isotonic_sse(y, grid):
    """Smallest squared error of a nondecreasing fit whose levels lie on ``grid`` (DP)."""
    y = np.asarray(y, dtype=float)
    grid = np.asarray(grid, dtype=float)
    cost = (y[0] - grid) ** 2
    for v in y[1:]:
        cost = np.minimum.accumulate(cost) + (v - grid) ** 2
    return float(cost.min())


def random_tree(rng, n_features, max_depth, missing_p=0.5):
    """Random tree with split covers summing exactly up the tree."""
    from vasoinit.learn import Tree

    nodes = []

    def grow(depth):
        i = len(nodes)
        nodes.append({})
        if depth < max_depth and (depth == 0 or rng.random() < 0.7):
            left = grow(depth + 1)
            right = grow(depth + 1)
            nodes[i] = {
                "feature": int(rng.integers(n_features)),
                "threshold": float(rng.normal()),
                "left": left,
                "right": right,
                "default_left": bool(rng.random() < missing_p),
                "cover": nodes[left]["cover"] + nodes[right]["cover"],
            }
        else:
            nodes[i] = {"value": float(rng.normal()), "cover": float(rng.uniform(0.5, 20.0))}
        return i

    grow(0)
    return Tree.from_nodes(nodes)


def random_ensemble(rng, n_features=6, max_trees=3, max_depth=3):
    from vasoinit.learn import TreeEnsemble

    trees = [random_tree(rng, n_features, int(rng.integers(1, max_depth + 1))) for _ in range(int(rng.integers(1, max_trees + 1)))]
    return TreeEnsemble(float(rng.normal()), trees)


def random_instances(rng, n, n_features, missing_p=0.15):
    X = rng.normal(size=(n, n_features))
    X[rng.random(X.shape) < missing_p] = np.nan
    return X


def _coalition_value(tree, x, mask, node=0):
    """E[tree(x) | features in ``mask`` fixed], other splits averaged by child cover."""
    f = int(tree.feature[node])
    if f < 0:
        return float(tree.value[node])
    lc, rc = int(tree.left[node]), int(tree.right[node])
    if mask >> f & 1:
        v = x[f]
        go_left = bool(tree.default_left[node]) if math.isnan(v) else v < tree.threshold[node]
        return _coalition_value(tree, x, mask, lc if go_left else rc)
    wl, wr = float(tree.cover[lc]), float(tree.cover[rc])
    return (wl * _coalition_value(tree, x, mask, lc) + wr * _coalition_value(tree, x, mask, rc)) / (wl + wr)


def permutation_shap(model, x):
    """Shapley values as the mean marginal contribution over all feature orderings."""
    m = len(x)
    values = {}

    def v(mask):
        if mask not in values:
            values[mask] = math.fsum(_coalition_value(t, x, mask) for t in model.trees)
        return values[mask]

    phi = np.zeros(m)
    n_perm = 0
    for perm in itertools.permutations(range(m)):
        mask = 0
        for f in perm:
            phi[f] += v(mask | 1 << f) - v(mask)
            mask |= 1 << f
        n_perm += 1
    return phi / n_perm

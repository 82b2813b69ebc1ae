"""Compiled inner loops for tree growing and prediction.

Rows of a node occupy one contiguous segment of every per-feature sorted
array; missing values (NaN) sit at the end of each segment. Splitting a node
is a stable partition of its segment, so every child stays sorted.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def presort(Xt):
    """Per-feature row order by value, NaN last. Xt is (n_features, n_rows)."""
    d, n = Xt.shape
    idx = np.empty((d, n), dtype=np.int32)
    val = np.empty((d, n), dtype=np.float64)
    for f in range(d):
        order = np.argsort(Xt[f], kind="mergesort")
        for k in range(n):
            idx[f, k] = order[k]
            val[f, k] = Xt[f, order[k]]
    return idx, val


@njit(cache=True)
def compact_rows(idx_all, val_all, keep, g, h):
    """Restrict presorted arrays to rows with keep[row] set, order preserved.

    Gradients and hessians are gathered into the same layout so the split
    sweep reads them sequentially.
    """
    d, n = idx_all.shape
    m = 0
    for r in range(keep.shape[0]):
        m += keep[r]
    idx = np.empty((d, m), dtype=np.int32)
    val = np.empty((d, m), dtype=np.float64)
    gs = np.empty((d, m), dtype=np.float64)
    hs = np.empty((d, m), dtype=np.float64)
    for f in range(d):
        j = 0
        for k in range(n):
            # branch-free: write unconditionally, advance only on kept rows;
            # a dropped row written at j is overwritten by the next kept one
            r = idx_all[f, k]
            if j < m:
                idx[f, j] = r
                val[f, j] = val_all[f, k]
                gs[f, j] = g[r]
                hs[f, j] = h[r]
            j += keep[r]
    return idx, val, gs, hs


@njit(cache=True)
def _soft(G, alpha):
    if G > alpha:
        return G - alpha
    if G < -alpha:
        return G + alpha
    return 0.0


@njit(cache=True)
def _score(G, H, lam, alpha):
    t = _soft(G, alpha)
    return t * t / (H + lam)


@njit(cache=True)
def node_sums(gs, hs, seg_start, seg_end):
    ns = seg_start.shape[0]
    G = np.zeros(ns)
    H = np.zeros(ns)
    for s in range(ns):
        for k in range(seg_start[s], seg_end[s]):
            G[s] += gs[0, k]
            H[s] += hs[0, k]
    return G, H


@njit(cache=True)
def find_splits(val, gs, hs, seg_start, seg_end, feat_mask, G_tot, H_tot, lam, alpha, gamma, min_child_weight):
    """Best exact split per node segment.

    Gain is half the score improvement minus gamma. Candidates are scanned
    in increasing feature index and threshold; only a strictly larger gain
    replaces the incumbent. For each candidate, sending missing rows right
    is tried first, then left.
    """
    ns = seg_start.shape[0]
    d = val.shape[0]
    best_gain = np.full(ns, -np.inf)
    best_feat = np.full(ns, -1, dtype=np.int64)
    best_thr = np.zeros(ns)
    best_left = np.zeros(ns, dtype=np.bool_)
    for s in range(ns):
        lo = seg_start[s]
        hi = seg_end[s]
        Gt = G_tot[s]
        Ht = H_tot[s]
        if Ht < 2.0 * min_child_weight or hi - lo < 2:
            continue
        parent = _score(Gt, Ht, lam, alpha)
        for f in range(d):
            if not feat_mask[s, f]:
                continue
            # missing rows trail the segment
            nm = hi
            while nm > lo and np.isnan(val[f, nm - 1]):
                nm -= 1
            Gm = 0.0
            Hm = 0.0
            for k in range(nm, hi):
                Gm += gs[f, k]
                Hm += hs[f, k]
            GL = 0.0
            HL = 0.0
            for k in range(lo, nm):
                v = val[f, k]
                if k > lo and v != val[f, k - 1]:
                    prev = val[f, k - 1]
                    # missing -> right
                    HR = Ht - HL
                    if HL >= min_child_weight and HR >= min_child_weight:
                        gain = 0.5 * (_score(GL, HL, lam, alpha) + _score(Gt - GL, HR, lam, alpha) - parent) - gamma
                        if gain > best_gain[s]:
                            thr = 0.5 * (prev + v)
                            if thr <= prev:
                                thr = v
                            best_gain[s] = gain
                            best_feat[s] = f
                            best_thr[s] = thr
                            best_left[s] = False
                    # missing -> left
                    if Hm > 0.0:
                        HLm = HL + Hm
                        HR = Ht - HLm
                        if HLm >= min_child_weight and HR >= min_child_weight:
                            GLm = GL + Gm
                            gain = 0.5 * (_score(GLm, HLm, lam, alpha) + _score(Gt - GLm, HR, lam, alpha) - parent) - gamma
                            if gain > best_gain[s]:
                                thr = 0.5 * (prev + v)
                                if thr <= prev:
                                    thr = v
                                best_gain[s] = gain
                                best_feat[s] = f
                                best_thr[s] = thr
                                best_left[s] = True
                GL += gs[f, k]
                HL += hs[f, k]
    return best_gain, best_feat, best_thr, best_left


@njit(cache=True)
def child_sums(val, gs, hs, seg_start, seg_end, split_feat, split_thr, split_left):
    """Left/right gradient and hessian sums of each split, read off the split feature's segment."""
    ns = seg_start.shape[0]
    GL = np.zeros(ns)
    HL = np.zeros(ns)
    GR = np.zeros(ns)
    HR = np.zeros(ns)
    for s in range(ns):
        f = split_feat[s]
        if f < 0:
            continue
        thr = split_thr[s]
        dl = split_left[s]
        for k in range(seg_start[s], seg_end[s]):
            x = val[f, k]
            if np.isnan(x):
                left = dl
            else:
                left = x < thr
            if left:
                GL[s] += gs[f, k]
                HL[s] += hs[f, k]
            else:
                GR[s] += gs[f, k]
                HR[s] += hs[f, k]
    return GL, HL, GR, HR


@njit(cache=True)
def split_sizes(val, seg_start, seg_end, split_feat, split_thr, split_left):
    ns = seg_start.shape[0]
    n_left = np.zeros(ns, dtype=np.int64)
    for s in range(ns):
        f = split_feat[s]
        if f < 0:
            continue
        for k in range(seg_start[s], seg_end[s]):
            x = val[f, k]
            if (np.isnan(x) and split_left[s]) or x < split_thr[s]:
                n_left[s] += 1
    return n_left


@njit(cache=True)
def partition(idx, val, gs, hs, Xt, seg_start, seg_end, split_feat, split_thr, split_left, go_left):
    """Stable in-place partition of split segments; returns left sizes.

    Segments with ``split_feat < 0`` are left untouched. ``go_left`` is a
    per-row scratch array.
    """
    d = idx.shape[0]
    ns = seg_start.shape[0]
    n_left = np.zeros(ns, dtype=np.int64)
    width = 0
    for s in range(ns):
        if split_feat[s] >= 0 and seg_end[s] - seg_start[s] > width:
            width = seg_end[s] - seg_start[s]
    buf_i = np.empty(width, dtype=np.int32)
    buf_v = np.empty(width)
    buf_g = np.empty(width)
    buf_h = np.empty(width)
    for s in range(ns):
        f = split_feat[s]
        if f < 0:
            continue
        lo = seg_start[s]
        hi = seg_end[s]
        thr = split_thr[s]
        dl = split_left[s]
        cnt = 0
        for k in range(lo, hi):
            r = idx[0, k]
            x = Xt[f, r]
            if np.isnan(x):
                go_left[r] = dl
            else:
                go_left[r] = x < thr
            if go_left[r]:
                cnt += 1
        n_left[s] = cnt
        for c in range(d):
            j = lo
            nr = 0
            for k in range(lo, hi):
                # branch-free two-way scatter
                r = idx[c, k]
                v = val[c, k]
                gg = gs[c, k]
                hh = hs[c, k]
                gl = go_left[r]
                idx[c, j] = r
                val[c, j] = v
                gs[c, j] = gg
                hs[c, j] = hh
                buf_i[nr] = r
                buf_v[nr] = v
                buf_g[nr] = gg
                buf_h[nr] = hh
                j += gl
                nr += 1 - gl
            for q in range(nr):
                idx[c, j + q] = buf_i[q]
                val[c, j + q] = buf_v[q]
                gs[c, j + q] = buf_g[q]
                hs[c, j + q] = buf_h[q]
    return n_left


@njit(cache=True)
def predict_tree(Xt, feature, threshold, left, right, default_left, value):
    n = Xt.shape[1]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            x = Xt[feature[node], i]
            if np.isnan(x):
                node = left[node] if default_left[node] else right[node]
            elif x < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def predict_forest(Xt, roots, feature, threshold, left, right, default_left, value, base):
    """Margins for the flattened ensemble; trees are summed in order."""
    n = Xt.shape[1]
    out = np.empty(n)
    for i in range(n):
        acc = base
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                x = Xt[feature[node], i]
                if np.isnan(x):
                    node = left[node] if default_left[node] else right[node]
                elif x < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc
    return out

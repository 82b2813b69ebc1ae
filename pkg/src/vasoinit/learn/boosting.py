"""Second-order gradient boosting of regression trees on the logistic loss."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .model import Tree, TreeEnsemble, logit, sigmoid

log = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class GbtConfig:
    learning_rate: float = 0.0355
    max_depth: int = 7
    min_child_weight: float = 13.0
    gamma: float = 2.7709
    subsample: float = 0.7696
    colsample_bytree: float = 0.8996
    colsample_bylevel: float = 0.9287
    colsample_bynode: float = 0.8521
    reg_alpha: float = 0.0319
    reg_lambda: float = 3.57e-7
    max_delta_step: float = 3.0
    max_rounds: int = 1000
    early_stop_patience: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        for name in ("subsample", "colsample_bytree", "colsample_bylevel", "colsample_bynode"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        for name in ("min_child_weight", "gamma", "reg_alpha", "reg_lambda", "max_delta_step"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_rounds < 0 or self.early_stop_patience < 1:
            raise ValueError("max_rounds must be >= 0 and early_stop_patience >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GbtConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown GBT config keys: {sorted(unknown)}")
        return cls(**d)


def logistic_loss(margin, y):
    """Mean negative log-likelihood for labels in {0, 1} given log-odds margins."""
    margin = np.asarray(margin, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def grad_hess(margin, y):
    """Gradient and hessian of the per-row logistic loss w.r.t. the margin."""
    p = sigmoid(margin)
    return p - y, p * (1.0 - p)


def leaf_weight(G: float, H: float, cfg: GbtConfig) -> float:
    if G > cfg.reg_alpha:
        t = G - cfg.reg_alpha
    elif G < -cfg.reg_alpha:
        t = G + cfg.reg_alpha
    else:
        t = 0.0
    w = -t / (H + cfg.reg_lambda)
    if cfg.max_delta_step > 0:
        w = min(max(w, -cfg.max_delta_step), cfg.max_delta_step)
    return w


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    best_round: int = -1
    stopped_early: bool = False
    metric: str = "logloss"
    base_score: float = 0.0

    @property
    def n_rounds(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "train_logloss", "valid_logloss"])
            for i, (a, b) in enumerate(zip(self.train_loss, self.valid_loss)):
                w.writerow([i, repr(a), repr(b)])


def _sample_features(rng: np.random.Generator, pool: np.ndarray, frac: float) -> np.ndarray:
    if frac >= 1.0:
        return pool
    k = max(1, int(frac * len(pool)))
    return np.sort(rng.choice(pool, size=k, replace=False))


def _check_xy(X, y, name):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError(f"{name}: X must be 2-D with one row per label")
    if np.isinf(X).any():
        raise TrainingError(f"{name}: non-finite feature values")
    if not np.isin(y, (0, 1)).all():
        raise TrainingError(f"{name}: labels must be 0/1")
    return X, y.astype(float)


def grow_tree(
    Xt: np.ndarray,
    idx_all: np.ndarray,
    val_all: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    cfg: GbtConfig,
    rng: np.random.Generator,
) -> Tree:
    """Grow one tree level by level with exact greedy splits."""
    d, n = Xt.shape
    if cfg.subsample < 1.0:
        keep = rng.random(n) < cfg.subsample
        if not keep.any():
            keep[rng.integers(n)] = True
    else:
        keep = np.ones(n, dtype=np.bool_)
    idx, val, gs, hs = _kernels.compact_rows(idx_all, val_all, keep, g, h)
    go_left = np.zeros(n, dtype=np.bool_)
    tree_feats = _sample_features(rng, np.arange(d), cfg.colsample_bytree)

    nodes: list[dict] = [{}]
    # nodes at the current depth: (node id, segment start, segment end, G, H)
    G0, H0 = _kernels.node_sums(gs, hs, np.array([0]), np.array([idx.shape[1]]))
    active = [(0, 0, idx.shape[1], G0[0], H0[0])]
    min_split_h = 2.0 * cfg.min_child_weight
    depth = 0
    while active:
        level_feats = _sample_features(rng, tree_feats, cfg.colsample_bylevel)
        ns = len(active)
        seg_start = np.array([a[1] for a in active], dtype=np.int64)
        seg_end = np.array([a[2] for a in active], dtype=np.int64)
        G_tot = np.array([a[3] for a in active])
        H_tot = np.array([a[4] for a in active])
        split = np.zeros(ns, dtype=bool)
        if depth < cfg.max_depth:
            mask = np.zeros((ns, d), dtype=np.bool_)
            for s in range(ns):
                mask[s, _sample_features(rng, level_feats, cfg.colsample_bynode)] = True
            gain, feat, thr, dleft = _kernels.find_splits(
                val, gs, hs, seg_start, seg_end, mask, G_tot, H_tot,
                cfg.reg_lambda, cfg.reg_alpha, cfg.gamma, cfg.min_child_weight,
            )
            split = (feat >= 0) & (gain > 0.0)

        for s, a in enumerate(active):
            nodes[a[0]].update(cover=float(a[4]))
            if not split[s]:
                nodes[a[0]].update(feature=-1, value=cfg.learning_rate * leaf_weight(a[3], a[4], cfg))
        if not split.any():
            break

        sfeat = np.where(split, feat, -1)
        GL, HL, GR, HR = _kernels.child_sums(val, gs, hs, seg_start, seg_end, sfeat, thr, dleft)
        # only segments with a child that may split again need reordering
        can_grow = depth + 1 < cfg.max_depth
        expand = split & can_grow & ((HL >= min_split_h) | (HR >= min_split_h))
        pfeat = np.where(expand, feat, -1)
        n_left = np.zeros(ns, dtype=np.int64)
        if expand.any():
            n_left = _kernels.partition(idx, val, gs, hs, Xt, seg_start, seg_end, pfeat, thr, dleft, go_left)
        next_active = []
        for s, (nid, lo, hi, _, _) in enumerate(active):
            if not split[s]:
                continue
            lid, rid = len(nodes), len(nodes) + 1
            nodes.append({})
            nodes.append({})
            nodes[nid].update(
                feature=int(feat[s]), threshold=float(thr[s]), left=lid, right=rid, default_left=bool(dleft[s]), value=0.0
            )
            children = ((lid, GL[s], HL[s]), (rid, GR[s], HR[s]))
            if expand[s]:
                mid = lo + int(n_left[s])
                bounds = ((lo, mid), (mid, hi))
                for (cid, Gc, Hc), (clo, chi) in zip(children, bounds):
                    if Hc >= min_split_h:
                        next_active.append((cid, clo, chi, Gc, Hc))
                    else:
                        nodes[cid].update(cover=float(Hc), feature=-1, value=cfg.learning_rate * leaf_weight(Gc, Hc, cfg))
            else:
                for cid, Gc, Hc in children:
                    nodes[cid].update(cover=float(Hc), feature=-1, value=cfg.learning_rate * leaf_weight(Gc, Hc, cfg))
        active = next_active
        depth += 1
    return Tree.from_nodes(nodes)


def train_gbt(
    X_train,
    y_train,
    X_valid,
    y_valid,
    cfg: GbtConfig = GbtConfig(),
    schema_hash: str = "",
    feature_names: tuple[str, ...] = (),
) -> tuple[TreeEnsemble, TrainingLog]:
    """Boost trees on the training rows with early stopping on validation log-loss.

    The returned ensemble is truncated at the round with the lowest validation
    loss. No class reweighting is applied.
    """
    X_train, y_train = _check_xy(X_train, y_train, "train")
    X_valid, y_valid = _check_xy(X_valid, y_valid, "valid")
    if X_valid.shape[1] != X_train.shape[1]:
        raise TrainingError("train/valid feature count differs")
    prevalence = float(y_train.mean()) if len(y_train) else 0.0
    if not 0.0 < prevalence < 1.0:
        raise TrainingError("training labels contain a single class")
    if len(y_valid) == 0:
        raise TrainingError("empty validation set")

    base = float(logit(prevalence))
    Xt = np.ascontiguousarray(X_train.T)
    Xv = np.ascontiguousarray(X_valid.T)
    idx_all, val_all = _kernels.presort(Xt)
    rng = np.random.default_rng(cfg.seed)

    margin = np.full(len(y_train), base)
    vmargin = np.full(len(y_valid), base)
    trees: list[Tree] = []
    tlog = TrainingLog(base_score=base)
    best = math.inf
    for rnd in range(cfg.max_rounds):
        g, h = grad_hess(margin, y_train)
        tree = grow_tree(Xt, idx_all, val_all, g, h, cfg, rng)
        trees.append(tree)
        margin += _kernels.predict_tree(Xt, tree.feature, tree.threshold, tree.left, tree.right, tree.default_left, tree.value)
        vmargin += _kernels.predict_tree(Xv, tree.feature, tree.threshold, tree.left, tree.right, tree.default_left, tree.value)
        tlog.train_loss.append(logistic_loss(margin, y_train))
        vl = logistic_loss(vmargin, y_valid)
        tlog.valid_loss.append(vl)
        if vl < best:
            best = vl
            tlog.best_round = rnd
        elif rnd - tlog.best_round >= cfg.early_stop_patience:
            tlog.stopped_early = True
            log.info("early stop at round %d (best %d, valid logloss %.6g)", rnd, tlog.best_round, best)
            break
    n_keep = tlog.best_round + 1
    model = TreeEnsemble(
        base_score=base,
        trees=trees[:n_keep],
        schema_hash=schema_hash,
        feature_names=tuple(feature_names),
        config=asdict(cfg),
        best_round=tlog.best_round,
    )
    return model, tlog

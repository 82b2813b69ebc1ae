"""Tree ensemble container, prediction and the versioned model artifact."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels

ARTIFACT_FORMAT = "vasoinit.model"
ARTIFACT_VERSION = 1


class ModelError(Exception):
    pass


class SchemaMismatchError(ModelError):
    pass


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass
class Tree:
    """One regression tree as parallel node arrays; node 0 is the root.

    ``feature[i] < 0`` marks a leaf. ``value`` holds the (learning-rate
    scaled) leaf output in log-odds, ``cover`` the hessian mass that reached
    the node during training.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __len__(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xt = np.ascontiguousarray(np.asarray(X, dtype=float).T)
        return _kernels.predict_tree(
            Xt, self.feature, self.threshold, self.left, self.right, self.default_left, self.value
        )

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] >= 0:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
            else:
                best = max(best, d)
        return best

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "default_left": self.default_left.astype(int).tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            default_left=np.asarray(d["default_left"], dtype=np.bool_),
            value=np.asarray(d["value"], dtype=np.float64),
            cover=np.asarray(d["cover"], dtype=np.float64),
        )

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "Tree":
        return cls(
            feature=np.array([-1]),
            threshold=np.array([0.0]),
            left=np.array([-1]),
            right=np.array([-1]),
            default_left=np.array([False]),
            value=np.array([float(value)]),
            cover=np.array([float(cover)]),
        )

    @classmethod
    def from_nodes(cls, nodes: Sequence[dict]) -> "Tree":
        """Build from dicts with keys feature/threshold/left/right/default_left/value/cover."""
        get = lambda k, default: [n.get(k, default) for n in nodes]  # noqa: E731
        return cls(
            feature=np.asarray(get("feature", -1), dtype=np.int64),
            threshold=np.asarray(get("threshold", 0.0), dtype=np.float64),
            left=np.asarray(get("left", -1), dtype=np.int64),
            right=np.asarray(get("right", -1), dtype=np.int64),
            default_left=np.asarray(get("default_left", False), dtype=np.bool_),
            value=np.asarray(get("value", 0.0), dtype=np.float64),
            cover=np.asarray(get("cover", 1.0), dtype=np.float64),
        )


@dataclass
class TreeEnsemble:
    base_score: float
    trees: list[Tree]
    schema_hash: str = ""
    feature_names: tuple[str, ...] = ()
    config: dict = field(default_factory=dict)
    best_round: int = -1
    _flat: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        if self.feature_names:
            return len(self.feature_names)
        return max((int(t.feature.max()) for t in self.trees), default=-1) + 1

    def _flatten(self):
        if self._flat is None or self._flat[0] != len(self.trees):
            offsets = np.cumsum([0] + [len(t) for t in self.trees])
            roots = offsets[:-1].astype(np.int64)
            if self.trees:
                feature = np.concatenate([t.feature for t in self.trees]).astype(np.int64)
                left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, roots)])
                right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, roots)])
                threshold = np.concatenate([t.threshold for t in self.trees])
                default_left = np.concatenate([t.default_left for t in self.trees])
                value = np.concatenate([t.value for t in self.trees])
            else:
                feature = left = right = np.zeros(1, dtype=np.int64)
                threshold = value = np.zeros(1)
                default_left = np.zeros(1, dtype=np.bool_)
            self._flat = (
                len(self.trees),
                (roots, feature, threshold, left.astype(np.int64), right.astype(np.int64), default_left, value),
            )
        return self._flat[1]

    def check_schema(self, schema_hash: str | None) -> None:
        if schema_hash is not None and self.schema_hash and schema_hash != self.schema_hash:
            raise SchemaMismatchError(f"model schema {self.schema_hash} does not match features {schema_hash}")

    def raw_margin(self, X: np.ndarray, schema_hash: str | None = None) -> np.ndarray:
        self.check_schema(schema_hash)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Xt = np.ascontiguousarray(X.T)
        return _kernels.predict_forest(Xt, *self._flatten(), float(self.base_score))

    def predict(self, X: np.ndarray, schema_hash: str | None = None) -> np.ndarray:
        return sigmoid(self.raw_margin(X, schema_hash))

    def truncated(self, n_trees: int) -> "TreeEnsemble":
        return TreeEnsemble(
            self.base_score, list(self.trees[:n_trees]), self.schema_hash, self.feature_names, dict(self.config), self.best_round
        )

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "best_round": self.best_round,
            "config": self.config,
            "feature_names": list(self.feature_names),
            "schema_hash": self.schema_hash,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        return cls(
            base_score=float(d["base_score"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            schema_hash=d.get("schema_hash", ""),
            feature_names=tuple(d.get("feature_names", ())),
            config=dict(d.get("config", {})),
            best_round=int(d.get("best_round", -1)),
        )


def predict(model: TreeEnsemble, X: np.ndarray, schema_hash: str | None = None) -> np.ndarray:
    """Probabilities for the rows of ``X``; NaN entries follow default directions."""
    return model.predict(X, schema_hash)


def save_artifact(path: str | Path, model: TreeEnsemble, isotonic=None, extra: dict | None = None) -> None:
    """Write the model (and optional isotonic map) as canonical JSON.

    Floats are written with ``repr`` so a save/load round trip is exact.
    """
    doc = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "model": model.to_dict(),
        "isotonic": None if isotonic is None else isotonic.to_dict(),
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def load_artifact(path: str | Path):
    """Return ``(model, isotonic_or_None, extra)``."""
    from .calibration import IsotonicMap

    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != ARTIFACT_FORMAT:
        raise ModelError(f"{path} is not a model artifact")
    if doc.get("version") != ARTIFACT_VERSION:
        raise ModelError(f"unsupported artifact version {doc.get('version')}")
    model = TreeEnsemble.from_dict(doc["model"])
    iso = IsotonicMap.from_dict(doc["isotonic"]) if doc.get("isotonic") else None
    return model, iso, doc.get("extra", {})


def config_dict(cfg) -> dict:
    return asdict(cfg)

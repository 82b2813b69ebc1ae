"""Single-feature logistic regression on the last MAP value of the context window."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import sigmoid

log = logging.getLogger(__name__)

SEPARATION_RIDGE = 1e-6


@dataclass(frozen=True)
class LogisticBaseline:
    intercept: float
    coefficient: float
    n_iter: int = 0
    separated: bool = False
    feature: str = "last"

    def decision_function(self, last) -> np.ndarray:
        return self.intercept + self.coefficient * np.asarray(last, dtype=float)

    def predict(self, last) -> np.ndarray:
        return sigmoid(self.decision_function(last))

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coefficient": self.coefficient,
            "n_iter": self.n_iter,
            "separated": self.separated,
            "feature": self.feature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticBaseline":
        return cls(float(d["intercept"]), float(d["coefficient"]), int(d["n_iter"]), bool(d["separated"]), d["feature"])


def _separated(x: np.ndarray, y: np.ndarray) -> bool:
    pos, neg = x[y == 1], x[y == 0]
    return bool(pos.max() <= neg.min() or neg.max() <= pos.min())


def _objective(A, y, beta, ridge):
    m = A @ beta
    return float(np.mean(np.logaddexp(0.0, m) - y * m) + 0.5 * ridge * beta[1] ** 2)


def _irls(z: np.ndarray, y: np.ndarray, ridge: float, max_iter: int, tol: float):
    """Newton/IRLS with step halving on standardized input; the ridge acts on the slope only."""
    n = len(y)
    A = np.column_stack([np.ones(n), z])
    beta = np.zeros(2)
    p0 = y.mean()
    beta[0] = np.log(p0 / (1 - p0))
    penalty = np.diag([0.0, ridge])
    obj = _objective(A, y, beta, ridge)
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(A @ beta)
        grad = A.T @ (p - y) / n + penalty @ beta
        if np.linalg.norm(grad) < tol:
            break
        W = p * (1 - p)
        hess = (A.T * W) @ A / n + penalty
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        while t > 1e-10:
            cand = beta - t * step
            cand_obj = _objective(A, y, cand, ridge)
            if cand_obj <= obj:
                break
            t *= 0.5
        beta, obj = cand, cand_obj
    return beta, it


def fit_logistic(x, y, max_iter: int = 100, tol: float = 1e-8) -> tuple[float, float, int, bool]:
    """Maximum-likelihood ``(intercept, slope, n_iter, separated)`` of ``y ~ sigmoid(a + b x)``.

    Perfectly (or quasi-) separated data has no finite MLE; it is refit with a
    small ridge on the slope and flagged.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.isnan(x).any():
        raise ValueError("logistic fit needs finite inputs")
    if len(np.unique(y)) < 2:
        raise ValueError("logistic fit needs both classes")
    mu = x.mean()
    sd = x.std() or 1.0
    z = (x - mu) / sd
    separated = _separated(x, y)
    ridge = 0.0
    if separated:
        log.warning("logistic fit: classes are separated; using ridge %.0e", SEPARATION_RIDGE)
        ridge = SEPARATION_RIDGE
    beta, n_iter = _irls(z, y, ridge, max_iter, tol)
    slope = beta[1] / sd
    intercept = beta[0] - beta[1] * mu / sd
    return float(intercept), float(slope), n_iter, separated


def train_baseline(last, labels, max_iter: int = 100, tol: float = 1e-8) -> LogisticBaseline:
    """Fit ``P(y=1) = sigmoid(a + b * last)`` on the last MAP value of each window."""
    x = np.asarray(last, dtype=float)
    if np.isnan(x).any():
        raise ValueError("baseline requires the 'last' feature on every row")
    a, b, n_iter, separated = fit_logistic(x, labels, max_iter, tol)
    return LogisticBaseline(a, b, n_iter, separated)

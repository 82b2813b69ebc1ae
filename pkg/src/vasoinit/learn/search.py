"""Uniform random search over the tuned hyperparameter ranges.

A lightweight stand-in for a full Bayesian search; the shipped defaults in
:class:`GbtConfig` are the tuned values and need no search.
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Callable

import numpy as np

from .boosting import GbtConfig

# name -> (low, high, log scale, integer)
SEARCH_SPACE = {
    "learning_rate": (0.005, 0.3, True, False),
    "max_depth": (3, 15, False, True),
    "min_child_weight": (1, 20, False, True),
    "gamma": (0.0, 10.0, False, False),
    "subsample": (0.3, 1.0, False, False),
    "colsample_bytree": (0.3, 1.0, False, False),
    "colsample_bylevel": (0.3, 1.0, False, False),
    "colsample_bynode": (0.3, 1.0, False, False),
    "reg_alpha": (1e-8, 10.0, True, False),
    "reg_lambda": (1e-8, 10.0, True, False),
    "max_delta_step": (0, 10, False, True),
}


def sample_config(rng: np.random.Generator, base: GbtConfig = GbtConfig()) -> GbtConfig:
    params = {}
    for name, (lo, hi, log_scale, integer) in SEARCH_SPACE.items():
        if integer:
            params[name] = int(rng.integers(lo, hi + 1))
        elif log_scale:
            params[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        else:
            params[name] = float(rng.uniform(lo, hi))
    return replace(base, **params)


def random_search(
    objective: Callable[[GbtConfig], float], n_trials: int = 20, seed: int = 0, base: GbtConfig = GbtConfig()
) -> tuple[GbtConfig, list[tuple[GbtConfig, float]]]:
    """Minimise ``objective`` over ``n_trials`` uniformly drawn configs."""
    rng = np.random.default_rng(seed)
    trials = []
    for _ in range(n_trials):
        cfg = sample_config(rng, base)
        trials.append((cfg, float(objective(cfg))))
    best = min(trials, key=lambda t: t[1])[0]
    return best, trials

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def run_pipeline(root, *, n_patients=None, explain=True, n_boot=None):
    """synth -> build -> train -> eval (-> explain) under ``root``; returns dirs and timings."""
    import time
    from pathlib import Path

    from vasoinit.cli import main

    root = Path(root)
    d = {k: root / k for k in ("cohort", "build", "model", "eval", "explain")}
    steps = [
        ["synth", "--out", str(d["cohort"])] + (["--n-patients", str(n_patients)] if n_patients else []),
        ["build", "--cohort", str(d["cohort"]), "--out", str(d["build"])],
        ["train", "--build", str(d["build"]), "--out", str(d["model"])],
        ["eval", "--build", str(d["build"]), "--model", str(d["model"]), "--out", str(d["eval"])]
        + (["--n-boot", str(n_boot)] if n_boot else []),
    ]
    if explain:
        steps.append(["explain", "--build", str(d["build"]), "--model", str(d["model"]), "--out", str(d["explain"])])
    t0 = time.perf_counter()
    for argv in steps:
        code = main(argv)
        assert code == 0, f"{argv[0]} exited {code}"
    d["seconds"] = time.perf_counter() - t0
    return d


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full run on the default synthetic cohort, shared by the slow tests."""
    return run_pipeline(tmp_path_factory.mktemp("default_run"))


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("small_run"), n_patients=300, n_boot=50)

"""Shared test fixtures: pinned oracle constants, the default radius context,
and tiny dataset builders.

The *_ORACLE constants were computed once with 60-digit arithmetic from the
closed forms (Hoeffding margin, the -log(1-(sqrt(pA)-sqrt(pB))^2) threshold,
the certified-radius expression, erf-based normal CDF values) and frozen here;
tests compare the double-precision implementation against them.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from crfl.analysis import AttackerProfile, RadiusContext
from crfl.data import SampleSet

# sqrt(log(1000) / 2000)
HOEFFDING_MARGIN_M1000_A0p001 = 0.058769700011919990
P_A_LOWER_FOR_0p9 = 0.841230299988080010
P_A_LOWER_FOR_1p0 = 0.941230299988080010

EPSILON_0p7_0p1 = 0.315875447208120059

# study point (p_a=0.7, p_b=0.1) with the default image-classification context
RAD_STUDY_POINT_DEFAULT_CTX = 1.285160038777745374

# closeness KL bound for the same context with backdoor magnitude 0.1
KL_BOUND_DEFAULT_CTX_D0p1 = 0.0019125

PHI_ORACLE = {
    0.0: 0.5,
    0.5: 0.691462461274013104,
    1.0: 0.841344746068542949,
    1.959964: 0.975000000903557596,
    2.0: 0.977249868051820793,
    3.0: 0.998650101968369905,
}
CONTRACTION_AT_RATIO_1 = 0.682689492137085897

NEG_LOG_0p75 = 0.287682072451780927


def default_radius_context(rounds: int = 100) -> RadiusContext:
    """Table-default context: one attacker, p=1/20, gamma=10, tau=30,
    eta=0.001, poison ratio 5/100, t_adv=10, rho_t=0.1t+2, sigma=0.01."""
    profile = AttackerProfile(
        weight=0.05, scale=10.0, local_iters=30, learning_rate=0.001, poison_ratio=0.05
    )
    schedule = tuple((0.1 * t + 2.0, 0.01) for t in range(11, rounds + 1))
    return RadiusContext(
        sigma_t_adv=0.01,
        attackers=(profile,),
        data_lipschitz=math.sqrt(17.0),
        t_adv=10,
        schedule=schedule,
    )


def make_samples(n: int, dim: int, num_classes: int, seed: int = 0) -> SampleSet:
    rng = np.random.default_rng(seed)
    features = rng.uniform(0.0, 1.0, size=(n, dim))
    labels = rng.integers(0, num_classes, size=n)
    return SampleSet(features, labels, num_classes)


MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def find_mnist_dir() -> str | None:
    """Directory with the four official IDX files, if available locally."""
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    candidates = []
    if os.environ.get("CRFL_MNIST_DIR"):
        candidates.append(os.environ["CRFL_MNIST_DIR"])
    candidates.append(os.path.join(root, "data", "mnist"))
    for cand in candidates:
        if all(os.path.exists(os.path.join(cand, f)) for f in MNIST_FILES):
            return cand
    return None


FAST_SYNTHETIC_CONFIG = {
    "master_seed": 555,
    "dataset": {
        "type": "synthetic", "n_train": 600, "n_test": 150,
        "dim": 12, "classes": 3, "separation": 4.0,
    },
    "federation": {
        "clients": 5, "rounds": 12, "eta": 0.05, "tau": 5, "batch_size": 20,
        "rho": {"a": 0.0, "b": 2.0}, "sigma": 0.02, "aggregation": "fedavg",
    },
    "attack": {
        "attackers": [0], "t_adv": 4, "gamma": 10.0, "q_b": 2,
        "pattern": {"indices": [0, 1], "values": [1, 1], "target_label": 0, "magnitude": 0.1},
    },
    "certify": {"sigma": 0.02, "num_models": 200, "alpha": 0.001, "test_cap": 100},
    "output": {"dir": "out"},
}


def write_config(tmp_path, name: str = "run.json", **overrides) -> str:
    """Write FAST_SYNTHETIC_CONFIG with block-level overrides to a file."""
    raw = json.loads(json.dumps(FAST_SYNTHETIC_CONFIG))
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key].update(value)
        else:
            raw[key] = value
    raw.setdefault("output", {})
    if "dir" not in overrides.get("output", {}):
        raw["output"]["dir"] = str(tmp_path / "out")
    path = tmp_path / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(raw))
    return str(path)

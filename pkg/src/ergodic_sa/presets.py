"""Shipped scenario documents."""
from __future__ import annotations

import copy
import json
import math

from .config import ExperimentConfig, parse_config
from .errors import UnknownPreset

# Two closed 2-state classes; state values 0/1 in each.
_CLASS_A = [[0.9, 0.1], [0.5, 0.5]]  # stationary (5/6, 1/6)
_CLASS_B = [[0.3, 0.7], [0.2, 0.8]]  # stationary (2/9, 7/9)


def _blocks(upper, lower, upper_rows=None, lower_rows=None):
    m = [[0.0] * 4 for _ in range(4)]
    for i in range(2):
        for j in range(2):
            if upper is not None:
                m[i][j] = upper[i][j]
            if lower is not None:
                m[2 + i][2 + j] = lower[i][j]
    if upper_rows is not None:
        m[0], m[1] = list(upper_rows[0]), list(upper_rows[1])
    if lower_rows is not None:
        m[2], m[3] = list(lower_rows[0]), list(lower_rows[1])
    return m


_CLASS_MEMORY = {
    "scenario": "class-memory",
    "description": "Order-1 noise whose first state picks one of two closed classes; iterates remember it.",
    "noise": {
        "variant": "order-k",
        "k": 1,
        "summary": {"family": "state-map", "mapping": [0, 0, 1, 1], "position": 0},
        "warmup": {"family": "constant", "matrix": _blocks(_CLASS_A, _CLASS_B)},
        "kernels": [
            {"family": "constant", "matrix": _blocks(_CLASS_A, None, lower_rows=[[0.5, 0.5, 0, 0]] * 2)},
            {"family": "constant", "matrix": _blocks(None, _CLASS_B, upper_rows=[[0, 0, 0.5, 0.5]] * 2)},
        ],
        "start_states": [0, 2],
    },
    "drift": {"family": "linear-target", "values": [0.0, 1.0, 0.0, 1.0]},
    "schedule": {"c": 1.0, "gamma": 1.0, "offset": 1},
    "horizon": 1_000_000,
    "replicas": 40,
    "seed": 20240601,
    "analyses": {
        "decompose": {},
        "equilibria": {"box": [[-1.0, 2.0]], "grid": 301, "tol": 0.05},
        "class-memory": {"own_tol": 0.02, "other_min": 0.4},
    },
}

_K0 = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.3, 0.3, 0.4]]
_K1 = [[0.1, 0.2, 0.7], [0.4, 0.1, 0.5], [0.2, 0.6, 0.2]]

_MIMIC_FIDELITY = {
    "scenario": "mimic-fidelity",
    "description": "Order-1 noise with a hidden label and overlapping supports; empirical vs exact mimic.",
    "noise": {
        "variant": "order-k",
        "k": 1,
        # label is read off Z(1), drawn by the warm-up kernel from Z(0) = 0
        "summary": {"family": "state-map", "mapping": [0, 1, 1], "position": 1},
        "warmup": {"family": "constant", "matrix": [[0.5, 0.25, 0.25], [1 / 3, 1 / 3, 1 / 3], [1 / 3, 1 / 3, 1 / 3]]},
        "kernels": [{"family": "constant", "matrix": _K0}, {"family": "constant", "matrix": _K1}],
        "start_states": [0],
    },
    "drift": {"family": "linear-target", "values": [0.0, 0.5, 1.0]},
    "schedule": {"c": 1.0, "gamma": 1.0, "offset": 1},
    "horizon": 200_000,
    "replicas": 20,
    "seed": 7,
    "analyses": {
        "decompose": {},
        "mimic-estimate": {
            "replicas": 20000, "steps": 50, "burn_in": 30, "smoothing": 0.0,
            "row_tv_max": 0.01, "sa_pairs": 20, "sa_diff_max": 0.02,
        },
    },
}

_ODE_TRACKING = {
    "scenario": "ode-tracking",
    "description": "Two-state ergodic noise with martingale noise; windowed tracking of the averaged ODE.",
    "noise": {
        "variant": "markov",
        "kernel": {"family": "constant", "matrix": [[0.9, 0.1], [0.5, 0.5]]},
        "start_states": [0],
    },
    "drift": {"family": "linear-target", "values": [0.0, 1.0]},
    "martingale": {"family": "gaussian-scaled", "K": 0.01},
    "schedule": {"c": 1.0, "gamma": 1.0, "offset": 1},
    "horizon": 1_000_000,
    "replicas": 20,
    "seed": 11,
    "analyses": {
        "equilibria": {"box": [[-1.0, 2.0]], "grid": 301, "tol": 0.05},
        "ode-track": {"window": 5.0, "anchors": 60, "dt": 0.01, "min_fraction": 0.9},
    },
}

_SPECTRAL_MIXING = {
    "scenario": "spectral-mixing",
    "description": "Same drift under a fast-mixing (gap 0.6) and a slow-mixing (gap 0.05) chain.",
    "arms": [
        {"name": "fast", "noise": {"variant": "markov", "start_states": [0],
                                    "kernel": {"family": "constant", "matrix": [[0.9, 0.1], [0.5, 0.5]]}}},
        {"name": "slow", "noise": {"variant": "markov", "start_states": [0],
                                    "kernel": {"family": "constant", "matrix": [[0.99, 0.01], [0.04, 0.96]]}}},
    ],
    "drift": {"family": "linear-target", "values": [0.0, 1.0]},
    # with gamma < 1 the settle time scales like (asymptotic variance)^(1/gamma),
    # which separates the arms more sharply than gamma = 1
    "schedule": {"c": 1.0, "gamma": 0.8, "offset": 1},
    "horizon": 1_000_000,
    "replicas": 20,
    "seed": 5,
    "analyses": {
        "decompose": {},
        "spectral-mixing": {"fast": "fast", "slow": "slow", "threshold": 0.05, "min_ratio": 3.0,
                            "min_fraction": 0.9, "box": [[-1.0, 2.0]]},
    },
}

_TILT = {"family": "logistic-tilt", "base": [[0.5, 0.5], [0.5, 0.5]], "weight": [1.0], "tilt": [0.0, 1.0]}
_TILT2 = dict(_TILT, weight=[2.0])

_GRADIENT_GAP = {
    "scenario": "gradient-gap",
    "description": "Averaged gradient vs gradient of the averaged objective under x-dependent noise.",
    "noise": {"variant": "markov", "kernel": _TILT2, "start_states": [0]},
    "drift": {"family": "sgd", "objective": {"family": "shifted-quadratic", "values": [0.0, 1.0]}},
    "schedule": {"c": 1.0, "gamma": 1.0, "offset": 1},
    "horizon": 100_000,
    "replicas": 5,
    "seed": 3,
    "analyses": {
        "equilibria": {"box": [[-2.0, 3.0]], "grid": 501, "tol": 0.05},
        "gradient-gap": {
            "objective": {"family": "linear-state", "values": [0.0, 1.0]},
            "points": [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0],
            "cases": [
                {"name": "logistic-tilt", "kernel": _TILT, "x": [1.0],
                 "expected_gap": [math.e / (1.0 + math.e) ** 2], "tol": 1e-4},
                {"name": "x-independent", "kernel": {"family": "constant", "matrix": [[0.7, 0.3], [0.4, 0.6]]},
                 "x": [1.0], "max_abs_gap": 1e-6},
            ],
            "sa-compare": {
                "objective": {"family": "shifted-quadratic", "values": [0.0, 1.0]},
                "kernel": _TILT2, "steps": 100_000, "delta": 0.1, "x0": [0.0],
                "min_difference": 0.05, "tol": 0.02,
            },
        },
    },
}

PRESETS = {
    doc["scenario"]: doc
    for doc in (_CLASS_MEMORY, _MIMIC_FIDELITY, _ODE_TRACKING, _SPECTRAL_MIXING, _GRADIENT_GAP)
}


def list_presets() -> list[tuple[str, str]]:
    return [(name, doc["description"]) for name, doc in PRESETS.items()]


def preset_document(name: str) -> dict:
    if name not in PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def preset_config(name: str, seed: int | None = None, out: str | None = None, **overrides) -> ExperimentConfig:
    doc = preset_document(name)
    if seed is not None:
        doc["seed"] = int(seed)
    if out is not None:
        doc["output_dir"] = str(out)
    doc.update(overrides)
    return parse_config(json.dumps(doc))

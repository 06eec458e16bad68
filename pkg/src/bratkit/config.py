"""YAML run configuration with every default materialized.

A config file has sections (problem, training, grid, controller, harness);
missing keys take the defaults below, and the fully resolved document —
defaults included — is what gets fingerprinted and embedded in outputs, so
a run can always be reproduced from its artifacts alone.
"""

from __future__ import annotations

import copy
import hashlib
import json

import yaml

from . import mpc as mpc_mod
from .problem import TOY_KINDS, make_toy_problem
from .training import TrainingConfig

DEFAULTS = {
    "problem": {
        "kind": "double_integrator_2d",
        "horizon": None,          # None -> problem default
        "mode": "reach_avoid",
    },
    "training": {
        "epochs": 2000,
        "widths": [None, 64, 64, 1],
        "omega0": 30.0,
        "w_pde": 1.0,
        "w_mpc": 10.0,
        "lambda_fp": 5.0,
        "alpha": 1.2,
        "curriculum_epochs": None,
        "n_collocation": 2048,
        "n_label_batch": 512,
        "lr": 2e-5,
        "cosine_decay": True,
        "grad_clip": 1.0,
        "n_checkpoints": 10,
        "gating": True,
        "validation_threshold": None,
        "threshold_iqr_frac": 0.10,
        "holdout_frac": 0.05,
        "gate_patience": 3,
        "gate_relax": 1.5,
        "n_labels": 2000,
        "regen_labels": True,
        "label_samples": 64,
        "label_rounds": 8,
        "strata_weights": None,
        "seed": 0,
    },
    "grid": {
        "counts": None,           # per-dimension node counts
        "dt": None,               # None -> CFL-derived
        "grid_horizon": None,     # None -> problem horizon
    },
    "controller": {
        "kind": "brat",           # brat | tmpc | mpc | grid
        "gamma": 0.05,
        "flat_grad_threshold": 1e-3,
        "tmpc_horizon_steps": 10,
    },
    "harness": {
        "n": 100,
        "seed": 0,
        "dt": 0.1,
        "timeout": None,          # None -> problem default
    },
}


def load_config(path=None, overrides: dict = None) -> dict:
    """Resolved config: file (if any) merged over defaults, then overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as f:
            doc = yaml.safe_load(f) or {}
        _merge(cfg, doc)
    if overrides:
        _merge(cfg, overrides)
    kind = cfg["problem"]["kind"]
    if kind not in TOY_KINDS:
        raise ValueError(f"unknown problem kind {kind!r}; known: {TOY_KINDS}")
    return cfg


def _merge(dst, src):
    for k, v in src.items():
        if k not in dst:
            raise ValueError(f"unknown config key {k!r}")
        if isinstance(dst[k], dict) and isinstance(v, dict):
            _merge(dst[k], v)
        else:
            dst[k] = v


def save_config(cfg: dict, path):
    with open(path, "w") as f:
        yaml.safe_dump(cfg, f, sort_keys=True, default_flow_style=False)


def config_fingerprint(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_problem(cfg: dict):
    sec = cfg["problem"]
    problem = make_toy_problem(sec["kind"], horizon=sec["horizon"])
    if sec.get("mode") == "avoid_only":
        problem = problem.avoid_only()
    return problem


def make_training_config(cfg: dict) -> TrainingConfig:
    sec = dict(cfg["training"])
    samples = sec.pop("label_samples")
    rounds = sec.pop("label_rounds")
    sec["widths"] = tuple(sec["widths"])
    sec["label_shooting"] = mpc_mod.ShootingConfig(samples=samples,
                                                   rounds=rounds)
    return TrainingConfig(**sec)

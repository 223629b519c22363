"""Experiment configuration: schema, validation and presets.

A config is a JSON object. Every section has a fixed set of keys and
anything else is rejected, so a typo fails loudly instead of silently
falling back to a default.
"""
from __future__ import annotations

import copy
import hashlib
import json

import numpy as np

from ..errors import ConfigurationError
from ..optimize import MAX_STEP

EXPERIMENTS = (
    "train", "verify-risk", "verify-moments", "sweep-reg", "sweep-dim", "ctx-stats", "embed", "critical-points",
)

DEFAULTS = {
    "experiment": "train",
    "seed": 0,
    "n_runs": 10,
    "output": "results",
    "L": 30,
    "mixture": {"kind": "gaussian", "sigma": 0.3, "d": 5, "K": 2, "centroids": "canonical"},
    "predictor": {"kind": "linear", "lam": 0.6, "psi": 2.0},
    "optimizer": {
        "gamma": 0.01, "iterations": 10_000, "batch_size": 256, "rho": 0.0, "projection": "riemannian",
        "init": "manifold", "init_heads": None, "regularizer": "pairwise", "overlap": "linear", "train_psi": True,
        "train_lam": True, "record_every": None,
    },
    "sweep": {"param": "rho", "values": []},
    "verify": {"n_samples": 1_000_000, "n_configs": 10},
}

_TOP_KEYS = set(DEFAULTS)
_CHOICES = {
    ("mixture", "kind"): ("dirac", "gaussian", "incontext"),
    ("predictor", "kind"): ("linear", "softmax", "incontext"),
    ("optimizer", "projection"): ("riemannian", "euclidean"),
    ("optimizer", "init"): ("manifold", "sphere", "explicit"),
    ("optimizer", "regularizer"): ("pairwise", "product"),
    ("optimizer", "overlap"): ("linear", "squared"),
    ("sweep", "param"): ("rho", "d"),
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(section: dict, allowed, where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _positive_int(v, name, minimum=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}")


def validate(raw: dict) -> dict:
    """Fill defaults and check every field. Returns a new dict."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "config")
    for sect in ("mixture", "predictor", "optimizer", "sweep", "verify"):
        if sect in raw:
            if not isinstance(raw[sect], dict):
                raise ConfigurationError(f"{sect} must be an object")
            _check_keys(raw[sect], DEFAULTS[sect], sect)
    cfg = deep_merge(DEFAULTS, raw)
    if cfg["mixture"]["kind"] == "dirac" and "sigma" not in raw.get("mixture", {}):
        cfg["mixture"]["sigma"] = 0.0
    if cfg["experiment"] == "sweep-dim" and "param" not in raw.get("sweep", {}):
        cfg["sweep"]["param"] = "d"

    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {cfg['experiment']!r}")
    for (sect, key), choices in _CHOICES.items():
        if cfg[sect][key] not in choices:
            raise ConfigurationError(f"{sect}.{key} must be one of {choices}")
    _positive_int(cfg["seed"], "seed", 0)
    _positive_int(cfg["n_runs"], "n_runs")
    _positive_int(cfg["L"], "L")
    if not isinstance(cfg["output"], str) or not cfg["output"]:
        raise ConfigurationError("output must be a nonempty path")

    mix = cfg["mixture"]
    _positive_int(mix["d"], "mixture.d")
    _positive_int(mix["K"], "mixture.K")
    if not (isinstance(mix["sigma"], (int, float)) and mix["sigma"] >= 0):
        raise ConfigurationError("mixture.sigma must be >= 0")
    if mix["kind"] == "dirac" and mix["sigma"] != 0:
        raise ConfigurationError("a Dirac mixture has sigma = 0")
    if mix["K"] > mix["d"]:
        raise ConfigurationError("mixture.K must not exceed mixture.d")
    cents = mix["centroids"]
    if isinstance(cents, str):
        if cents not in ("canonical", "random"):
            raise ConfigurationError("mixture.centroids must be 'canonical', 'random' or a list of vectors")
    else:
        arr = np.asarray(cents, dtype=float)
        if arr.shape != (mix["K"], mix["d"]):
            raise ConfigurationError("explicit centroids must have shape (K, d)")

    pred = cfg["predictor"]
    for key in ("lam", "psi"):
        if not isinstance(pred[key], (int, float)) or isinstance(pred[key], bool):
            raise ConfigurationError(f"predictor.{key} must be a number")
    if pred["lam"] < 0:
        raise ConfigurationError("predictor.lam must be >= 0")
    if pred["kind"] == "softmax" and mix["K"] != 2:
        raise ConfigurationError("the softmax predictor needs K = 2")

    opt = cfg["optimizer"]
    if not (isinstance(opt["gamma"], (int, float)) and 0 <= opt["gamma"] <= MAX_STEP):
        raise ConfigurationError(f"optimizer.gamma must be in [0, {MAX_STEP}]")
    _positive_int(opt["iterations"], "optimizer.iterations", 0)
    _positive_int(opt["batch_size"], "optimizer.batch_size")
    if not (isinstance(opt["rho"], (int, float)) and opt["rho"] >= 0):
        raise ConfigurationError("optimizer.rho must be >= 0")
    if opt["record_every"] is not None:
        _positive_int(opt["record_every"], "optimizer.record_every")
    if opt["init"] == "explicit":
        if opt["init_heads"] is None:
            raise ConfigurationError("optimizer.init = 'explicit' needs init_heads")
        if np.asarray(opt["init_heads"], float).shape != (mix["K"], mix["d"]):
            raise ConfigurationError("optimizer.init_heads must have shape (K, d)")
    for key in ("train_psi", "train_lam"):
        if not isinstance(opt[key], bool):
            raise ConfigurationError(f"optimizer.{key} must be a boolean")

    sw = cfg["sweep"]
    if not isinstance(sw["values"], list):
        raise ConfigurationError("sweep.values must be a list")
    if cfg["experiment"] in ("sweep-reg", "sweep-dim") and not sw["values"]:
        raise ConfigurationError("a sweep needs a nonempty sweep.values")
    if cfg["experiment"] == "sweep-dim":
        for v in sw["values"]:
            _positive_int(v, "sweep.values entry", 2)

    ver = cfg["verify"]
    _positive_int(ver["n_samples"], "verify.n_samples", 2)
    _positive_int(ver["n_configs"], "verify.n_configs")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None


def _linspace(a, b, n):
    return [float(x) for x in np.linspace(a, b, n)]


PRESETS = {
    # linear heads, manifold initialization
    "fig-linear-manifold": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 0.3},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "manifold", "rho": 0.0},
    },
    "fig-linear-manifold-high-noise": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 1.0},
        "predictor": {"lam": 0.2},
        "optimizer": {"init": "manifold", "rho": 0.0},
    },
    "fig-linear-manifold-dirac": {
        "experiment": "train",
        "mixture": {"kind": "dirac", "sigma": 0.0},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "manifold", "rho": 0.0},
    },
    # linear heads, sphere initialization with regularization
    "fig-linear-sphere": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 0.3},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "sphere", "rho": 0.2},
    },
    "fig-linear-sphere-noreg": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 0.3},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "sphere", "rho": 0.0},
    },
    "fig-linear-sphere-high-noise": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 1.0},
        "predictor": {"lam": 0.2},
        "optimizer": {"init": "sphere", "rho": 0.2},
    },
    "fig-linear-sphere-dirac": {
        "experiment": "train",
        "mixture": {"kind": "dirac", "sigma": 0.0},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "sphere", "rho": 0.1},
    },
    # regularization sweeps
    "sweep-reg-dirac": {
        "experiment": "sweep-reg",
        "mixture": {"kind": "dirac", "sigma": 0.0},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "sphere", "iterations": 5000},
        "sweep": {"param": "rho", "values": _linspace(0.0, 0.3, 15)},
    },
    "sweep-reg-gaussian": {
        "experiment": "sweep-reg",
        "mixture": {"kind": "gaussian", "sigma": 0.3},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "sphere", "iterations": 5000},
        "sweep": {"param": "rho", "values": _linspace(0.0, 3.0, 30)},
    },
    # dimension sweep, minimal RMSE after 5000 iterations
    "sweep-dim": {
        "experiment": "sweep-dim",
        "mixture": {"kind": "gaussian", "sigma": 0.3},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "sphere", "rho": 0.2, "iterations": 5000},
        "sweep": {"param": "d", "values": [4, 5, 10, 20, 50, 100, 200]},
    },
    # three heads
    "fig-k3-pairwise": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 0.3, "d": 6, "K": 3},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "sphere", "rho": 0.2, "iterations": 20_000, "regularizer": "pairwise"},
    },
    "fig-k3-product": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 0.3, "d": 6, "K": 3},
        "predictor": {"lam": 0.6},
        "optimizer": {"init": "sphere", "rho": 0.2, "iterations": 20_000, "regularizer": "product"},
    },
    # shaped softmax with trainable psi and lambda; the squared overlap
    # keeps the heads from turning antiparallel
    "fig-softmax": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 0.3},
        "predictor": {"kind": "softmax", "lam": 3.0, "psi": 2.0},
        "optimizer": {"init": "sphere", "rho": 0.5, "overlap": "squared"},
    },
    "fig-softmax-linear-overlap": {
        "experiment": "train",
        "mixture": {"kind": "gaussian", "sigma": 0.3},
        "predictor": {"kind": "softmax", "lam": 3.0, "psi": 2.0},
        "optimizer": {"init": "sphere", "rho": 0.5, "overlap": "linear"},
    },
    # statistics of the embeddings
    "embed-oracle": {
        "experiment": "embed",
        "L": 500,
        "mixture": {"kind": "gaussian", "sigma": 0.3, "d": 10},
        "predictor": {"kind": "linear", "lam": 1.0 / 1.18},
    },
    "embed-ctx": {
        "experiment": "embed",
        "L": 500,
        "mixture": {"kind": "incontext", "sigma": 0.3, "d": 10},
        "predictor": {"kind": "incontext", "lam": 1.0 / 1.18},
    },
    "ctx-stats": {
        "experiment": "ctx-stats",
        "n_runs": 1,
        "L": 500,
        "mixture": {"kind": "incontext", "sigma": 0.3, "d": 10},
        "predictor": {"kind": "incontext", "lam": 1.0 / 1.18},
        "verify": {"n_samples": 100_000},
    },
    "verify-risk": {"experiment": "verify-risk", "n_runs": 1, "verify": {"n_samples": 1_000_000}},
    "verify-moments": {"experiment": "verify-moments", "n_runs": 1, "verify": {"n_samples": 1_000_000, "n_configs": 10}},
    "critical-points": {"experiment": "critical-points", "n_runs": 1},
}


def preset(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None

"""Run configuration: layered defaults < YAML file < command-line overrides.

Every key has a default below; unknown keys are rejected, and values must
match the type of their default (ints are accepted where floats are
expected).  The canonical form is YAML with sorted keys, and a config's
hash is the SHA-256 of its canonical JSON.  Stage directories are named
``<stage>-<hash12>`` from the hash of exactly the sections that stage
depends on, so changing one stage's settings never reuses stale artifacts
downstream.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .errors import ValidationError

DEFAULTS = {
    "seed": 0,
    "paths": {
        "manifest": None,
        "lexicon": None,
        "symbols": None,
        "out_dir": "runs",
    },
    "data": {
        "test_speakers": [],
    },
    "features": {
        "ssl": "cepstral",  # "cepstral" proxy, or "files" (manifest ssl_feature_path)
    },
    "alignment": {
        "n_units": 50,
        "max_iter": 300,
        "tol": 1e-4,
    },
    "cdsvae": {
        "preset": "desk",  # "desk" or "table1"
        "alignment_kind": "UA",
        "arch": {},  # per-field overrides of the preset
        "loss": {"alpha": 0.01, "beta": 10.0, "gamma": 1.0, "mask_prob": 0.08, "mask_span": 10},
        "schedule": {"epochs": 30, "batch_size": 16, "lr": 5e-4, "decay": 0.95, "decay_every": 5,
                     "crop_frames": 100, "kl_warmup_epochs": 0},
    },
    "dual": {
        "schedule": {"epochs": 10, "batch_size": 16, "lr": 5e-4, "decay": 0.95, "decay_every": 5,
                     "crop_frames": 100, "kl_warmup_epochs": 0},
    },
    "frontend": {
        "duration": {
            "preset": "desk",
            "arch": {},
            "val_fraction": 0.1,
            "schedule": {"epochs": 30, "batch_size": 16, "lr": 5e-4, "decay": 0.95, "decay_every": 5,
                         "crop_frames": 100, "kl_warmup_epochs": 0},
        },
        "fa2ua": {
            "preset": "desk",
            "arch": {},
            "val_fraction": 0.1,
            "schedule": {"epochs": 30, "batch_size": 16, "lr": 5e-4, "decay": 0.95, "decay_every": 5,
                         "crop_frames": 100, "kl_warmup_epochs": 0},
        },
    },
    "synthesis": {
        "acoustic": "dual",  # which acoustic checkpoint: "dual" or "base"
        "vocoder": "internal",
        "endpoint": None,
        "iterations": 60,
        "timeout": 30.0,
        "duration_speaker": "random",
        "sample_speaker": False,
        "boundary": None,
    },
    "eval": {
        "n_trials": 2000,
        "projection": "tsne",
        "perplexity": 30.0,
        "probe_split": 0.2,
    },
}

# sections whose values are free-form dicts of overrides, checked later by the config classes
_OPEN = {("cdsvae", "arch"), ("frontend", "duration", "arch"), ("frontend", "fa2ua", "arch")}


def _check(value, default, path):
    where = ".".join(path)
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ValidationError(f"{where}: expected a mapping")
        if tuple(path) in _OPEN:
            return copy.deepcopy(value)
        unknown = sorted(set(value) - set(default))
        if unknown:
            raise ValidationError(f"unknown config key(s) {', '.join('.'.join(path + [k]) for k in unknown)}")
        return {k: _check(value[k], default[k], path + [k]) if k in value else copy.deepcopy(default[k])
                for k in default}
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ValidationError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return value


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> dict:
    """``"cdsvae.loss.gamma=0"`` -> nested dict; the value is parsed as YAML."""
    if "=" not in item:
        raise ValidationError(f"override {item!r} is not KEY=VALUE")
    key, raw = item.split("=", 1)
    value = yaml.safe_load(raw) if raw else None
    for part in reversed(key.strip().split(".")):
        value = {part: value}
    return value


class RunConfig:
    """Validated, immutable-by-convention nested configuration."""

    def __init__(self, data: dict | None = None):
        self.data = _check(_merge(DEFAULTS, data or {}), DEFAULTS, [])

    @classmethod
    def load(cls, path=None, overrides=()):
        layer = {}
        if path is not None:
            with open(path) as fh:
                layer = yaml.safe_load(fh) or {}
            if not isinstance(layer, dict):
                raise ValidationError(f"{path}: top level must be a mapping")
        for o in overrides:
            layer = _merge(layer, parse_override(o) if isinstance(o, str) else o)
        return cls(layer)

    def __getitem__(self, key):
        return self.data[key]

    def get(self, dotted):
        node = self.data
        for part in dotted.split("."):
            node = node[part]
        return node

    def canonical(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def save(self, path):
        Path(path).write_text(self.canonical())

    def hash(self, *sections) -> str:
        """SHA-256 of the canonical JSON of the whole config or of ``sections``."""
        data = self.data if not sections else {s: self.get(s) for s in sections}
        return digest(data)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

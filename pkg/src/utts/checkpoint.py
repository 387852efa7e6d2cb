"""Versioned checkpoint container shared by every trainable model.

A checkpoint is a ``torch.save`` dict::

    format      "utts-checkpoint"
    version     1
    kind        "cdsvae" | "duration" | "fa2ua"
    arch        architecture config as a plain dict
    params      named parameter tensors (state_dict)
    optimizer   optimizer state_dict or None
    epoch, step training progress (epochs completed, optimizer steps taken)
    rng         {"torch": ByteTensor generator state, "numpy": bit-generator state}
    extra       free-form metadata (loss config, schedule, config hash, ...)
"""

from __future__ import annotations

import os
from pathlib import Path

import torch

from .errors import ValidationError

FORMAT = "utts-checkpoint"
VERSION = 1


def save_checkpoint(path, kind, arch, model, optimizer=None, epoch=0, step=0, rng=None, extra=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "arch": dict(arch),
        "params": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": int(epoch),
        "step": int(step),
        "rng": rng or {},
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path, kind=None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise ValidationError(f"{path} is not a utts checkpoint")
    if blob.get("version") != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {blob.get('version')}")
    if kind is not None and blob["kind"] != kind:
        raise ValidationError(f"{path} holds a {blob['kind']!r} model, expected {kind!r}")
    return blob

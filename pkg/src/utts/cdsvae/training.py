from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..alignment import AlignmentSequence
from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import TrainingDiverged, ValidationError
from ..features import MelSpectrogram, crop_segment
from .losses import LossConfig, cdsvae_loss, dual_recon_loss
from .model import ArchConfig, CDSVAE, build_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 5e-4
    decay: float = 0.95
    decay_every: int = 5
    crop_frames: int = 100
    kl_warmup_epochs: int = 0  # KL weights ramp linearly from 0 over this many epochs

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.crop_frames < 1 or self.kl_warmup_epochs < 0:
            raise ValidationError(f"invalid schedule {self}")

    @classmethod
    def full_scale(cls, **kw):
        return cls(**{"batch_size": 256, **kw})

    def lr_at(self, epoch: int) -> float:
        """Step size for 0-based ``epoch``."""
        return self.lr * self.decay ** (epoch // self.decay_every)

    def kl_scale(self, epoch: float) -> float:
        """Multiplier on alpha and beta at (fractional) ``epoch``."""
        if self.kl_warmup_epochs == 0:
            return 1.0
        return min(1.0, epoch / self.kl_warmup_epochs)


@dataclass
class TrainItem:
    utterance_id: str
    mel: MelSpectrogram
    alignment: AlignmentSequence

    def __post_init__(self):
        if len(self.mel) != len(self.alignment):
            raise ValidationError(f"{self.utterance_id}: mel has {len(self.mel)} frames, "
                                  f"alignment {len(self.alignment)}")


@dataclass
class TrainResult:
    model: CDSVAE
    epochs: list = field(default_factory=list)  # per-epoch mean loss terms
    checkpoint: Optional[Path] = None
    step: int = 0


def make_batch(items, crop_frames, rng, mask_id):
    mels, toks, valid = [], [], []
    for it in items:
        crop = crop_segment(it.mel, crop_frames, rng)
        t = np.full(crop_frames, mask_id, dtype=np.int64)
        seg = it.alignment.tokens[crop.start:crop.start + crop_frames]
        t[: len(seg)] = seg
        mels.append(crop.mel.frames)
        toks.append(t)
        valid.append(crop.valid)
    return (torch.from_numpy(np.stack(mels)), torch.from_numpy(np.stack(toks)),
            torch.from_numpy(np.stack(valid)))


def _rng_state(gen, rng):
    return {"torch": gen.get_state(), "numpy": rng.bit_generator.state}


def _restore_rng(state, gen, rng):
    gen.set_state(state["torch"])
    rng.bit_generator.state = state["numpy"]


def train(items, arch: ArchConfig, loss_cfg: LossConfig = LossConfig(), schedule: Schedule = Schedule(),
          out_dir=None, seed: int = 0, dual: bool = False, init_from=None, resume=None,
          keep_every_epoch: bool = False, extra=None) -> TrainResult:
    """Adam training of the C-DSVAE.

    ``dual=True`` runs the second round (dual content encoders) and requires
    ``init_from``, a converged first-round checkpoint.  ``resume`` continues
    an interrupted run from its checkpoint, restoring optimizer and RNG state.
    A checkpoint is written after every epoch and one JSON record per step
    is appended to ``train_log.jsonl``.
    """
    items = list(items)
    if not items:
        raise ValidationError("no training items")
    if dual and init_from is None and resume is None:
        raise ValidationError("dual-encoder training needs a pretrained C-DSVAE checkpoint")
    for it in items:
        if it.alignment.vocab_size != arch.vocab_size:
            raise ValidationError(f"{it.utterance_id}: alignment vocab {it.alignment.vocab_size} "
                                  f"does not match model vocab {arch.vocab_size}")

    model = build_model(arch, seed)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=schedule.lr)
    start_epoch, step = 0, 0

    if resume is not None:
        ck = load_checkpoint(resume, "cdsvae")
        model.load_state_dict(ck["params"])
        opt.load_state_dict(ck["optimizer"])
        _restore_rng(ck["rng"], gen, rng)
        start_epoch, step = ck["epoch"], ck["step"]
    elif init_from is not None:
        ck = load_checkpoint(init_from, "cdsvae")
        if ArchConfig.from_dict(ck["arch"]) != arch:
            raise ValidationError("initial checkpoint architecture differs from requested one")
        model.load_state_dict(ck["params"])

    else:
        frames = np.concatenate([it.mel.frames for it in items]).astype(np.float64)
        model.set_mel_stats(frames.mean(axis=0), frames.std(axis=0))

    loss_fn = dual_recon_loss if dual else cdsvae_loss
    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "a")

    result = TrainResult(model)
    try:
        for epoch in range(start_epoch, schedule.epochs):
            lr = schedule.lr_at(epoch)
            for group in opt.param_groups:
                group["lr"] = lr
            model.train()
            order = rng.permutation(len(items))
            sums, nb = {}, 0
            n_batches = math.ceil(len(order) / schedule.batch_size)
            for b in range(0, len(order), schedule.batch_size):
                batch = [items[i] for i in order[b:b + schedule.batch_size]]
                mel, tok, valid = make_batch(batch, schedule.crop_frames, rng, arch.mask_id)
                k = schedule.kl_scale(epoch + (b // schedule.batch_size + 1) / n_batches)
                cfg = loss_cfg if k == 1.0 else replace(loss_cfg, alpha=k * loss_cfg.alpha, beta=k * loss_cfg.beta)
                losses = loss_fn(model, mel, tok, cfg, gen, frame_mask=valid)
                terms = losses.as_dict()
                if not all(math.isfinite(v) for v in terms.values()):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}: {terms}; "
                                           f"utterances {[it.utterance_id for it in batch]}")
                opt.zero_grad()
                losses.total.backward()
                opt.step()
                step += 1
                rec = {"step": step, "epoch": epoch, **terms, "lr": lr}
                if log_fh is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                for k, v in terms.items():
                    sums[k] = sums.get(k, 0.0) + v
                nb += 1
            summary = {k: v / nb for k, v in sums.items()}
            summary.update(epoch=epoch, lr=lr)
            result.epochs.append(summary)
            log.info("epoch %d: %s", epoch, summary)
            if out_dir is not None:
                ex = {"loss": asdict(loss_cfg), "schedule": asdict(schedule), "dual": dual, "seed": seed,
                      **(extra or {})}
                args = ("cdsvae", arch.to_dict(), model, opt, epoch + 1, step, _rng_state(gen, rng), ex)
                result.checkpoint = save_checkpoint(out_dir / "checkpoint.pt", *args)
                if keep_every_epoch:
                    save_checkpoint(out_dir / f"checkpoint-epoch{epoch + 1:03d}.pt", *args)
    finally:
        if log_fh is not None:
            log_fh.close()
    result.step = step
    model.eval()
    return result


def load_model(path) -> CDSVAE:
    ck = load_checkpoint(path, "cdsvae")
    model = CDSVAE(ArchConfig.from_dict(ck["arch"]))
    model.load_state_dict(ck["params"])
    model.eval()
    return model

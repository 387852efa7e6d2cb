"""Training loops for the duration predictor and the FA2UA mapper.

Both reuse the acoustic model's optimizer recipe (Adam, step decay) and
checkpoint container, write one JSON record per epoch to ``train_log.jsonl``
and can resume bit-exactly from their last checkpoint.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..alignment import FA_MASK, expand_phonemes, read_fa_file
from ..cdsvae.losses import MASK_PROB, MASK_SPAN, sample_mask
from ..cdsvae.training import Schedule
from ..checkpoint import load_checkpoint, save_checkpoint
from ..errors import TrainingDiverged, ValidationError
from .duration import PH_PAD, DurationConfig, DurationModel, duration_loss, log_durations
from .fa2ua import FA2UAConfig, FA2UAModel, fa2ua_loss

log = logging.getLogger(__name__)


@dataclass
class FrontendResult:
    model: torch.nn.Module
    history: list = field(default_factory=list)  # per-epoch {"epoch", "train", "val", "lr"}
    checkpoint: Optional[Path] = None
    split: tuple = ((), ())  # (train ids, validation ids)


def load_fa_entries(manifest) -> list:
    """``(entry, PhonemeDurations)`` for every manifest entry with a readable FA file.

    Entries without one are skipped with a warning; if none remain this is an error.
    """
    out = []
    for e in manifest:
        path = manifest.resolve(e.fa_path) if e.fa_path else None
        if path is None or not Path(path).exists():
            log.warning("%s: no forced alignment, skipped", e.utterance_id)
            continue
        out.append((e, read_fa_file(path)))
    if not out:
        raise ValidationError("no manifest entry has a forced alignment")
    return out


@torch.no_grad()
def build_speaker_pool(mels: dict, speaker_of: dict, model) -> dict:
    """Per-speaker average of posterior speaker means over that speaker's utterances."""
    model.eval()
    sums = {}
    for uid, mel in mels.items():
        frames = mel.frames if hasattr(mel, "frames") else mel
        q_s, _ = model.posteriors(torch.as_tensor(np.asarray(frames)))
        v = q_s.mean[0, 0].double().numpy()
        s = speaker_of[uid]
        acc, n = sums.get(s, (0.0, 0))
        sums[s] = (acc + v, n + 1)
    return {s: acc / n for s, (acc, n) in sums.items()}


def _split(n, val_fraction, rng):
    perm = rng.permutation(n)
    n_val = int(round(val_fraction * n))
    if n > 1:
        n_val = min(max(n_val, 1), n - 1) if val_fraction > 0 else 0
    return perm[n_val:], perm[:n_val]


def _seeded(cls, cfg, seed):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return cls(cfg)


def _rng_state(gen, rng):
    return {"torch": gen.get_state(), "numpy": rng.bit_generator.state}


def _optimizer_setup(model, schedule, resume, kind, seed):
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(model.parameters(), lr=schedule.lr)
    start = 0
    if resume is not None:
        ck = load_checkpoint(resume, kind)
        model.load_state_dict(ck["params"])
        opt.load_state_dict(ck["optimizer"])
        gen.set_state(ck["rng"]["torch"])
        rng.bit_generator.state = ck["rng"]["numpy"]
        start = ck["epoch"]
    return gen, rng, opt, start


def _run(kind, model, cfg, schedule, n_train, batch_loss, evaluate, out_dir, seed, resume, extra):
    """Shared epoch loop; ``batch_loss(idx, gen, rng)`` and ``evaluate()`` close over the data."""
    gen, rng, opt, start = _optimizer_setup(model, schedule, resume, kind, seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = FrontendResult(model)
    for epoch in range(start, schedule.epochs):
        lr = schedule.lr_at(epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        order = rng.permutation(n_train)
        total, nb = 0.0, 0
        for b in range(0, n_train, schedule.batch_size):
            loss = batch_loss(order[b:b + schedule.batch_size], gen, rng)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"{kind}: non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            nb += 1
        rec = {"epoch": epoch, "train": total / max(nb, 1), **evaluate(), "lr": lr}
        result.history.append(rec)
        log.info("%s epoch %d: %s", kind, epoch, rec)
        if out_dir is not None:
            with open(out_dir / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps(rec) + "\n")
            result.checkpoint = save_checkpoint(
                out_dir / "checkpoint.pt", kind, cfg.to_dict(), model, opt, epoch + 1, 0,
                _rng_state(gen, rng), {"schedule": asdict(schedule), "seed": seed, **(extra or {})})
    model.eval()
    return result


# ---------------------------------------------------------------- duration


def _pad(seqs, value, dtype):
    n = max(len(s) for s in seqs)
    out = np.full((len(seqs), n), value, dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return torch.from_numpy(out)


def _duration_batch(data, pool, idx, dtype, speaker_perm=None):
    ph = _pad([data[i][1].phonemes for i in idx], PH_PAD, np.int64)
    target = _pad([log_durations(data[i][1]) for i in idx], 0.0, np.float64).to(dtype)
    keys = [data[i][0].speaker_id for i in idx]
    if speaker_perm is not None:
        keys = [keys[j] for j in speaker_perm]
    spk = torch.as_tensor(np.stack([pool[k] for k in keys]), dtype=dtype)
    return ph, spk, target, ph != PH_PAD


def duration_val_mse(model, data, pool, shuffle_seed=None) -> float:
    """Validation log-duration MSE; ``shuffle_seed`` permutes speaker embeddings across utterances."""
    if not data:
        return float("nan")
    dtype = model.out.weight.dtype
    perm = None
    if shuffle_seed is not None:
        perm = np.random.default_rng(shuffle_seed).permutation(len(data))
    model.eval()
    with torch.no_grad():
        ph, spk, target, valid = _duration_batch(data, pool, np.arange(len(data)), dtype, perm)
        return float(duration_loss(model(ph, spk, ~valid), target, valid))


def train_duration(manifest, speaker_pool: dict, cfg: DurationConfig = DurationConfig(),
                   schedule: Schedule = Schedule(), out_dir=None, seed: int = 0, resume=None,
                   val_fraction: float = 0.1, extra=None) -> FrontendResult:
    """Fit the duration predictor on the manifest's forced alignments.

    Every utterance is conditioned on its speaker's pooled embedding
    (fixed per utterance).  Validation MSE is logged each epoch; the split
    is stored in ``result.split`` as ``(train_ids, val_ids)``.
    """
    data = load_fa_entries(manifest)
    missing = sorted({e.speaker_id for e, _ in data} - set(speaker_pool))
    if missing:
        raise ValidationError(f"speaker pool has no embedding for {missing}")
    tr, va = _split(len(data), val_fraction, np.random.default_rng(seed + 1))
    train_data = [data[i] for i in tr]
    val_data = [data[i] for i in va]
    model = _seeded(DurationModel, cfg, seed)
    dtype = model.out.weight.dtype

    def batch_loss(idx, gen, rng):
        ph, spk, target, valid = _duration_batch(train_data, speaker_pool, idx, dtype)
        return duration_loss(model(ph, spk, ~valid), target, valid)

    def evaluate():
        return {"val": duration_val_mse(model, val_data, speaker_pool)}

    result = _run("duration", model, cfg, schedule, len(train_data), batch_loss, evaluate, out_dir, seed,
                  resume, extra)
    result.split = ([e.utterance_id for e, _ in train_data], [e.utterance_id for e, _ in val_data])
    return result


def load_duration_model(path) -> DurationModel:
    ck = load_checkpoint(path, "duration")
    model = DurationModel(DurationConfig(**ck["arch"]))
    model.load_state_dict(ck["params"])
    model.eval()
    return model


# ---------------------------------------------------------------- FA2UA


def _fa2ua_batch(pairs, idx, gen, crop, rng, masks=None):
    fa, ua, m = [], [], []
    for j, i in enumerate(idx):
        f, u = pairs[i]
        start = int(rng.integers(0, len(f) - crop + 1)) if rng is not None and len(f) > crop else 0
        end = start + (crop if rng is not None else len(f))
        f, u = f[start:end], u[start:end]
        fa.append(f)
        ua.append(u)
        m.append(masks[i] if masks is not None else sample_mask(len(f), gen, MASK_PROB, MASK_SPAN).to_bool())
    # padding frames are never masked, so they never reach the loss
    return (_pad(fa, FA_MASK, np.int64), _pad(ua, 0, np.int64), _pad(m, False, bool))


def masked_accuracy(model, pairs, masks) -> float:
    """Top-1 accuracy over masked frames of ``pairs`` (list of (fa, ua) token arrays)."""
    model.eval()
    hit = n = 0
    with torch.no_grad():
        for (f, u), m in zip(pairs, masks):
            if not m.any():
                continue
            logits = model(torch.tensor(f).unsqueeze(0), torch.tensor(m).unsqueeze(0))[0]
            pred = logits.argmax(dim=-1).numpy()
            hit += int((pred[m] == u[m]).sum())
            n += int(m.sum())
    return hit / n if n else float("nan")


def train_fa2ua(manifest, ua: dict, cfg: FA2UAConfig = FA2UAConfig(), schedule: Schedule = Schedule(),
                out_dir=None, seed: int = 0, resume=None, val_fraction: float = 0.1,
                extra=None) -> FrontendResult:
    """Masked-prediction training of the FA-to-UA mapper.

    ``ua`` maps utterance id -> mel-rate UA ``AlignmentSequence``.  Entries
    lacking FA or UA are skipped with a warning.  Validation masks are drawn
    once from a fixed seed so the logged masked accuracy is comparable
    across epochs.
    """
    pairs, ids = [], []
    for e, pd in load_fa_entries(manifest):
        u = ua.get(e.utterance_id)
        if u is None:
            log.warning("%s: no unsupervised alignment, skipped", e.utterance_id)
            continue
        if u.n_units != cfg.n_units:
            raise ValidationError(f"{e.utterance_id}: UA has {u.n_units} units, model expects {cfg.n_units}")
        f = expand_phonemes(pd)
        if len(f) != len(u):
            raise ValidationError(f"{e.utterance_id}: FA has {len(f)} frames, UA {len(u)}")
        pairs.append((f.tokens, u.tokens))
        ids.append(e.utterance_id)
    if not pairs:
        raise ValidationError("no utterance has both FA and UA")
    tr, va = _split(len(pairs), val_fraction, np.random.default_rng(seed + 1))
    train_pairs = [pairs[i] for i in tr]
    val_pairs = [pairs[i] for i in va]
    vgen = torch.Generator().manual_seed(seed + 2)
    val_masks = [sample_mask(len(f), vgen).to_bool() for f, _ in val_pairs]
    model = _seeded(FA2UAModel, cfg, seed)

    def batch_loss(idx, gen, rng):
        fa, target, mask = _fa2ua_batch(train_pairs, idx, gen, schedule.crop_frames, rng)
        return fa2ua_loss(model(fa, mask), target, mask)

    def evaluate():
        return {"val": masked_accuracy(model, val_pairs, val_masks)}

    result = _run("fa2ua", model, cfg, schedule, len(train_pairs), batch_loss, evaluate, out_dir, seed,
                  resume, extra)
    result.split = ([ids[i] for i in tr], [ids[i] for i in va])
    return result


def load_fa2ua_model(path) -> FA2UAModel:
    ck = load_checkpoint(path, "fa2ua")
    model = FA2UAModel(FA2UAConfig(**ck["arch"]))
    model.load_state_dict(ck["params"])
    model.eval()
    return model

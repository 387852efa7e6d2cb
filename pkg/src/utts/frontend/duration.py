"""Speaker-aware phoneme duration predictor (log-frame domain)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..alignment import N_PHONES, PhonemeDurations
from ..errors import ValidationError
from .lexicon import PhonemeSequence

PH_PAD = N_PHONES


@dataclass(frozen=True)
class DurationConfig:
    d_model: int = 256
    n_heads: int = 2
    n_layers: int = 4
    conv_channels: int = 256
    conv_kernel: int = 3
    conv_layers: int = 2
    speaker_dim: int = 64

    @classmethod
    def desk(cls, **kw):
        return cls(**{"d_model": 64, "conv_channels": 64, **kw})

    def to_dict(self):
        return asdict(self)


def sinusoid_table(n, d):
    pos = torch.arange(n, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div[: d // 2])
    return pe


class AttentionBlock(nn.Module):
    def __init__(self, d, heads):
        super().__init__()
        self.attn = nn.MultiheadAttention(d, heads, batch_first=True)
        self.norm = nn.LayerNorm(d)

    def forward(self, x, pad):
        y, _ = self.attn(x, x, x, key_padding_mask=pad, need_weights=False)
        return self.norm(x + y)


class DurationModel(nn.Module):
    """Embedding -> 4 x self-attention -> (+ speaker) -> 2 x conv -> linear."""

    def __init__(self, cfg: DurationConfig = DurationConfig()):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(N_PHONES + 1, cfg.d_model, padding_idx=PH_PAD)
        self.blocks = nn.ModuleList(AttentionBlock(cfg.d_model, cfg.n_heads) for _ in range(cfg.n_layers))
        self.speaker_proj = nn.Linear(cfg.speaker_dim, cfg.d_model)
        chans = [cfg.d_model] + [cfg.conv_channels] * cfg.conv_layers
        self.convs = nn.ModuleList(nn.Conv1d(a, b, cfg.conv_kernel, padding=cfg.conv_kernel // 2)
                                   for a, b in zip(chans, chans[1:]))
        self.norms = nn.ModuleList(nn.LayerNorm(cfg.conv_channels) for _ in range(cfg.conv_layers))
        self.out = nn.Linear(cfg.conv_channels, 1)

    def forward(self, phonemes, speaker, pad=None):
        """``phonemes`` (B, N) ids, ``speaker`` (B, 64) -> (B, N) log-durations."""
        if pad is None:
            pad = phonemes == PH_PAD
        x = self.embed(phonemes)
        x = x + sinusoid_table(phonemes.shape[1], self.cfg.d_model).to(x.dtype)
        for blk in self.blocks:
            x = blk(x, pad)
        x = x + self.speaker_proj(speaker.reshape(speaker.shape[0], -1)).unsqueeze(1)
        keep = ~pad.unsqueeze(-1)
        x = x * keep
        for conv, norm in zip(self.convs, self.norms):
            # re-zero padding after every layer so batching never changes a prediction
            x = norm(F.relu(conv(x.transpose(1, 2)).transpose(1, 2))) * keep
        return self.out(x).squeeze(-1)


@torch.no_grad()
def predict_durations(ph: PhonemeSequence, speaker, model: DurationModel) -> np.ndarray:
    """Per-phoneme log-durations (log mel frames) for one utterance."""
    model.eval()
    ids = ph.ids if isinstance(ph, PhonemeSequence) else np.asarray(ph)
    if len(ids) == 0:
        raise ValidationError("empty phoneme sequence")
    dtype = model.out.weight.dtype
    spk = torch.as_tensor(np.asarray(speaker.values if hasattr(speaker, "values") else speaker), dtype=dtype)
    out = model(torch.as_tensor(ids, dtype=torch.long).unsqueeze(0), spk.reshape(1, -1))
    return out[0].double().numpy()


def durations_to_frames(logdur) -> np.ndarray:
    """Round predicted durations up to whole frames, at least one each."""
    logdur = np.asarray(logdur, dtype=np.float64)
    if not np.all(np.isfinite(logdur)):
        raise ValidationError("non-finite log-duration")
    lin = np.exp(np.minimum(logdur, 30.0))
    # absorb exp/log round-off so exact integers are not bumped up a frame
    return np.maximum(1, np.ceil(lin - 1e-9)).astype(np.int64)


def log_durations(pd: PhonemeDurations) -> np.ndarray:
    return np.log(pd.durations.astype(np.float64))


def duration_loss(pred, target, mask=None):
    """Mean squared error between predicted and target log-durations."""
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValidationError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    se = (pred - target) ** 2
    if mask is None:
        return se.mean()
    w = torch.as_tensor(mask, dtype=pred.dtype)
    return (se * w).sum() / w.sum().clamp_min(1.0)

"""Mapping from forced alignment (phones) to unsupervised alignment (units)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..alignment import FA_MASK, FA_PAD, FA_VOCAB, AlignmentSequence
from ..cdsvae.losses import mup_loss
from ..errors import ValidationError


@dataclass(frozen=True)
class FA2UAConfig:
    embed_dim: int = 256
    hidden: int = 256
    layers: int = 3
    n_units: int = 50

    @classmethod
    def desk(cls, **kw):
        return cls(**{"embed_dim": 64, "hidden": 96, **kw})

    def to_dict(self):
        return asdict(self)


class FA2UAModel(nn.Module):
    """Embedding -> 3-layer BiLSTM -> linear classifier over units."""

    def __init__(self, cfg: FA2UAConfig = FA2UAConfig()):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(FA_VOCAB, cfg.embed_dim, padding_idx=FA_PAD)
        self.lstm = nn.LSTM(cfg.embed_dim, cfg.hidden, cfg.layers, batch_first=True, bidirectional=True)
        self.classifier = nn.Linear(2 * cfg.hidden, cfg.n_units)

    def forward(self, fa_tokens, mask=None):
        """``fa_tokens`` (B, T) -> logits (B, T, n_units); masked frames read ``FA_MASK``."""
        if mask is not None:
            fa_tokens = fa_tokens.masked_fill(torch.as_tensor(mask, dtype=torch.bool), FA_MASK)
        h, _ = self.lstm(self.embed(fa_tokens))
        return self.classifier(h)


@torch.no_grad()
def fa2ua_predict(fa: AlignmentSequence, model: FA2UAModel) -> AlignmentSequence:
    """Most probable unit at every frame."""
    if fa.kind != "FA":
        raise ValidationError("fa2ua_predict expects an FA alignment")
    model.eval()
    if len(fa) == 0:
        return AlignmentSequence.ua([], model.cfg.n_units)
    logits = model(torch.tensor(fa.tokens).unsqueeze(0))[0]
    return AlignmentSequence.ua(logits.argmax(dim=-1).numpy(), model.cfg.n_units)


def fa2ua_loss(logits, ua, mask):
    """Mean NLL of the UA targets over masked frames only (0 when nothing is masked)."""
    targets = ua.tokens if isinstance(ua, AlignmentSequence) else ua
    targets = (targets if torch.is_tensor(targets) else torch.tensor(np.array(targets))).long()
    if tuple(torch.as_tensor(logits).shape[:-1]) != tuple(targets.shape):
        raise ValidationError(f"logits {tuple(logits.shape)} and UA {tuple(targets.shape)} differ in length")
    return mup_loss(logits, targets, mask)

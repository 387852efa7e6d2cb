"""Loss terms of the conditional DSVAE objective.

Reductions: KL terms sum over latent dims and average over (valid) frames
and utterances; reconstruction likewise sums squared error over mel bins
and averages over frames (a unit-variance Gaussian NLL up to constants);
masked unit prediction is the mean NLL over masked frames only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ValidationError
from .model import GaussianSeq, reparameterize

MASK_PROB = 0.08
MASK_SPAN = 10


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.01
    beta: float = 10.0
    gamma: float = 1.0
    mask_prob: float = MASK_PROB
    mask_span: int = MASK_SPAN

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")

    @classmethod
    def vanilla(cls, **kw):
        return cls(gamma=0.0, **kw)


@dataclass
class LossBreakdown:
    recon: torch.Tensor
    kld_s: torch.Tensor
    kld_c: torch.Tensor
    mup: torch.Tensor
    total: torch.Tensor
    recon_posterior: torch.Tensor | None = None
    recon_prior: torch.Tensor | None = None

    def as_dict(self):
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self) if getattr(self, f.name) is not None}


@dataclass(frozen=True)
class MaskSet:
    indices: np.ndarray
    length: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.length):
            raise ValidationError("mask indices must be strictly increasing within [0, T)")
        object.__setattr__(self, "indices", idx)

    def to_bool(self):
        m = np.zeros(self.length, dtype=bool)
        m[self.indices] = True
        return m

    def __len__(self):
        return self.indices.size


def sample_mask(T: int, generator=None, prob: float = MASK_PROB, span: int = MASK_SPAN, starts=None) -> MaskSet:
    """Span masking: every frame starts a ``span``-long span with probability ``prob``.

    Spans may overlap; their union is clipped to ``[0, T)``.  ``starts``
    overrides the random draw.
    """
    if T < 1:
        raise ValidationError("T must be >= 1")
    if starts is None:
        starts = torch.nonzero(torch.rand(T, generator=generator, dtype=torch.float64) < prob).flatten().numpy()
    m = np.zeros(T, dtype=bool)
    for s in np.asarray(starts, dtype=np.int64):
        m[s:s + span] = True
    return MaskSet(np.flatnonzero(m), T)


def _as_mask(mask, shape):
    if isinstance(mask, MaskSet):
        mask = mask.to_bool()
    return torch.as_tensor(np.asarray(mask) if not torch.is_tensor(mask) else mask, dtype=torch.bool).reshape(shape)


def kld_diag_gaussian(q: GaussianSeq, p: GaussianSeq, frame_mask=None):
    """KL(q || p) for diagonal Gaussians: summed over dims, averaged over frames."""
    if q.mean.shape != p.mean.shape:
        raise ValidationError(f"KLD shape mismatch: {tuple(q.mean.shape)} vs {tuple(p.mean.shape)}")
    var_ratio = (q.std / p.std) ** 2
    kl = 0.5 * (var_ratio + ((q.mean - p.mean) / p.std) ** 2 - 1.0 - torch.log(var_ratio))
    per_frame = kl.sum(dim=-1)
    if frame_mask is None:
        return per_frame.mean()
    w = _as_mask(frame_mask, per_frame.shape).to(per_frame.dtype)
    return (per_frame * w).sum() / w.sum().clamp_min(1.0)


def standard_normal_like(g: GaussianSeq) -> GaussianSeq:
    return GaussianSeq(torch.zeros_like(g.mean), torch.ones_like(g.std))


def mup_loss(logits, targets, mask):
    """Mean NLL of ``targets`` under ``softmax(logits)`` over masked frames; 0 if none."""
    logits = torch.as_tensor(logits)
    targets = torch.as_tensor(np.asarray(targets) if not torch.is_tensor(targets) else targets, dtype=torch.long)
    if logits.shape[:-1] != targets.shape:
        raise ValidationError(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    m = _as_mask(mask, targets.shape)
    if not m.any():
        return logits.sum() * 0.0
    sel = logits[m]
    return F.cross_entropy(sel, targets[m], reduction="mean")


def recon_error(pred, target, frame_mask=None):
    """Squared error summed over mel bins, averaged over (valid) frames."""
    se = ((pred - target) ** 2).sum(dim=-1)
    if frame_mask is None:
        return se.mean()
    w = _as_mask(frame_mask, se.shape).to(se.dtype)
    return (se * w).sum() / w.sum().clamp_min(1.0)


def _combine(cfg, recon, kld_s, kld_c, mup, **extra):
    total = recon + cfg.alpha * kld_s + cfg.beta * kld_c + cfg.gamma * mup
    return LossBreakdown(recon, kld_s, kld_c, mup, total, **extra)


def _unit_mask(model, tokens, cfg, generator, unit_mask):
    if cfg.gamma == 0 or model.prior.classifier is None:
        return None
    if unit_mask is not None:
        return _as_mask(unit_mask, tokens.shape)
    rows = [sample_mask(tokens.shape[1], generator, cfg.mask_prob, cfg.mask_span).to_bool()
            for _ in range(tokens.shape[0])]
    return torch.as_tensor(np.stack(rows))


def _forward(model, mel, tokens, cfg, generator, frame_mask, unit_mask):
    mel = mel.unsqueeze(0) if mel.dim() == 2 else mel
    mel = mel.to(model.dtype)
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    tokens = tokens.unsqueeze(0) if tokens.dim() == 1 else tokens
    if tokens.shape != mel.shape[:2]:
        raise ValidationError(f"alignment {tuple(tokens.shape)} is not frame-synchronous with mel {tuple(mel.shape)}")
    if frame_mask is not None:
        frame_mask = _as_mask(frame_mask, tokens.shape)
    umask = _unit_mask(model, tokens, cfg, generator, unit_mask)
    if umask is not None and frame_mask is not None:
        umask = umask & frame_mask

    h = model.encode_shared(mel)
    q_s = model.encode_speaker(h, frame_mask)
    q_c = model.encode_content(h)
    p_c, logits = model.encode_prior(tokens, umask)

    kld_s = kld_diag_gaussian(q_s, standard_normal_like(q_s))
    kld_c = kld_diag_gaussian(q_c, p_c, frame_mask)
    if umask is None:
        mup = mel.new_zeros(())
    else:
        mup = mup_loss(logits, tokens, umask)
    return mel, frame_mask, q_s, q_c, p_c, kld_s, kld_c, mup


def cdsvae_loss(model, mel, tokens, cfg: LossConfig = LossConfig(), generator=None,
                frame_mask=None, unit_mask=None) -> LossBreakdown:
    """recon + alpha*KLD_s + beta*KLD_c + gamma*MUP for a batch.

    ``mel`` is ``(B, T, 80)`` or ``(T, 80)``; ``tokens`` the frame-synchronous
    alignment.  With ``gamma == 0`` no frames are masked and MUP is 0.
    """
    mel, frame_mask, q_s, q_c, p_c, kld_s, kld_c, mup = _forward(
        model, mel, tokens, cfg, generator, frame_mask, unit_mask)
    zs = reparameterize(q_s, generator, "posterior_speaker")
    zc = reparameterize(q_c, generator, "posterior_content")
    recon = recon_error(model.decode(zs, zc), mel, frame_mask)
    return _combine(cfg, recon, kld_s, kld_c, mup)


def dual_recon_loss(model, mel, tokens, cfg: LossConfig = LossConfig(), generator=None,
                    frame_mask=None, unit_mask=None) -> LossBreakdown:
    """Second-round objective: reconstruction averaged over posterior and prior content.

    One noise draw is shared by the posterior and prior content samples.
    """
    mel, frame_mask, q_s, q_c, p_c, kld_s, kld_c, mup = _forward(
        model, mel, tokens, cfg, generator, frame_mask, unit_mask)
    zs = reparameterize(q_s, generator, "posterior_speaker")
    eps = torch.randn(q_c.mean.shape, generator=generator, dtype=q_c.mean.dtype)
    zcq = reparameterize(q_c, noise=eps, source="posterior_content")
    zcp = reparameterize(p_c, noise=eps, source="prior_content")
    r_q = recon_error(model.decode(zs, zcq), mel, frame_mask)
    r_p = recon_error(model.decode(zs, zcp), mel, frame_mask)
    recon = 0.5 * r_q + 0.5 * r_p
    return _combine(cfg, recon, kld_s, kld_c, mup, recon_posterior=r_q, recon_prior=r_p)


def expected_mask_fraction(prob=MASK_PROB, span=MASK_SPAN):
    """Masked fraction of an interior frame, ``1 - (1 - prob) ** span``."""
    return 1.0 - math.pow(1.0 - prob, span)

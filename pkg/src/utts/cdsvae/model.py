"""Network stacks of the conditional disentangled sequential VAE.

All modules are batch-first: mels are ``(B, T, 80)``, alignments ``(B, T)``.
Every convolution uses kernel 5, padding 2, stride 1, so time length is
preserved end to end.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from ..alignment import FA_VOCAB, N_PHONES
from ..errors import ValidationError

MIN_STD = 1e-5


@dataclass(frozen=True)
class ArchConfig:
    n_mels: int = 80
    latent_dim: int = 64
    kernel_size: int = 5
    share_channels: int = 256
    share_layers: int = 3
    speaker_hidden: int = 512
    speaker_layers: int = 2
    content_hidden: int = 512
    content_layers: int = 2
    content_rnn_hidden: int = 512
    prior_hidden: int = 512
    prior_layers: int = 2
    dec_conv_channels: int = 512
    dec_conv_layers: int = 3
    dec_lstm1_hidden: int = 512
    dec_lstm2_hidden: int = 1024
    dec_lstm2_layers: int = 2
    post_channels: int = 512
    post_layers: int = 4
    alignment_kind: str = "UA"
    n_units: int = 50
    classifier: bool = True

    @classmethod
    def table1(cls, **overrides):
        """Full-size layer widths."""
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides):
        """Same topology with narrower layers, for single-CPU experiments."""
        base = dict(share_channels=96, speaker_hidden=96, content_hidden=96, content_rnn_hidden=96,
                    prior_hidden=96, dec_conv_channels=128, dec_lstm1_hidden=128, dec_lstm2_hidden=192,
                    post_channels=96)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown architecture keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    @property
    def vocab_size(self):
        if self.alignment_kind == "FA":
            return FA_VOCAB
        return self.n_units + 1

    @property
    def mask_id(self):
        return N_PHONES if self.alignment_kind == "FA" else self.n_units


@dataclass
class GaussianSeq:
    """Diagonal Gaussian parameters, ``(..., T, D)`` or ``(..., 1, D)``."""
    mean: torch.Tensor
    std: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ValidationError(f"mean {tuple(self.mean.shape)} vs std {tuple(self.std.shape)}")

    @property
    def shape(self):
        return self.mean.shape


@dataclass
class LatentSample:
    values: torch.Tensor
    source: str  # posterior_speaker | posterior_content | prior_content


def utterance_norm(x, eps=1e-5):
    """Normalise each utterance over channels and time jointly.

    ``x`` is ``(B, C, T)``.  This is what ``InstanceNorm2d`` computes when a
    3-D batch is fed to it unbatched; unlike per-channel instance norm it
    keeps time-constant channels (the broadcast speaker code) alive.
    """
    mean = x.mean(dim=(1, 2), keepdim=True)
    var = x.var(dim=(1, 2), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


def _conv(cin, cout, k):
    return nn.Conv1d(cin, cout, k, padding=k // 2, stride=1)


class GaussianHeads(nn.Module):
    def __init__(self, din, dout):
        super().__init__()
        self.mean = nn.Linear(din, dout)
        self.std = nn.Linear(din, dout)

    def forward(self, h):
        return GaussianSeq(self.mean(h), F.softplus(self.std(h)) + MIN_STD)


class SharedEncoder(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        chans = [cfg.n_mels] + [cfg.share_channels] * cfg.share_layers
        self.convs = nn.ModuleList(_conv(a, b, cfg.kernel_size) for a, b in zip(chans, chans[1:]))

    def forward(self, mel):
        h = mel.transpose(1, 2)
        for conv in self.convs:
            h = F.relu(utterance_norm(conv(h)))
        return h.transpose(1, 2)


class SpeakerEncoder(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.lstm = nn.LSTM(cfg.share_channels, cfg.speaker_hidden, cfg.speaker_layers,
                            batch_first=True, bidirectional=True)
        self.heads = GaussianHeads(2 * cfg.speaker_hidden, cfg.latent_dim)

    def forward(self, h, frame_mask=None):
        out, _ = self.lstm(h)
        if frame_mask is None:
            pooled = out.mean(dim=1, keepdim=True)
        else:
            w = frame_mask.to(out.dtype).unsqueeze(-1)
            pooled = (out * w).sum(dim=1, keepdim=True) / w.sum(dim=1, keepdim=True).clamp_min(1.0)
        return self.heads(pooled)


class ContentEncoder(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.lstm = nn.LSTM(cfg.share_channels, cfg.content_hidden, cfg.content_layers,
                            batch_first=True, bidirectional=True)
        self.rnn = nn.RNN(2 * cfg.content_hidden, cfg.content_rnn_hidden, 1, batch_first=True)
        self.heads = GaussianHeads(cfg.content_rnn_hidden, cfg.latent_dim)

    def forward(self, h):
        out, _ = self.lstm(h)
        out, _ = self.rnn(out)
        return self.heads(out)


class PriorEncoder(nn.Module):
    """Alignment-conditioned content prior with an optional unit classifier."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.vocab_size = cfg.vocab_size
        self.lstm = nn.LSTM(cfg.vocab_size, cfg.prior_hidden, cfg.prior_layers,
                            batch_first=True, bidirectional=True)
        self.heads = GaussianHeads(2 * cfg.prior_hidden, cfg.latent_dim)
        self.classifier = nn.Linear(2 * cfg.prior_hidden, cfg.n_units if cfg.alignment_kind == "UA" else N_PHONES) \
            if cfg.classifier else None

    def forward(self, tokens):
        x = F.one_hot(tokens, self.vocab_size).to(self.lstm.weight_ih_l0.dtype)
        out, _ = self.lstm(x)
        logits = self.classifier(out) if self.classifier is not None else None
        return self.heads(out), logits


class Decoder(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        k = cfg.kernel_size
        chans = [2 * cfg.latent_dim] + [cfg.dec_conv_channels] * cfg.dec_conv_layers
        self.pre_convs = nn.ModuleList(_conv(a, b, k) for a, b in zip(chans, chans[1:]))
        self.lstm1 = nn.LSTM(cfg.dec_conv_channels, cfg.dec_lstm1_hidden, 1, batch_first=True)
        self.lstm2 = nn.LSTM(cfg.dec_lstm1_hidden, cfg.dec_lstm2_hidden, cfg.dec_lstm2_layers, batch_first=True)
        self.proj = nn.Linear(cfg.dec_lstm2_hidden, cfg.n_mels)
        pchans = [cfg.n_mels] + [cfg.post_channels] * cfg.post_layers
        self.post_convs = nn.ModuleList(_conv(a, b, k) for a, b in zip(pchans, pchans[1:]))
        self.post_out = _conv(cfg.post_channels, cfg.n_mels, k)

    def forward(self, zs, zc):
        z = torch.cat([zs.expand(-1, zc.shape[1], -1), zc], dim=-1)
        h = z.transpose(1, 2)
        for conv in self.pre_convs:
            h = F.relu(conv(utterance_norm(h)))
        h, _ = self.lstm1(h.transpose(1, 2))
        h, _ = self.lstm2(h)
        pre = self.proj(h)
        p = pre.transpose(1, 2)
        for conv in self.post_convs:
            p = utterance_norm(torch.tanh(conv(p)))
        return pre + self.post_out(p).transpose(1, 2)


def _batched(x):
    return x.unsqueeze(0) if x.dim() == 2 else x


class CDSVAE(nn.Module):
    def __init__(self, cfg: ArchConfig = ArchConfig()):
        super().__init__()
        self.cfg = cfg
        self.shared = SharedEncoder(cfg)
        self.speaker = SpeakerEncoder(cfg)
        self.content = ContentEncoder(cfg)
        self.prior = PriorEncoder(cfg)
        self.decoder = Decoder(cfg)
        # per-bin log-mel statistics; encoders see standardised input, the
        # decoder predicts standardised output that is mapped back
        self.register_buffer("mel_mean", torch.zeros(cfg.n_mels))
        self.register_buffer("mel_std", torch.ones(cfg.n_mels))

    def set_mel_stats(self, mean, std):
        with torch.no_grad():
            self.mel_mean.copy_(torch.as_tensor(mean, dtype=self.mel_mean.dtype))
            self.mel_std.copy_(torch.as_tensor(std, dtype=self.mel_std.dtype).clamp_min(1e-3))

    @property
    def dtype(self):
        return self.decoder.proj.weight.dtype

    def encode_shared(self, mel):
        mel = _batched(torch.as_tensor(mel)).to(self.dtype)
        return self.shared((mel - self.mel_mean) / self.mel_std)

    def encode_speaker(self, shared, frame_mask=None) -> GaussianSeq:
        if shared.shape[-2] == 0:
            raise ValidationError("speaker encoder needs at least one frame")
        return self.speaker(_batched(shared), frame_mask)

    def encode_content(self, shared) -> GaussianSeq:
        return self.content(_batched(shared))

    def encode_prior(self, tokens, mask=None):
        """Prior ``p(z_c | A)`` and unit logits; frames in ``mask`` see the mask symbol."""
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        tokens = tokens.unsqueeze(0) if tokens.dim() == 1 else tokens
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.cfg.vocab_size):
            raise ValidationError(f"alignment token outside [0, {self.cfg.vocab_size})")
        if mask is not None:
            mask = torch.as_tensor(mask, dtype=torch.bool).reshape(tokens.shape)
            tokens = tokens.masked_fill(mask, self.cfg.mask_id)
        return self.prior(tokens)

    def decode(self, zs, zc):
        zs = zs.values if isinstance(zs, LatentSample) else zs
        zc = zc.values if isinstance(zc, LatentSample) else zc
        zs, zc = _batched(zs), _batched(zc)
        d = self.cfg.latent_dim
        if zs.shape[-1] != d or zc.shape[-1] != d or zs.shape[-2] != 1 or zs.shape[0] != zc.shape[0]:
            raise ValidationError(f"decode expects zs (B,1,{d}) and zc (B,T,{d}); got "
                                  f"{tuple(zs.shape)} and {tuple(zc.shape)}")
        return self.decoder(zs, zc) * self.mel_std + self.mel_mean

    def posteriors(self, mel, frame_mask=None):
        h = self.encode_shared(mel)
        return self.encode_speaker(h, frame_mask), self.encode_content(h)


def reparameterize(g: GaussianSeq, generator=None, source="posterior_content", noise=None) -> LatentSample:
    """``mean + std * eps`` with ``eps ~ N(0, I)`` drawn from ``generator``."""
    if noise is None:
        noise = torch.randn(g.mean.shape, generator=generator, dtype=g.mean.dtype, device=g.mean.device)
    return LatentSample(g.mean + g.std * noise, source)


def build_model(cfg: ArchConfig, seed: int = 0, dtype=torch.float32) -> CDSVAE:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = CDSVAE(cfg)
    return model.to(dtype)

"""Conditional disentangled sequential VAE acoustic model."""

from .losses import (LossBreakdown, LossConfig, MaskSet, cdsvae_loss, dual_recon_loss,
                     kld_diag_gaussian, mup_loss, recon_error, sample_mask, standard_normal_like)
from .model import ArchConfig, CDSVAE, GaussianSeq, LatentSample, build_model, reparameterize
from .training import Schedule, TrainItem, TrainResult, load_model, train

__all__ = [
    "ArchConfig", "CDSVAE", "GaussianSeq", "LatentSample", "LossBreakdown", "LossConfig", "MaskSet",
    "Schedule", "TrainItem", "TrainResult", "build_model", "cdsvae_loss", "dual_recon_loss",
    "kld_diag_gaussian", "load_model", "mup_loss", "recon_error", "reparameterize", "sample_mask",
    "standard_normal_like", "train",
]

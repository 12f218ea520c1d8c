"""Latent-diffusion upmixer from first-order to higher-order steering vectors."""

from .bundle import ModelBundle, upmix
from .data import from_svtensor, load_pairs, reassemble, to_svtensor
from .diffusion import (Denoiser, DenoiserConfig, LatentStats, NoiseSchedule, ScheduleConfig,
                        ancestral_sample, ddpm_forward)
from .training import LdmTrainConfig, VaeTrainConfig, reconstruction_cosine, train_ldm, train_vae
from .vae import VAE, LossWeights, VaeConfig, composite_loss

__all__ = [
    "ModelBundle", "upmix", "from_svtensor", "load_pairs", "reassemble", "to_svtensor",
    "Denoiser", "DenoiserConfig", "LatentStats", "NoiseSchedule", "ScheduleConfig",
    "ancestral_sample", "ddpm_forward", "LdmTrainConfig", "VaeTrainConfig",
    "reconstruction_cosine", "train_ldm", "train_vae", "VAE", "LossWeights", "VaeConfig",
    "composite_loss",
]

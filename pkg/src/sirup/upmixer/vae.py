"""Variational autoencoder over stacked real/imag HOA steering vectors."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .layers import DilatedResBlock, groups_for, seq_to_sv, sv_to_seq


@dataclass
class VaeConfig:
    num_channels: int = 16      # M'
    num_bins: int = 256         # F~ (DC dropped)
    width: int = 32
    latent_channels: int = 8
    num_down: int = 3           # latent length = num_bins / 2**num_down
    dilations: tuple = (1, 2, 4)
    data_scale: float = 4.0     # unit-norm SV entries are ~1/sqrt(M'); rescale to O(1)

    @property
    def latent_length(self) -> int:
        return self.num_bins // 2 ** self.num_down

    @property
    def latent_shape(self) -> tuple:
        return (self.latent_channels, self.latent_length)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VaeConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "dilations" in d:
            d["dilations"] = tuple(d["dilations"])
        return cls(**d)


class Encoder(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        w = cfg.width
        self.cfg = cfg
        self.inp = nn.Conv1d(2 * cfg.num_channels, w, 3, padding=1)
        self.blocks = nn.ModuleList(DilatedResBlock(w, cfg.dilations) for _ in range(cfg.num_down))
        self.downs = nn.ModuleList(nn.Conv1d(w, w, 4, stride=2, padding=1) for _ in range(cfg.num_down))
        self.norm = nn.GroupNorm(groups_for(w), w)
        self.out = nn.Conv1d(w, 2 * cfg.latent_channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x, return_features: bool = False):
        h = self.inp(sv_to_seq(x) * self.cfg.data_scale)
        feats = []
        for block, down in zip(self.blocks, self.downs):
            h = down(block(h))
            feats.append(h)
        mean, logvar = self.out(self.act(self.norm(h))).chunk(2, dim=1)
        if return_features:
            return mean, logvar, feats
        return mean, logvar


class Decoder(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        w = cfg.width
        self.cfg = cfg
        self.inp = nn.Conv1d(cfg.latent_channels, w, 3, padding=1)
        self.blocks = nn.ModuleList(DilatedResBlock(w, cfg.dilations) for _ in range(cfg.num_down))
        self.ups = nn.ModuleList(nn.ConvTranspose1d(w, w, 4, stride=2, padding=1)
                                 for _ in range(cfg.num_down))
        self.norm = nn.GroupNorm(groups_for(w), w)
        self.out = nn.Conv1d(w, 2 * cfg.num_channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, z):
        h = self.inp(z)
        for block, up in zip(self.blocks, self.ups):
            h = block(up(h))
        h = self.out(self.act(self.norm(h)))
        return seq_to_sv(h, self.cfg.num_channels) / self.cfg.data_scale


class VAE(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def _check(self, x):
        want = (2, self.cfg.num_bins, self.cfg.num_channels)
        if tuple(x.shape[1:]) != want:
            raise ValueError(f"expected SV tensor of shape (B, {want}), got {tuple(x.shape)}")

    def encode(self, x, return_features: bool = False):
        self._check(x)
        return self.encoder(x, return_features)

    def decode(self, z):
        if tuple(z.shape[1:]) != self.cfg.latent_shape:
            raise ValueError(f"expected latent (B, {self.cfg.latent_shape}), got {tuple(z.shape)}")
        return self.decoder(z)

    def features(self, x):
        return self.encoder(x, return_features=True)[2]

    def forward(self, x, generator: torch.Generator | None = None):
        mean, logvar, feats = self.encode(x, return_features=True)
        z = sample_latent(mean, logvar, generator)
        return self.decode(z), mean, logvar


def sample_latent(mean, logvar, generator: torch.Generator | None = None):
    """Reparameterized draw ``mu + sigma * eps``."""
    eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    return mean + torch.exp(0.5 * logvar) * eps


def kl_divergence(mean, logvar):
    """Per-dimension mean of ``0.5 (mu^2 + sigma^2 - 1 - log sigma^2)``."""
    return 0.5 * torch.mean(mean ** 2 + torch.exp(logvar) - 1.0 - logvar)


def sv_cosine_loss(x_hat, x, eps: float = 1e-12):
    """Mean over (batch, frequency) of ``1 - Re<x^_f, x_f> / (|x^_f| |x_f|)``."""
    dot = torch.sum(x_hat * x, dim=(1, 3))
    n1 = torch.sqrt(torch.sum(x_hat ** 2, dim=(1, 3)) + eps)
    n2 = torch.sqrt(torch.sum(x ** 2, dim=(1, 3)) + eps)
    return torch.mean(1.0 - dot / (n1 * n2))


@dataclass
class LossWeights:
    mse: float = 1.0
    cos: float = 1.0
    feat: float = 0.1
    kl: float = 1e-4


def encoder_features(vae: VAE, x_hat, x):
    """Encoder activations of ``x_hat`` and (stop-gradient) of ``x``.

    The reconstruction path uses detached encoder weights, so the feature
    term trains the decoder and cannot be lowered by reshaping the encoder.
    """
    with torch.no_grad():
        target = vae.features(x)
    frozen = {k: v.detach() for k, v in vae.encoder.named_parameters()}
    recon = torch.func.functional_call(vae.encoder, frozen, (x_hat, True))[2]
    return recon, target


def composite_loss(x_hat, x, mean, logvar, feats=None, weights: LossWeights = LossWeights()):
    """Weighted MSE + cosine + feature matching + KL.

    Parameters
    ----------
    feats : tuple of (list, list), optional
        Intermediate activations of the reconstruction and of the target;
        the target side is detached here.
    """
    mse = torch.mean((x_hat - x) ** 2)
    cos = sv_cosine_loss(x_hat, x)
    feat = torch.zeros((), dtype=x.dtype)
    if feats is not None and weights.feat:
        for fh, ft in zip(*feats):
            feat = feat + torch.mean((fh - ft.detach()) ** 2)
    kl = kl_divergence(mean, logvar)
    total = weights.mse * mse + weights.cos * cos + weights.feat * feat + weights.kl * kl
    return total, {"mse": mse.detach(), "cos": cos.detach(), "feat": feat.detach(), "kl": kl.detach()}

"""Latent DDPM: noise schedule, forward process, strided ancestral sampler, denoiser."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .layers import CrossAttention, DilatedResBlock, groups_for, timestep_embedding


@dataclass
class ScheduleConfig:
    num_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    inference_steps: int = 200


class NoiseSchedule:
    """Linear beta schedule; ``alpha_bar[t]`` for t = 0..T with ``alpha_bar[0] = 1``."""

    def __init__(self, cfg: ScheduleConfig = ScheduleConfig()):
        self.cfg = cfg
        self.betas = np.concatenate([[0.0], np.linspace(cfg.beta_start, cfg.beta_end, cfg.num_steps)])
        self.alpha_bar = np.cumprod(1.0 - self.betas)

    @property
    def num_steps(self) -> int:
        return self.cfg.num_steps

    def inference_timesteps(self, steps: int | None = None) -> np.ndarray:
        """Descending uniform-stride subsequence ending one stride above 0."""
        steps = steps or self.cfg.inference_steps
        if self.num_steps % steps:
            raise ValueError(f"{steps} inference steps do not evenly divide {self.num_steps}")
        stride = self.num_steps // steps
        return np.arange(self.num_steps, 0, -stride)


def ddpm_forward(z0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """``z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`` for t in 0..T (per-sample t allowed)."""
    t = torch.as_tensor(t)
    if torch.any(t < 0) or torch.any(t > schedule.num_steps):
        raise ValueError(f"diffusion step outside [0, {schedule.num_steps}]")
    ab = torch.as_tensor(schedule.alpha_bar, dtype=z0.dtype)[t]
    while ab.ndim < z0.ndim:
        ab = ab[..., None]
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps


def _randn(shape, generator, dtype):
    """Normal draws; a list of generators gives each batch row its own stream."""
    if isinstance(generator, (list, tuple)):
        return torch.stack([torch.randn(shape[1:], generator=g, dtype=dtype) for g in generator])
    return torch.randn(shape, generator=generator, dtype=dtype)


@torch.no_grad()
def ancestral_sample(eps_fn, shape, schedule: NoiseSchedule, steps: int | None = None,
                     generator=None, dtype=torch.float32) -> torch.Tensor:
    """DDPM ancestral sampling on a strided step subsequence.

    Each jump ``t -> s`` uses the Gaussian posterior ``q(z_s | z_t, z0_hat)``
    of the forward process between those two steps.

    Parameters
    ----------
    eps_fn : callable ``(z_t, t_batch) -> eps_hat``
    generator : torch.Generator, list of generators (one per row) or None
    """
    ts = schedule.inference_timesteps(steps)
    ab = schedule.alpha_bar
    z = _randn(shape, generator, dtype)
    for i, t in enumerate(ts):
        s = ts[i + 1] if i + 1 < len(ts) else 0
        a_t, a_s = ab[t], ab[s]
        alpha = a_t / a_s
        beta = 1.0 - alpha
        eps = eps_fn(z, torch.full((shape[0],), int(t), dtype=torch.long))
        mean = (z - beta / np.sqrt(1.0 - a_t) * eps) / np.sqrt(alpha)
        if s > 0:
            var = (1.0 - a_s) / (1.0 - a_t) * beta
            z = mean + np.sqrt(var) * _randn(shape, generator, dtype)
        else:
            z = mean
    return z


@dataclass
class DenoiserConfig:
    latent_channels: int = 8
    latent_length: int = 32
    widths: tuple = (32, 48)
    temb_dim: int = 32
    attn_dim: int = 32
    dilations: tuple = (1, 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("widths", "dilations"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class Denoiser(nn.Module):
    """Frequency-axis 1-D UNet predicting the latent noise.

    The conditioning latent is concatenated to ``z_t`` at the input and
    attended to, as a token sequence, after every residual block.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.latent_channels
        w0 = cfg.widths[0]
        self.temb = nn.Sequential(nn.Linear(cfg.temb_dim, cfg.temb_dim), nn.SiLU(),
                                  nn.Linear(cfg.temb_dim, cfg.temb_dim))
        self.ctx_pos = nn.Parameter(torch.zeros(1, cfg.latent_length, c))
        self.inp = nn.Conv1d(2 * c, w0, 3, padding=1)

        def res(ci, co):
            return DilatedResBlock(ci, cfg.dilations, cfg.temb_dim, co)

        def attn(ch):
            return CrossAttention(ch, c, cfg.attn_dim)

        self.down_res, self.down_attn, self.downs = nn.ModuleList(), nn.ModuleList(), nn.ModuleList()
        skips = []
        ch = w0
        for i, w in enumerate(cfg.widths):
            self.down_res.append(res(ch, w))
            self.down_attn.append(attn(w))
            skips.append(w)
            ch = w
            if i + 1 < len(cfg.widths):
                self.downs.append(nn.Conv1d(ch, ch, 4, stride=2, padding=1))
        self.mid_res = res(ch, ch)
        self.mid_attn = attn(ch)
        self.up_res, self.up_attn, self.ups = nn.ModuleList(), nn.ModuleList(), nn.ModuleList()
        for i, w in reversed(list(enumerate(cfg.widths))):
            self.up_res.append(res(ch + skips[i], w))
            self.up_attn.append(attn(w))
            ch = w
            if i > 0:
                self.ups.append(nn.ConvTranspose1d(ch, ch, 4, stride=2, padding=1))
        self.norm = nn.GroupNorm(groups_for(ch), ch)
        self.out = nn.Conv1d(ch, c, 3, padding=1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        self.act = nn.SiLU()

    def forward(self, z_t, t, cond):
        emb = self.temb(timestep_embedding(t, self.cfg.temb_dim, z_t.dtype))
        ctx = cond.transpose(1, 2) + self.ctx_pos
        h = self.inp(torch.cat([z_t, cond], dim=1))
        skips = []
        for i, (r, a) in enumerate(zip(self.down_res, self.down_attn)):
            h = a(r(h, emb), ctx)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        h = self.mid_attn(self.mid_res(h, emb), ctx)
        for j, (r, a) in enumerate(zip(self.up_res, self.up_attn)):
            h = a(r(torch.cat([h, skips.pop()], dim=1), emb), ctx)
            if j < len(self.ups):
                h = self.ups[j](h)
        return self.out(self.act(self.norm(h)))


@dataclass
class LatentStats:
    """Per-latent-channel training minima and maxima."""

    minimum: np.ndarray
    maximum: np.ndarray

    @classmethod
    def fit(cls, z: np.ndarray) -> "LatentStats":
        z = np.asarray(z)
        axes = tuple(i for i in range(z.ndim) if i != 1)
        return cls(z.min(axis=axes).astype(np.float32), z.max(axis=axes).astype(np.float32))

    def _affine(self):
        lo = self.minimum.astype(np.float64)
        hi = self.maximum.astype(np.float64)
        span = hi - lo
        degenerate = span <= 0
        center = 0.5 * (hi + lo)
        half = np.where(degenerate, 1.0, 0.5 * span)
        return center, half, degenerate

    @property
    def degenerate(self) -> np.ndarray:
        return self._affine()[2]

    def scale(self, z):
        """Map training [min, max] to [-1, 1]; degenerate channels shift by their constant."""
        center, half, _ = self._affine()
        return _apply(z, lambda v, c, h: (v - c) / h, center, half)

    def unscale(self, z):
        center, half, _ = self._affine()
        return _apply(z, lambda v, c, h: v * h + c, center, half)


def _apply(z, fn, center, half):
    shape = (1, -1) + (1,) * (z.ndim - 2)
    if isinstance(z, torch.Tensor):
        c = torch.as_tensor(center, dtype=z.dtype).reshape(shape)
        h = torch.as_tensor(half, dtype=z.dtype).reshape(shape)
    else:
        c = center.reshape(shape)
        h = half.reshape(shape)
    return fn(z, c, h)

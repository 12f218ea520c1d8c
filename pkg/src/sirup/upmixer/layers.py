"""Frequency-axis convolution building blocks."""

from __future__ import annotations

import math

import torch
from torch import nn


def groups_for(channels: int) -> int:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


def sv_to_seq(x: torch.Tensor) -> torch.Tensor:
    """``(B, 2, F, M)`` -> ``(B, 2M, F)`` with channels ordered (re_0..re_M, im_0..im_M)."""
    b, two, f, m = x.shape
    return x.permute(0, 1, 3, 2).reshape(b, two * m, f)


def seq_to_sv(x: torch.Tensor, m: int) -> torch.Tensor:
    b, c, f = x.shape
    return x.reshape(b, 2, m, f).permute(0, 1, 3, 2)


class DilatedResBlock(nn.Module):
    """Residual stack of 3-tap convolutions with dilations along frequency."""

    def __init__(self, channels: int, dilations=(1, 2, 4), temb_dim: int | None = None,
                 out_channels: int | None = None):
        super().__init__()
        out_channels = out_channels or channels
        self.skip = nn.Identity() if out_channels == channels else nn.Conv1d(channels, out_channels, 1)
        self.norms = nn.ModuleList()
        self.convs = nn.ModuleList()
        c_in = channels
        for d in dilations:
            self.norms.append(nn.GroupNorm(groups_for(c_in), c_in))
            self.convs.append(nn.Conv1d(c_in, out_channels, 3, padding=d, dilation=d))
            c_in = out_channels
        self.temb = nn.Linear(temb_dim, out_channels) if temb_dim else None
        self.act = nn.SiLU()

    def forward(self, x, temb=None):
        h = x
        for i, (norm, conv) in enumerate(zip(self.norms, self.convs)):
            h = conv(self.act(norm(h)))
            if i == 0 and self.temb is not None:
                h = h + self.temb(temb)[:, :, None]
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Single-head attention from feature positions to conditioning tokens."""

    def __init__(self, channels: int, context_dim: int, dim: int = 32):
        super().__init__()
        self.norm = nn.GroupNorm(groups_for(channels), channels)
        self.q = nn.Linear(channels, dim, bias=False)
        self.k = nn.Linear(context_dim, dim, bias=False)
        self.v = nn.Linear(context_dim, dim, bias=False)
        self.out = nn.Linear(dim, channels)
        self.scale = 1.0 / math.sqrt(dim)

    def forward(self, x, context):
        # x: (B, C, L), context: (B, N, D)
        h = self.norm(x).transpose(1, 2)
        q, k, v = self.q(h), self.k(context), self.v(context)
        w = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        return x + self.out(w @ v).transpose(1, 2)


def timestep_embedding(t: torch.Tensor, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal embedding of integer diffusion steps, shape ``(B, dim)``."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    return emb.to(dtype)

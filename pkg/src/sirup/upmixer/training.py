"""Two-stage VAE training and latent-diffusion training loops."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .diffusion import Denoiser, DenoiserConfig, LatentStats, NoiseSchedule, ScheduleConfig, ddpm_forward
from .vae import VAE, LossWeights, VaeConfig, composite_loss, encoder_features, sv_cosine_loss

log = logging.getLogger(__name__)


@dataclass
class VaeTrainConfig:
    vae: VaeConfig = field(default_factory=VaeConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    epochs: int = 40
    finetune_epochs: int = 20
    lr: float = 3e-4
    weight_decay: float = 1e-2
    gamma: float = 0.95
    batch_size: int = 16
    shards: int = 1
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vae"] = self.vae.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VaeTrainConfig":
        d = dict(d)
        vae = VaeConfig.from_dict(d.pop("vae", {}))
        weights = LossWeights(**d.pop("weights", {}))
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(vae=vae, weights=weights, **d)


@dataclass
class LdmTrainConfig:
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    epochs: int = 100
    lr: float = 3e-4
    weight_decay: float = 1e-2
    batch_size: int = 16
    shards: int = 1
    ema_decay: float = 0.999
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["denoiser"] = self.denoiser.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LdmTrainConfig":
        d = dict(d)
        den = DenoiserConfig.from_dict(d.pop("denoiser", {}))
        sched = ScheduleConfig(**d.pop("schedule", {}))
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(denoiser=den, schedule=sched, **d)


def write_history(history: list[dict], path) -> None:
    """Per-epoch loss log as CSV."""
    if not history:
        return
    keys = list(history[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})


def _batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _shard_step(opt, params, idx, shards: int, loss_fn):
    """Accumulate gradients over a fixed shard order, then take one step.

    Each shard's loss is weighted by its share of the batch, so the summed
    gradient equals the full-batch gradient.
    """
    opt.zero_grad(set_to_none=True)
    parts = [p for p in torch.tensor_split(idx, max(1, shards)) if p.numel()]
    total = 0.0
    extras = []
    for part in parts:
        loss, extra = loss_fn(part)
        (loss * (part.numel() / idx.numel())).backward()
        total += float(loss.detach()) * part.numel() / idx.numel()
        extras.append((extra, part.numel() / idx.numel()))
    opt.step()
    merged = {}
    for extra, w in extras:
        for k, v in extra.items():
            merged[k] = merged.get(k, 0.0) + float(v) * w
    return total, merged


def reconstruction_cosine(vae: VAE, x: torch.Tensor, batch_size: int = 64) -> float:
    """Mean per-bin cosine similarity of ``D(mean E(x))`` against ``x``."""
    vals = []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            xb = x[i:i + batch_size]
            mean, _ = vae.encode(xb)
            vals.append((1.0 - float(sv_cosine_loss(vae.decode(mean), xb))) * xb.shape[0])
    return float(np.sum(vals) / x.shape[0])


def _check_data(x, name="dataset"):
    if x is None or len(x) == 0:
        raise ValueError(f"{name} is empty")


def train_vae(targets: np.ndarray, cfg: VaeTrainConfig = VaeTrainConfig(),
              validation: np.ndarray | None = None):
    """Stage 1: full VAE on the composite loss. Stage 2: decoder-only fine-tune.

    Parameters
    ----------
    targets : ndarray (N, 2, F, M')
        HOA SvTensor training data.
    validation : ndarray, optional
        Held-out SvTensors for the per-epoch validation cosine.

    Returns
    -------
    vae : VAE
    history : list of dict
        One row per epoch across both stages.
    """
    _check_data(targets)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    vae = VAE(cfg.vae)
    x = torch.as_tensor(np.asarray(targets, dtype=np.float32))
    xv = None if validation is None else torch.as_tensor(np.asarray(validation, dtype=np.float32))
    history = []

    def record(stage, epoch, loss, parts, lr):
        row = {"stage": stage, "epoch": epoch, "loss": loss, **parts, "lr": lr,
               "train_cos": reconstruction_cosine(vae, x)}
        if xv is not None:
            row["val_cos"] = reconstruction_cosine(vae, xv)
        history.append(row)
        log.info("vae epoch", extra={"fields": row})

    opt = torch.optim.AdamW(vae.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)

    def stage1_loss(part):
        xb = x[part]
        x_hat, mean, logvar = vae(xb, gen)
        feats = encoder_features(vae, x_hat, xb) if cfg.weights.feat else None
        return composite_loss(x_hat, xb, mean, logvar, feats, cfg.weights)

    for epoch in range(1, cfg.epochs + 1):
        vae.train()
        sums, count = {}, 0
        for idx in _batches(len(x), cfg.batch_size, gen):
            loss, parts = _shard_step(opt, vae.parameters(), idx, cfg.shards, stage1_loss)
            for k, v in {"loss": loss, **parts}.items():
                sums[k] = sums.get(k, 0.0) + v * idx.numel()
            count += idx.numel()
        avg = {k: v / count for k, v in sums.items()}
        record(1, epoch, avg.pop("loss"), avg, cfg.lr)

    for p in vae.encoder.parameters():
        p.requires_grad_(False)
    dec_params = list(vae.decoder.parameters())
    opt = torch.optim.AdamW(dec_params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.gamma)

    def stage2_loss(part):
        xb = x[part]
        with torch.no_grad():
            mean, _ = vae.encode(xb)
        x_hat = vae.decode(mean)
        mse = torch.mean((x_hat - xb) ** 2)
        cos = sv_cosine_loss(x_hat, xb)
        return cfg.weights.mse * mse + cfg.weights.cos * cos, {"mse": mse.detach(), "cos": cos.detach()}

    for epoch in range(1, cfg.finetune_epochs + 1):
        lr = opt.param_groups[0]["lr"]
        sums, count = {}, 0
        for idx in _batches(len(x), cfg.batch_size, gen):
            loss, parts = _shard_step(opt, dec_params, idx, cfg.shards, stage2_loss)
            for k, v in {"loss": loss, **parts}.items():
                sums[k] = sums.get(k, 0.0) + v * idx.numel()
            count += idx.numel()
        sched.step()
        avg = {k: v / count for k, v in sums.items()}
        record(2, epoch, avg.pop("loss"), {"feat": 0.0, "kl": 0.0, **avg}, lr)
    vae.eval()
    return vae, history


def encode_mean(vae: VAE, x: np.ndarray, batch_size: int = 64) -> torch.Tensor:
    """Latent means of a batch of SvTensors with the (frozen) encoder."""
    x = torch.as_tensor(np.asarray(x, dtype=np.float32))
    out = []
    with torch.no_grad():
        for i in range(0, x.shape[0], batch_size):
            out.append(vae.encode(x[i:i + batch_size])[0])
    return torch.cat(out)


def train_ldm(vae: VAE | None, conditions: np.ndarray, targets: np.ndarray,
              cfg: LdmTrainConfig = LdmTrainConfig()):
    """Epsilon-prediction training of the latent denoiser.

    Targets and conditions are encoded once by the frozen encoder (latent
    means), then scaled per channel to [-1, 1] using the target statistics.

    Returns
    -------
    denoiser : Denoiser
    stats : LatentStats
    history : list of dict
        Row ``epoch = 0`` is the loss of the untrained network.

    With ``ema_decay > 0`` the returned network holds the exponential moving
    average of the trained weights.
    """
    if vae is None:
        raise ValueError("a trained VAE is required before latent diffusion training")
    _check_data(targets)
    if len(conditions) != len(targets):
        raise ValueError("conditions and targets differ in count")
    for p in vae.parameters():
        p.requires_grad_(False)
    vae.eval()
    z0 = encode_mean(vae, targets)
    zc = encode_mean(vae, conditions)
    stats = LatentStats.fit(z0.numpy())
    z0 = stats.scale(z0)
    zc = stats.scale(zc)

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    den_cfg = DenoiserConfig.from_dict({**cfg.denoiser.to_dict(),
                                        "latent_channels": z0.shape[1],
                                        "latent_length": z0.shape[2]})
    net = Denoiser(den_cfg)
    schedule = NoiseSchedule(cfg.schedule)
    opt = torch.optim.AdamW(net.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    ema = copy.deepcopy(net) if cfg.ema_decay else None
    step = 0
    history = []

    def loss_on(part, generator):
        zb, cb = z0[part], zc[part]
        t = torch.randint(1, schedule.num_steps + 1, (part.numel(),), generator=generator)
        eps = torch.randn(zb.shape, generator=generator)
        zt = ddpm_forward(zb, t, eps, schedule)
        return torch.mean((net(zt, t, cb) - eps) ** 2), {}

    with torch.no_grad():
        probe = torch.Generator().manual_seed(cfg.seed + 1)
        init = sum(float(loss_on(idx, probe)[0]) * idx.numel()
                   for idx in _batches(len(z0), cfg.batch_size, probe)) / len(z0)
    history.append({"epoch": 0, "loss": init})

    for epoch in range(1, cfg.epochs + 1):
        net.train()
        total, count = 0.0, 0
        for idx in _batches(len(z0), cfg.batch_size, gen):
            loss, _ = _shard_step(opt, net.parameters(), idx, cfg.shards, lambda p: loss_on(p, gen))
            if ema is not None:
                step += 1
                decay = min(cfg.ema_decay, (1.0 + step) / (10.0 + step))
                with torch.no_grad():
                    for pe, pn in zip(ema.parameters(), net.parameters()):
                        pe.lerp_(pn, 1.0 - decay)
            total += loss * idx.numel()
            count += idx.numel()
        history.append({"epoch": epoch, "loss": total / count})
        log.info("ldm epoch", extra={"fields": history[-1]})
    if ema is not None:
        net = ema
    net.eval()
    return net, stats, history

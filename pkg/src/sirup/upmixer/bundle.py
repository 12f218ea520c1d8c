"""Model bundle persistence and conditional upmixing inference."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..estimation import ConditioningTensor
from ..geometry import SteeringVectorSet
from ..tensorfile import TensorFile, read_tensor, write_tensor
from .data import reassemble, to_svtensor
from .diffusion import Denoiser, DenoiserConfig, LatentStats, NoiseSchedule, ScheduleConfig, ancestral_sample
from .vae import VAE, VaeConfig

BUNDLE_FORMAT = "sirup-model-bundle"


@dataclass
class ModelBundle:
    vae: VAE
    denoiser: Denoiser | None = None
    stats: LatentStats | None = None
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    manifest: dict = field(default_factory=dict)

    @property
    def num_channels(self) -> int:
        return self.vae.cfg.num_channels

    @property
    def has_denoiser(self) -> bool:
        return self.denoiser is not None

    def modules(self) -> dict:
        mods = {"vae": self.vae}
        if self.denoiser is not None:
            mods["denoiser"] = self.denoiser
        return mods

    def _layout(self):
        layout, chunks, offset = [], [], 0
        for prefix, mod in self.modules().items():
            for name, tensor in mod.state_dict().items():
                arr = tensor.detach().cpu().numpy().astype(np.float32).ravel()
                layout.append({"name": f"{prefix}.{name}", "shape": list(tensor.shape),
                               "offset": offset, "size": int(arr.size)})
                chunks.append(arr)
                offset += arr.size
        return layout, np.concatenate(chunks)

    def parameter_count(self) -> dict:
        return {k: sum(p.numel() for p in m.parameters()) for k, m in self.modules().items()}

    def save(self, path) -> None:
        """One flat float32 TensorFile; architecture and layout in its metadata."""
        layout, flat = self._layout()
        meta = {
            "format": BUNDLE_FORMAT,
            "vae_config": self.vae.cfg.to_dict(),
            "denoiser_config": self.denoiser.cfg.to_dict() if self.denoiser is not None else None,
            "schedule": vars(self.schedule).copy(),
            "latent_stats": None if self.stats is None else {
                "minimum": [float(v) for v in self.stats.minimum],
                "maximum": [float(v) for v in self.stats.maximum]},
            "layout": layout,
            "manifest": self.manifest,
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        write_tensor(TensorFile(flat, meta), path)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        tf = read_tensor(path)
        meta = tf.metadata
        if meta.get("format") != BUNDLE_FORMAT:
            raise ValueError(f"{path} is not a model bundle")
        vae = VAE(VaeConfig.from_dict(meta["vae_config"]))
        den = None
        if meta.get("denoiser_config") is not None:
            den = Denoiser(DenoiserConfig.from_dict(meta["denoiser_config"]))
        flat = np.asarray(tf.data, dtype=np.float32)
        states = {"vae": {}, "denoiser": {}}
        for entry in meta["layout"]:
            prefix, name = entry["name"].split(".", 1)
            seg = flat[entry["offset"]:entry["offset"] + entry["size"]]
            states[prefix][name] = torch.from_numpy(seg.reshape(entry["shape"]).copy())
        vae.load_state_dict(states["vae"])
        vae.eval()
        if den is not None:
            den.load_state_dict(states["denoiser"])
            den.eval()
        stats = None
        if meta.get("latent_stats") is not None:
            stats = LatentStats(np.asarray(meta["latent_stats"]["minimum"], dtype=np.float32),
                                np.asarray(meta["latent_stats"]["maximum"], dtype=np.float32))
        return cls(vae, den, stats, ScheduleConfig(**meta["schedule"]), meta.get("manifest", {}))


def upmix(condition: ConditioningTensor, bundle: ModelBundle, steps: int = 200,
          seed: int = 0) -> SteeringVectorSet:
    """Sample HOA steering vectors conditioned on a zero-padded FOA condition.

    Raises
    ------
    ValueError
        If the bundle lacks a denoiser, or the condition or latent
        statistics do not match it.
    """
    if not bundle.has_denoiser or bundle.stats is None:
        raise ValueError("model bundle has no trained denoiser")
    x = to_svtensor(condition.data)
    cfg = bundle.vae.cfg
    if x.shape != (2, cfg.num_bins, cfg.num_channels):
        raise ValueError(f"condition shape {tuple(condition.data.shape)} does not match bundle "
                         f"({cfg.num_bins + 1} bins x {cfg.num_channels} channels)")
    if bundle.stats.minimum.shape != (cfg.latent_channels,):
        raise ValueError("latent statistics do not match the latent channel count")
    schedule = NoiseSchedule(bundle.schedule)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        cond = bundle.stats.scale(bundle.vae.encode(torch.from_numpy(x)[None])[0])
        z = ancestral_sample(lambda zt, t: bundle.denoiser(zt, t, cond),
                             (1,) + cfg.latent_shape, schedule, steps, gen)
        out = bundle.vae.decode(bundle.stats.unscale(z))[0].numpy()
    return reassemble(out, condition)

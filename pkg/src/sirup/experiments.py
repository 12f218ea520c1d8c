"""Experiment protocols, per-scene evaluation and result tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .beamforming import beam_metrics, beamform_signal, beampattern, bss_eval, make_beamformer
from .estimation import estimate_pair, make_condition
from .geometry import AmbisonicSpec, Direction, ambisonic_algebraic_sv, truncate_order
from .localization import DoaGrid, angular_error, pick_peak, srp_map
from .parallel import ordered_map
from .room import DatasetProtocol, render_scene, sample_scene, scene_windows

PROTOCOL_DEFAULTS = {
    "d_snr": {"kind": "single_source", "rt60_range": (0.2, 0.2), "snr_range": (5.0, 20.0)},
    "d_rt60": {"kind": "single_source", "rt60_range": (0.2, 0.7), "snr_range": (20.0, 20.0)},
    # light-reverb acoustics shared by the toy upmixer and the enhancement comparison
    "toy_manifold": {"kind": "single_source", "rt60_range": (0.12, 0.18), "snr_range": (30.0, 30.0),
                     "max_ism_order": 1, "center_jitter": 0.0, "distance_range": (1.5, 1.5),
                     "source_duration": 2.0, "onset_delay": 0.0},
    "se_two_source": {"kind": "two_source", "rt60_range": (0.12, 0.18), "snr_range": (30.0, 30.0),
                      "max_ism_order": 1, "center_jitter": 0.0, "distance_range": (1.5, 1.5),
                      "source_duration": 2.0, "onset_delay": 2.0, "min_separation_deg": 30.0},
}

LOCALIZATION_METRICS = ("angular_error_deg", "di_db", "bw3_deg", "sl_db")
SEPARATION_METRICS = ("sdr_db", "sir_db", "sar_db")
SE_VARIANTS = ("SV-FOA", "SV-SIRUP-M", "SV-alg-FOA", "SV-alg-SIRUP")


@dataclass
class ExperimentConfig:
    protocol: str = "d_rt60"
    num_scenes: int = 30
    seed: int = 0
    snr_range_db: tuple | None = None
    rt60_range_s: tuple | None = None
    azimuths_deg: list | None = None
    model_bundle: str | None = None
    grid_elevation_deg: float = 28.0
    grid_step_deg: float = 1.0
    inference_steps: int = 200
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in PROTOCOL_DEFAULTS:
            raise ValueError(f"unknown protocol {self.protocol!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in ("snr_range_db", "rt60_range_s"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def dataset_protocol(self) -> DatasetProtocol:
        params = dict(PROTOCOL_DEFAULTS[self.protocol])
        params.update(count=self.num_scenes, seed=self.seed)
        if self.snr_range_db is not None:
            params["snr_range"] = tuple(self.snr_range_db)
        if self.rt60_range_s is not None:
            params["rt60_range"] = tuple(self.rt60_range_s)
        if self.azimuths_deg is not None:
            params["azimuths_deg"] = list(self.azimuths_deg)
        params.update(self.overrides)
        return DatasetProtocol.from_dict(params)

    def grid(self) -> DoaGrid:
        return DoaGrid.azimuth_ring(self.grid_elevation_deg, self.grid_step_deg)


@dataclass
class ResultRecord:
    scene: int
    condition: str
    metrics: dict
    seeds: dict
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def upmix_seed(base_seed: int, index: int, source: int = 0) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index), 1, int(source)]).generate_state(1)[0])


def held_out_azimuths(count: int = 32, offset_deg: float | None = None) -> list:
    """Evenly spaced ring azimuths, offset by half a spacing from 0 deg."""
    step = 360.0 / count
    off = step / 2 if offset_deg is None else offset_deg
    return [float(off + k * step) for k in range(count)]


def _load_bundle(path):
    if path is None:
        return None
    from .upmixer import ModelBundle

    return ModelBundle.load(path)


def _direction_metrics(sv, truth: Direction, grid: DoaGrid):
    srp = srp_map(sv, grid)
    est = pick_peak(srp)
    pattern = beampattern(make_beamformer(sv), grid)
    m = beam_metrics(pattern, int(np.argmax(pattern)), grid.step_deg)
    metrics = {"angular_error_deg": angular_error(est, truth), "di_db": m.di_db,
               "bw3_deg": m.bw3_deg, "sl_db": m.sl_db,
               "est_azimuth_deg": float(np.rad2deg(est.azimuth))}
    return metrics, {"sl_defined": m.sl_defined}, srp


def _localization_scene(args):
    cfg, index, bundle_path = args
    protocol = cfg.dataset_protocol()
    params = sample_scene(protocol, index)
    scene = render_scene(protocol, params)
    window = scene_windows(protocol, scene)[0]
    foa, hoa = estimate_pair(scene.mixture, window, protocol)
    truth = scene.true_doas[0]
    grid = cfg.grid()
    seeds = {"scene": params.seed}
    svs = [("FOA", foa)]
    bundle = _load_bundle(bundle_path)
    if bundle is not None:
        from .upmixer import upmix

        seeds["upmix"] = upmix_seed(cfg.seed, index)
        up = upmix(make_condition(foa, bundle.num_channels), bundle, cfg.inference_steps,
                   seeds["upmix"])
        svs.append(("Upmixed", up))
    svs.append(("HOA", hoa))
    records, maps = [], {}
    for name, sv in svs:
        metrics, flags, srp = _direction_metrics(sv, truth, grid)
        metrics["true_azimuth_deg"] = float(np.rad2deg(truth.azimuth))
        records.append(ResultRecord(index, name, metrics, dict(seeds), flags))
        maps[name] = srp.scores
    return records, maps


def run_localization(cfg: ExperimentConfig, workers: int = 1):
    """Per-scene SRP localization and beampattern metrics for FOA, Upmixed and HOA.

    Returns
    -------
    records : list of ResultRecord
        Ordered by scene, then condition.
    maps : list of dict
        Per-scene SRP scores on ``cfg.grid()`` keyed by condition.
    """
    jobs = [(cfg, i, cfg.model_bundle) for i in range(cfg.num_scenes)]
    results = ordered_map(_localization_scene, jobs, workers)
    records = [r for recs, _ in results for r in recs]
    return records, [m for _, m in results]


def _foa_algebraic(direction: Direction, num_bins: int):
    return ambisonic_algebraic_sv(direction, AmbisonicSpec(1), num_bins)


def _se_scene(args):
    cfg, index, bundle_path = args
    protocol = cfg.dataset_protocol()
    if protocol.kind != "two_source":
        raise ValueError("the enhancement comparison needs a two-source protocol")
    bundle = _load_bundle(bundle_path)
    if bundle is None:
        raise ValueError("the enhancement comparison needs a model bundle")
    from .upmixer import upmix

    params = sample_scene(protocol, index)
    scene = render_scene(protocol, params)
    n_foa = (protocol.foa_order + 1) ** 2
    foa_mix = scene.mixture.channels(slice(0, n_foa))
    refs = np.stack([img.samples[0] for img in scene.per_source_images])
    grid = cfg.grid()
    hoa_grid = cfg.grid()
    weights = {v: [] for v in SE_VARIANTS}
    seeds = {"scene": params.seed, "upmix": []}
    doas = {"SV-alg-FOA": [], "SV-alg-SIRUP": []}
    for k, window in enumerate(scene_windows(protocol, scene)):
        foa, _ = estimate_pair(scene.mixture, window, protocol)
        s = upmix_seed(cfg.seed, index, k)
        seeds["upmix"].append(s)
        up = upmix(make_condition(foa, bundle.num_channels), bundle, cfg.inference_steps, s)
        doa_foa = pick_peak(srp_map(foa, grid))
        doa_up = pick_peak(srp_map(up, hoa_grid))
        doas["SV-alg-FOA"].append(float(np.rad2deg(doa_foa.azimuth)))
        doas["SV-alg-SIRUP"].append(float(np.rad2deg(doa_up.azimuth)))
        f = foa.num_bins
        weights["SV-FOA"].append(make_beamformer(foa))
        weights["SV-SIRUP-M"].append(make_beamformer(truncate_order(up, protocol.foa_order),
                                                     "measured"))
        weights["SV-alg-FOA"].append(make_beamformer(_foa_algebraic(doa_foa, f)))
        weights["SV-alg-SIRUP"].append(make_beamformer(_foa_algebraic(doa_up, f)))
    records = []
    for variant in SE_VARIANTS:
        est = [beamform_signal(bf, foa_mix, protocol.frame_size, protocol.hop, protocol.window)
               for bf in weights[variant]]
        scores = bss_eval(est, refs)
        metrics = {"sdr_db": float(np.mean(scores.sdr_db)), "sir_db": float(np.mean(scores.sir_db)),
                   "sar_db": float(np.mean(scores.sar_db)), "per_source": scores.as_dict()}
        if variant in doas:
            metrics["doa_deg"] = doas[variant]
        metrics["true_azimuths_deg"] = list(params.azimuths_deg)
        records.append(ResultRecord(index, variant, metrics, dict(seeds)))
    return records


def compare_sv_models(cfg: ExperimentConfig, workers: int = 1) -> list:
    """Beamform two-source scenes with four steering-vector variants and score with bss_eval.

    Variants: measured FOA SVs; upmixed SVs truncated to first order;
    first-order plane-wave SVs at the FOA-SRP DOA; and at the upmixed-SRP DOA.
    References are the omnidirectional (W) channel images of each source.
    """
    jobs = [(cfg, i, cfg.model_bundle) for i in range(cfg.num_scenes)]
    return [r for recs in ordered_map(_se_scene, jobs, workers) for r in recs]


def aggregate(records: list, metrics=LOCALIZATION_METRICS) -> dict:
    """Mean and population standard deviation per (condition, metric).

    Conditions keep their first-appearance order.
    """
    conditions = list(dict.fromkeys(r.condition for r in records))
    table = {}
    for cond in conditions:
        rows = [r for r in records if r.condition == cond]
        table[cond] = {}
        for m in metrics:
            vals = np.array([r.metrics[m] for r in rows], dtype=float)
            table[cond][m] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                              "n": int(vals.size)}
    return table


def write_table(table: dict, out: Path, stem: str = "table") -> None:
    """``stem.json`` (full precision) and ``stem.csv`` (metric rows x condition columns)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    conditions = list(table)
    metrics = list(next(iter(table.values()))) if table else []
    with (out / f"{stem}.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + [f"{c}_{s}" for c in conditions for s in ("mean", "std")])
        for m in metrics:
            w.writerow([m] + [repr(table[c][m][s]) for c in conditions for s in ("mean", "std")])
    with (out / f"{stem}_formatted.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + conditions)
        for m in metrics:
            w.writerow([m] + [f"{table[c][m]['mean']:.2f} ± {table[c][m]['std']:.2f}"
                              for c in conditions])


def write_records(records: list, out: Path, stem: str = "records") -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / f"{stem}.jsonl").open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path) -> list:
    recs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        d = json.loads(line)
        recs.append(ResultRecord(d["scene"], d["condition"], d["metrics"], d["seeds"], d.get("flags", {})))
    return recs


def write_srp_maps(maps: list, grid: DoaGrid, out: Path) -> None:
    """One CSV per condition: rows are scenes, columns grid azimuths (heatmap layout)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    conditions = list(dict.fromkeys(c for m in maps for c in m))
    for cond in conditions:
        with (out / f"srp_{cond.lower()}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scene"] + [f"{a:.6g}" for a in grid.azimuth_deg])
            for i, m in enumerate(maps):
                if cond in m:
                    w.writerow([i] + [repr(float(v)) for v in m[cond]])


def train_vae_bundle(dataset_dir, cfg, validation_dir=None, target: str = "hoa"):
    """Train the VAE on a pair dataset; returns a VAE-only bundle and the epoch log."""
    from .upmixer import ModelBundle, load_pairs, train_vae
    from .upmixer.data import dataset_hash

    cond, tgt, _ = load_pairs(dataset_dir, target)
    val = None
    if validation_dir is not None:
        val = load_pairs(validation_dir, target)[1]
    vae, history = train_vae(tgt, cfg, validation=val)
    manifest = {"dataset_hash": dataset_hash(cond, tgt), "vae_training": cfg.to_dict(),
                "target": target, "num_pairs": int(len(tgt))}
    return ModelBundle(vae, manifest=manifest), history


def train_ldm_bundle(dataset_dir, vae_bundle, cfg, target: str = "hoa"):
    """Train the latent denoiser against a frozen VAE bundle."""
    from .upmixer import ModelBundle, load_pairs, train_ldm
    from .upmixer.data import dataset_hash

    if vae_bundle is None:
        raise ValueError("a trained VAE bundle is required before latent diffusion training")
    cond, tgt, _ = load_pairs(dataset_dir, target)
    net, stats, history = train_ldm(vae_bundle.vae, cond, tgt, cfg)
    manifest = dict(vae_bundle.manifest)
    manifest.update({"ldm_dataset_hash": dataset_hash(cond, tgt), "ldm_training": cfg.to_dict()})
    return ModelBundle(vae_bundle.vae, net, stats, cfg.schedule, manifest), history

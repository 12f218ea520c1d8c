"""Shoebox image-source simulation of ambisonic scenes and SV datasets."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .geometry import (SPEED_OF_SOUND, AmbisonicSpec, Direction, SteeringVectorSet,
                       canonicalize, sph_harmonics_matrix)
from .signal import SignalBuffer

log = logging.getLogger(__name__)

SINC_HALF_WIDTH = 40
EARLY_WINDOW_S = 0.05


@dataclass(frozen=True)
class RoomConfig:
    dimensions: tuple = (6.0, 4.0, 3.0)
    rt60: float = 0.2
    max_ism_order: int = 20
    array_center: tuple = (3.0, 2.0, 1.2)
    seed: int = 0

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        center = np.asarray(self.array_center, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError("room dimensions must be three positive lengths")
        if center.shape != (3,) or np.any(center <= 0) or np.any(center >= dims):
            raise ValueError("array center must lie strictly inside the room")
        if not 0.05 <= self.rt60 <= 2.0:
            raise ValueError(f"rt60 {self.rt60} outside [0.05, 2.0] s")
        if self.max_ism_order < 0:
            raise ValueError("max_ism_order must be non-negative")
        object.__setattr__(self, "dimensions", tuple(float(d) for d in dims))
        object.__setattr__(self, "array_center", tuple(float(c) for c in center))

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > margin) and np.all(p < np.asarray(self.dimensions) - margin))


@dataclass
class SourceSpec:
    direction: Direction
    distance: float
    signal: SignalBuffer
    onset: float = 0.0

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError("source distance must be positive")

    def position(self, room: RoomConfig) -> np.ndarray:
        return np.asarray(room.array_center) + self.distance * self.direction.unit_vector()


@dataclass
class AmbisonicScene:
    mixture: SignalBuffer
    per_source_images: list
    noise: SignalBuffer | None
    true_doas: list
    true_transfer: list
    snr_db: float
    room: RoomConfig
    rirs: list = field(default_factory=list)


def sabine_reflection(room: RoomConfig) -> float:
    """Uniform wall amplitude reflection coefficient from Sabine's formula."""
    lx, ly, lz = room.dimensions
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = 24 * np.log(10) * volume / (SPEED_OF_SOUND * surface * room.rt60)
    if alpha <= 0:
        raise ValueError("room too reverberant for geometry")
    if alpha >= 1:
        raise ValueError(f"rt60 {room.rt60} s is below the Sabine limit for this room")
    beta = np.sqrt(1 - alpha)
    if beta >= 1:
        raise ValueError("room too reverberant for geometry")
    return float(beta)


def _axis_images(src: float, length: float, max_order: int):
    """Image coordinates along one axis and their reflection counts."""
    coords, counts = [], []
    for n in range(-max_order - 1, max_order + 2):
        for q in (0, 1):
            k = abs(n - q) + abs(n)
            if k <= max_order:
                coords.append((1 - 2 * q) * src + 2 * n * length)
                counts.append(k)
    return np.array(coords), np.array(counts)


def image_sources(room: RoomConfig, src_pos, max_order: int | None = None):
    """Enumerate shoebox image sources up to a total reflection order.

    Returns
    -------
    positions : ndarray (I, 3)
    orders : ndarray (I,)
    """
    k = room.max_ism_order if max_order is None else max_order
    axes = [_axis_images(s, length, k) for s, length in zip(src_pos, room.dimensions)]
    (x, cx), (y, cy), (z, cz) = axes
    order = cx[:, None, None] + cy[None, :, None] + cz[None, None, :]
    keep = order <= k
    ix, iy, iz = np.nonzero(keep)
    pos = np.stack([x[ix], y[iy], z[iz]], axis=1)
    return pos, order[keep]


def ism_ambisonic_rir(room: RoomConfig, src_pos, spec: AmbisonicSpec,
                      sample_rate: int = 16000) -> SignalBuffer:
    """Ambisonic RIR at the array center as a sum of encoded image sources.

    Each image contributes ``beta**order / (4 pi d) * y(theta_i)`` delayed by
    ``d / c`` through a Hann-windowed sinc fractional delay.
    """
    src_pos = np.asarray(src_pos, dtype=float)
    if not room.contains(src_pos):
        raise ValueError(f"source {src_pos} outside room")
    beta = sabine_reflection(room) if room.max_ism_order > 0 else 0.0
    pos, orders = image_sources(room, src_pos)
    rel = pos - np.asarray(room.array_center)
    dist = np.linalg.norm(rel, axis=1)
    gain = beta ** orders / (4 * np.pi * dist)
    azi = np.arctan2(rel[:, 1], rel[:, 0])
    ele = np.arcsin(np.clip(rel[:, 2] / dist, -1, 1))
    enc = sph_harmonics_matrix(azi, ele, spec.order, spec.normalization)

    delay = dist / SPEED_OF_SOUND * sample_rate
    offs = np.arange(-SINC_HALF_WIDTH, SINC_HALF_WIDTH + 1)
    taps = np.floor(delay).astype(int)[:, None] + offs[None, :]
    frac = taps - delay[:, None]
    window = 0.5 * (1 + np.cos(np.pi * frac / (SINC_HALF_WIDTH + 1)))
    h = gain[:, None] * np.sinc(frac) * window
    length = int(taps.max()) + 1
    idx = taps.ravel()
    valid = idx >= 0
    rir = np.empty((spec.channel_count, length))
    for ch in range(spec.channel_count):
        w = (h * enc[:, ch][:, None]).ravel()
        rir[ch] = np.bincount(idx[valid], weights=w[valid], minlength=length)
    return SignalBuffer(rir, sample_rate)


def diffuse_noise(spec: AmbisonicSpec, num_samples: int, seed) -> SignalBuffer:
    """Isotropic noise field: i.i.d. unit-variance white noise per N3D channel."""
    rng = np.random.default_rng(seed)
    return SignalBuffer(rng.standard_normal((spec.channel_count, num_samples)))


def speech_shaped_noise(duration: float, sample_rate: int, seed) -> SignalBuffer:
    """Pink Gaussian noise with a 4 Hz syllabic amplitude envelope, unit RMS."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / sample_rate)
    spec *= 1 / np.sqrt(np.maximum(f, 50.0))
    x = np.fft.irfft(spec, n)
    t = np.arange(n) / sample_rate
    rate = 4.0 * (1 + 0.25 * rng.uniform(-1, 1))
    env = 0.05 + 0.5 * (1 - np.cos(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    x *= env
    return SignalBuffer(x / np.sqrt(np.mean(x ** 2)), sample_rate)


def early_transfer(rir: SignalBuffer, direct_delay_s: float, frame_size: int = 512,
                   window_s: float = EARLY_WINDOW_S) -> np.ndarray:
    """Canonical per-bin transfer vector of the RIR truncated after the early window."""
    stop = int(np.ceil((direct_delay_s + window_s) * rir.sample_rate)) + SINC_HALF_WIDTH
    h = rir.samples[:, :stop]
    nfft = frame_size * int(np.ceil(h.shape[1] / frame_size))
    spec = np.fft.rfft(h, n=nfft, axis=1)[:, ::nfft // frame_size]
    return canonicalize(spec.T)


def synth_scene(room: RoomConfig, sources: list, snr_db: float, spec: AmbisonicSpec,
                seed, duration: float | None = None) -> AmbisonicScene:
    """Render sources through their ambisonic RIRs and add diffuse noise.

    The noise is scaled so that the W-channel power ratio between the summed
    source images and the noise equals ``snr_db``; ``snr_db = inf`` disables it.
    """
    if not sources:
        raise ValueError("a scene needs at least one source")
    rates = {s.signal.sample_rate for s in sources}
    if len(rates) != 1:
        raise ValueError(f"inconsistent sample rates {sorted(rates)}")
    fs = rates.pop()
    if duration is None:
        duration = max(s.onset + s.signal.duration for s in sources)
    n = int(round(duration * fs))

    images, rirs, doas, transfers = [], [], [], []
    for s in sources:
        pos = s.position(room)
        if not room.contains(pos):
            raise ValueError(f"source at {pos} lies outside the room")
        rir = ism_ambisonic_rir(room, pos, spec, fs)
        onset = int(round(s.onset * fs))
        wet = fftconvolve(s.signal.samples[:1], rir.samples, axes=1)
        img = np.zeros((spec.channel_count, n))
        stop = min(n, onset + wet.shape[1])
        img[:, onset:stop] = wet[:, :stop - onset]
        images.append(SignalBuffer(img, fs))
        rirs.append(rir)
        doas.append(s.direction)
        tf = early_transfer(rir, s.distance / SPEED_OF_SOUND)
        transfers.append(SteeringVectorSet(tf, "ambisonic", spec, "measured", fs))

    clean = np.sum([im.samples for im in images], axis=0)
    noise = None
    mix = clean.copy()
    if np.isfinite(snr_db):
        raw = diffuse_noise(spec, n, seed).samples
        p_sig = np.mean(clean[0] ** 2)
        p_noise = np.mean(raw[0] ** 2)
        raw *= np.sqrt(p_sig / (p_noise * 10 ** (snr_db / 10)))
        noise = SignalBuffer(raw, fs)
        mix = clean + raw
    return AmbisonicScene(SignalBuffer(mix, fs), images, noise, doas, transfers,
                          float(snr_db), room, rirs)


@dataclass
class DatasetProtocol:
    """Randomized scene protocol.

    ``kind`` is ``'single_source'`` (SV pairs, localization, beampatterns)
    or ``'two_source'`` (delayed mixtures for enhancement).
    """

    kind: str = "single_source"
    count: int = 30
    seed: int = 0
    room_dimensions: tuple = (6.0, 4.0, 3.0)
    array_height: float = 1.2
    center_jitter: float = 1.0
    rt60_range: tuple = (0.2, 0.2)
    snr_range: tuple = (20.0, 20.0)
    elevation_deg: float = 28.0
    distance_range: tuple = (1.0, 2.0)
    azimuth_range_deg: tuple = (0.0, 360.0)
    azimuths_deg: list | None = None
    source_duration: float = 4.0
    onset_delay: float = 2.0
    min_separation_deg: float = 30.0
    max_ism_order: int = 20
    ambisonic_order: int = 3
    foa_order: int = 1
    sample_rate: int = 16000
    frame_size: int = 512
    hop: int = 256
    window: str = "hamming"
    wav_files: list | None = None

    def __post_init__(self):
        if self.kind not in ("single_source", "two_source"):
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if self.count < 1:
            raise ValueError("count must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetProtocol":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for key in ("room_dimensions", "rt60_range", "snr_range", "distance_range", "azimuth_range_deg"):
            if key in known:
                known[key] = tuple(known[key])
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def spec(self) -> AmbisonicSpec:
        return AmbisonicSpec(self.ambisonic_order)


@dataclass
class SceneParams:
    index: int
    seed: int
    room: RoomConfig
    azimuths_deg: list
    distances: list
    onsets: list
    snr_db: float
    signal_seeds: list

    def to_record(self) -> dict:
        return {"index": self.index, "seed": self.seed, "rt60": self.room.rt60,
                "snr_db": self.snr_db, "array_center": list(self.room.array_center),
                "azimuths_deg": self.azimuths_deg, "elevation_deg": None,
                "distances": self.distances, "onsets": self.onsets}


def scene_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def sample_scene(protocol: DatasetProtocol, index: int) -> SceneParams:
    """Draw the randomized configuration of scene ``index``, independent of other scenes."""
    seed = scene_seed(protocol.seed, index)
    rng = np.random.default_rng(seed)
    dims = np.asarray(protocol.room_dimensions, dtype=float)
    center = np.array([dims[0] / 2, dims[1] / 2, protocol.array_height])
    center[:2] += rng.uniform(-protocol.center_jitter, protocol.center_jitter, 2)
    rt60 = float(rng.uniform(*protocol.rt60_range))
    snr = float(rng.uniform(*protocol.snr_range))
    room = RoomConfig(tuple(dims), rt60, protocol.max_ism_order, tuple(center), seed)
    n_src = 1 if protocol.kind == "single_source" else 2
    el = np.deg2rad(protocol.elevation_deg)
    azimuths, distances = [], []
    for k in range(n_src):
        for _ in range(1000):
            if protocol.azimuths_deg is not None:
                az = float(protocol.azimuths_deg[(index * n_src + k) % len(protocol.azimuths_deg)])
            else:
                az = float(rng.uniform(*protocol.azimuth_range_deg))
            dist = float(rng.uniform(*protocol.distance_range))
            pos = center + dist * Direction(np.deg2rad(az), el).unit_vector()
            sep_ok = all(_azimuth_gap(az, a) >= protocol.min_separation_deg for a in azimuths)
            if room.contains(pos, margin=0.1) and sep_ok:
                break
            if protocol.azimuths_deg is not None:
                # fixed azimuth: shrink distance until the source fits
                protocol_dist = np.linspace(protocol.distance_range[0], 0.3, 50)
                for dist in protocol_dist:
                    pos = center + dist * Direction(np.deg2rad(az), el).unit_vector()
                    if room.contains(pos, margin=0.1):
                        break
                break
        else:
            raise RuntimeError(f"could not place source {k} of scene {index}")
        azimuths.append(az)
        distances.append(float(dist))
    onsets = [k * protocol.onset_delay for k in range(n_src)]
    signal_seeds = [int(s) for s in rng.integers(0, 2 ** 63 - 1, n_src + 1)]
    return SceneParams(index, seed, room, azimuths, distances, onsets, snr, signal_seeds)


def _azimuth_gap(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _source_signal(protocol: DatasetProtocol, seed: int) -> SignalBuffer:
    if protocol.wav_files:
        from .signal import read_wav

        rng = np.random.default_rng(seed)
        path = protocol.wav_files[int(rng.integers(len(protocol.wav_files)))]
        sig = read_wav(path)
        if sig.sample_rate != protocol.sample_rate:
            raise ValueError(f"{path}: sample rate {sig.sample_rate} != {protocol.sample_rate}")
        n = int(protocol.source_duration * sig.sample_rate)
        x = sig.samples[0]
        if x.size > n:
            start = int(rng.integers(0, x.size - n + 1))
            x = x[start:start + n]
        else:
            x = np.pad(x, (0, n - x.size))
        return SignalBuffer(x / max(np.sqrt(np.mean(x ** 2)), 1e-12), sig.sample_rate)
    return speech_shaped_noise(protocol.source_duration, protocol.sample_rate, seed)


def render_scene(protocol: DatasetProtocol, params: SceneParams) -> AmbisonicScene:
    el = np.deg2rad(protocol.elevation_deg)
    sources = [SourceSpec(Direction(np.deg2rad(az), el), dist,
                          _source_signal(protocol, params.signal_seeds[k]), onset)
               for k, (az, dist, onset) in enumerate(zip(params.azimuths_deg, params.distances,
                                                        params.onsets))]
    return synth_scene(params.room, sources, params.snr_db, protocol.spec, params.signal_seeds[-1])


def build_dataset(protocol: DatasetProtocol, out_dir, workers: int = 1) -> list[dict]:
    """Simulate scenes and store (FOA, HOA) measured-SV pairs.

    Each pair is written as ``pairs/scene_XXXXX_{foa,hoa}.svt``; the manifest
    ``manifest.jsonl`` holds one JSON record per scene. The FOA vector is
    estimated from the first ``(foa_order + 1)**2`` channels of the HOA
    mixture, i.e. what a first-order array would observe.
    """
    out_dir = Path(out_dir)
    (out_dir / "pairs").mkdir(parents=True, exist_ok=True)
    from .parallel import ordered_map

    records = ordered_map(_build_one, [(protocol, i, str(out_dir)) for i in range(protocol.count)],
                          workers)
    manifest = out_dir / "manifest.jsonl"
    try:
        with manifest.open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"failed writing {manifest}: {exc}") from exc
    return records


def _build_one(args):
    from .estimation import estimate_pair
    from .tensorfile import write_tensor

    protocol, index, out_dir = args
    params = sample_scene(protocol, index)
    scene = render_scene(protocol, params)
    windows = scene_windows(protocol, scene)
    rec = params.to_record()
    rec["elevation_deg"] = protocol.elevation_deg
    rec["pairs"] = []
    for k, (t0, t1) in enumerate(windows):
        foa, hoa = estimate_pair(scene.mixture, (t0, t1), protocol)
        stem = f"scene_{index:05d}" + (f"_src{k}" if len(windows) > 1 else "")
        paths = {}
        for name, sv in (("foa", foa), ("hoa", hoa)):
            path = Path(out_dir) / "pairs" / f"{stem}_{name}.svt"
            try:
                write_tensor(sv.to_tensorfile(), path)
            except OSError as exc:
                raise OSError(f"failed writing {path}: {exc}") from exc
            paths[name] = str(path.relative_to(out_dir))
        truth_path = Path(out_dir) / "pairs" / f"{stem}_truth.svt"
        write_tensor(scene.true_transfer[k].to_tensorfile(), truth_path)
        paths["truth"] = str(truth_path.relative_to(out_dir))
        rec["pairs"].append({"window_s": [t0, t1], "azimuth_deg": params.azimuths_deg[k], **paths})
    return rec


def scene_windows(protocol: DatasetProtocol, scene: AmbisonicScene) -> list[tuple]:
    """SV estimation windows: whole mixture for one source, first/last ``onset_delay`` for two."""
    total = scene.mixture.duration
    if protocol.kind == "single_source":
        return [(0.0, total)]
    d = protocol.onset_delay
    return [(0.0, d), (total - d, total)]

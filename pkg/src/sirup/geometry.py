"""Array geometry, real spherical harmonics and steering vectors.

Ambisonic signals use ACN channel ordering and N3D normalization
(no Condon-Shortley phase), so the order-N channel set is a prefix of the
order-(N+1) set.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import factorial

import numpy as np
from scipy.special import lpmv

from .tensorfile import TensorFile

SPEED_OF_SOUND = 343.0
MAX_SH_ORDER = 8


@dataclass(frozen=True)
class Direction:
    azimuth: float
    elevation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "azimuth", float(np.mod(self.azimuth, 2 * np.pi)))
        if not -np.pi / 2 - 1e-12 <= self.elevation <= np.pi / 2 + 1e-12:
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")

    @classmethod
    def from_degrees(cls, azimuth: float, elevation: float = 0.0) -> "Direction":
        return cls(np.deg2rad(azimuth), np.deg2rad(elevation))

    @property
    def azimuth_deg(self) -> float:
        return float(np.rad2deg(self.azimuth))

    @property
    def elevation_deg(self) -> float:
        return float(np.rad2deg(self.elevation))

    def unit_vector(self) -> np.ndarray:
        ce = np.cos(self.elevation)
        return np.array([ce * np.cos(self.azimuth), ce * np.sin(self.azimuth), np.sin(self.elevation)])

    @classmethod
    def from_vector(cls, v) -> "Direction":
        v = np.asarray(v, dtype=float)
        r = np.linalg.norm(v)
        return cls(np.arctan2(v[1], v[0]), np.arcsin(np.clip(v[2] / r, -1.0, 1.0)))


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray
    center: np.ndarray | None = None
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        if pos.shape[0] < 1 or pos.shape[1] != 3:
            raise ValueError("mic_positions must be (M, 3) with M >= 1")
        object.__setattr__(self, "mic_positions", pos)
        center = pos.mean(axis=0) if self.center is None else np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", center)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]


@dataclass(frozen=True)
class AmbisonicSpec:
    order: int
    normalization: str = "N3D"
    ordering: str = "ACN"

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("ambisonic order must be non-negative")
        if self.normalization not in ("N3D", "SN3D"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.ordering != "ACN":
            raise ValueError("only ACN ordering is supported")

    @property
    def channel_count(self) -> int:
        return (self.order + 1) ** 2


def order_from_channels(m: int) -> int:
    n = int(round(np.sqrt(m))) - 1
    if (n + 1) ** 2 != m:
        raise ValueError(f"{m} channels is not a full ambisonic order")
    return n


@dataclass(frozen=True)
class SteeringVectorSet:
    """Per-frequency steering vectors, ``vectors`` shape ``(F, M)``.

    ``degenerate`` marks rows whose estimate had no usable eigengap.
    """

    vectors: np.ndarray
    domain: str
    spec: AmbisonicSpec | ArrayGeometry
    kind: str = "algebraic"
    sample_rate: int = 16000
    frame_size: int = 512
    degenerate: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vectors)
        if v.ndim != 2:
            raise ValueError(f"vectors must be (F, M), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("steering vectors contain non-finite entries")
        if self.domain not in ("mic_array", "ambisonic"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.kind not in ("algebraic", "measured", "upmixed"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.domain == "ambisonic" and v.shape[1] != self.spec.channel_count:
            raise ValueError(f"{v.shape[1]} channels does not match order {self.spec.order}")
        object.__setattr__(self, "vectors", v.astype(complex, copy=False))

    @property
    def num_bins(self) -> int:
        return self.vectors.shape[0]

    @property
    def num_channels(self) -> int:
        return self.vectors.shape[1]

    @property
    def order(self) -> int:
        if self.domain != "ambisonic":
            raise ValueError("order is only defined for ambisonic steering vectors")
        return self.spec.order

    def frequencies(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.sample_rate / self.frame_size

    def normalized(self) -> "SteeringVectorSet":
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        return replace(self, vectors=self.vectors / np.where(norms > 0, norms, 1.0))

    def to_tensorfile(self) -> TensorFile:
        meta = {"domain": self.domain, "kind": self.kind, "F": self.num_bins,
                "sample_rate": self.sample_rate, "frame_size": self.frame_size}
        if self.domain == "ambisonic":
            meta.update(order=self.spec.order, normalization=self.spec.normalization)
        else:
            meta.update(mic_positions=self.spec.mic_positions.tolist(),
                        center=self.spec.center.tolist(), speed_of_sound=self.spec.speed_of_sound)
        if self.degenerate is not None:
            meta["degenerate"] = np.flatnonzero(self.degenerate).tolist()
        return TensorFile(self.vectors, meta)

    @classmethod
    def from_tensorfile(cls, t: TensorFile) -> "SteeringVectorSet":
        m = t.metadata
        if m["domain"] == "ambisonic":
            spec = AmbisonicSpec(m["order"], m.get("normalization", "N3D"))
        else:
            spec = ArrayGeometry(m["mic_positions"], m["center"], m["speed_of_sound"])
        degenerate = None
        if "degenerate" in m:
            degenerate = np.zeros(t.dims[0], dtype=bool)
            degenerate[m["degenerate"]] = True
        return cls(t.data.astype(complex), m["domain"], spec, m["kind"],
                   m.get("sample_rate", 16000), m.get("frame_size", 512), degenerate)


def algebraic_sv(geom: ArrayGeometry, direction: Direction, freqs) -> SteeringVectorSet:
    """Free-field plane-wave phase delays ``exp(-j 2 pi f tau_m)``."""
    freqs = np.asarray(freqs, dtype=float)
    if np.any(freqs < 0):
        raise ValueError("frequencies must be non-negative")
    tau = (geom.mic_positions - geom.center) @ direction.unit_vector() / geom.speed_of_sound
    return SteeringVectorSet(np.exp(-2j * np.pi * freqs[:, None] * tau[None, :]), "mic_array", geom)


def sh_normalization(n: int, m: int, normalization: str = "N3D") -> float:
    am = abs(m)
    k = (2 - (m == 0)) * factorial(n - am) / factorial(n + am)
    if normalization == "N3D":
        k *= 2 * n + 1
    return float(np.sqrt(k))


def sph_harmonics_matrix(azimuth, elevation, order: int, normalization: str = "N3D") -> np.ndarray:
    """Real spherical harmonics in ACN order for arrays of directions.

    Returns
    -------
    ndarray, shape ``(Q, (order + 1) ** 2)``
    """
    if order > MAX_SH_ORDER:
        raise ValueError(f"order {order} exceeds supported maximum {MAX_SH_ORDER}")
    azimuth = np.atleast_1d(np.asarray(azimuth, dtype=float))
    elevation = np.broadcast_to(np.asarray(elevation, dtype=float), azimuth.shape)
    sin_el = np.sin(elevation)
    out = np.empty((azimuth.size, (order + 1) ** 2))
    for n in range(order + 1):
        for m in range(-n, n + 1):
            am = abs(m)
            # lpmv includes the Condon-Shortley phase; ambisonics drops it
            leg = (-1.0) ** am * lpmv(am, n, sin_el)
            trig = np.cos(m * azimuth) if m >= 0 else np.sin(am * azimuth)
            out[:, n * n + n + m] = sh_normalization(n, m, normalization) * leg * trig
    return out


def sph_harmonics(direction: Direction, order: int, normalization: str = "N3D") -> np.ndarray:
    return sph_harmonics_matrix(direction.azimuth, direction.elevation, order, normalization)[0]


def ambisonic_algebraic_sv(direction: Direction, spec: AmbisonicSpec, num_bins: int = 257,
                           sample_rate: int = 16000, frame_size: int = 512) -> SteeringVectorSet:
    """Ideal plane-wave encoding vector repeated over ``num_bins`` frequencies."""
    y = sph_harmonics(direction, spec.order, spec.normalization)
    return SteeringVectorSet(np.tile(y.astype(complex), (num_bins, 1)), "ambisonic", spec,
                             "algebraic", sample_rate, frame_size)


def truncate_order(sv: SteeringVectorSet, target_order: int) -> SteeringVectorSet:
    if sv.domain != "ambisonic":
        raise ValueError("truncate_order needs ambisonic steering vectors")
    if target_order > sv.order:
        raise ValueError(f"cannot truncate order {sv.order} to higher order {target_order}")
    spec = replace(sv.spec, order=target_order)
    m = spec.channel_count
    degenerate = sv.degenerate
    return replace(sv, vectors=sv.vectors[:, :m].copy(), spec=spec, degenerate=degenerate)


def zero_pad_order(sv: SteeringVectorSet, target_order: int) -> SteeringVectorSet:
    if target_order < sv.order:
        raise ValueError("zero_pad_order cannot reduce the order")
    spec = replace(sv.spec, order=target_order)
    out = np.zeros((sv.num_bins, spec.channel_count), dtype=complex)
    out[:, :sv.num_channels] = sv.vectors
    return replace(sv, vectors=out, spec=spec)


def canonicalize(vectors: np.ndarray) -> np.ndarray:
    """Unit-norm rows with channel 0 rotated to the non-negative real axis."""
    v = np.asarray(vectors, dtype=complex)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    v = v / np.where(norms > 0, norms, 1.0)
    ref = v[..., :1]
    mag = np.abs(ref)
    phase = np.where(mag > 0, ref / np.where(mag > 0, mag, 1.0), 1.0)
    return v * np.conj(phase)

"""Steered-response-power DOA estimation from steering vectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import (AmbisonicSpec, ArrayGeometry, Direction, SteeringVectorSet, algebraic_sv,
                       sph_harmonics_matrix)


@dataclass(frozen=True)
class DoaGrid:
    azimuth: np.ndarray  # radians
    elevation: np.ndarray  # radians
    kind: str = "azimuth_ring"
    step_deg: float | None = None

    @classmethod
    def azimuth_ring(cls, elevation_deg: float = 28.0, step_deg: float = 1.0) -> "DoaGrid":
        n = 360.0 / step_deg
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"step {step_deg} deg does not divide 360")
        az = np.deg2rad(np.arange(int(round(n))) * step_deg)
        return cls(az, np.full(az.shape, np.deg2rad(elevation_deg)), "azimuth_ring", float(step_deg))

    @classmethod
    def full_sphere(cls, n_points: int) -> "DoaGrid":
        # Fibonacci lattice
        i = np.arange(n_points) + 0.5
        el = np.arcsin(1 - 2 * i / n_points)
        az = np.mod(np.pi * (1 + 5 ** 0.5) * i, 2 * np.pi)
        return cls(az, el, "full_sphere")

    def __len__(self) -> int:
        return self.azimuth.size

    @property
    def azimuth_deg(self) -> np.ndarray:
        return np.rad2deg(self.azimuth)

    def direction(self, i: int) -> Direction:
        return Direction(self.azimuth[i], self.elevation[i])


@dataclass(frozen=True)
class SrpMap:
    scores: np.ndarray
    grid: DoaGrid
    num_bins: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["azimuth_deg", "elevation_deg", "score"])
            for az, el, s in zip(self.grid.azimuth_deg, np.rad2deg(self.grid.elevation), self.scores):
                w.writerow([f"{az:.6f}", f"{el:.6f}", f"{s:.10g}"])


def default_bins(num_bins: int) -> np.ndarray:
    """All bins except DC."""
    return np.arange(1, num_bins)


def grid_steering(sv: SteeringVectorSet, grid: DoaGrid, bins: np.ndarray,
                  geometry: ArrayGeometry | None = None) -> np.ndarray:
    """Unit-norm algebraic SVs on the grid: ``(G, M)`` for ambisonics, ``(B, G, M)`` for arrays."""
    if sv.domain == "ambisonic":
        y = sph_harmonics_matrix(grid.azimuth, grid.elevation, sv.spec.order, sv.spec.normalization)
        return y / np.linalg.norm(y, axis=1, keepdims=True)
    geom = geometry or sv.spec
    if geom.num_mics != sv.num_channels:
        raise ValueError(f"geometry has {geom.num_mics} mics, SV has {sv.num_channels} channels")
    freqs = sv.frequencies()[bins]
    out = np.stack([algebraic_sv(geom, grid.direction(g), freqs).vectors for g in range(len(grid))],
                   axis=1)
    return out / np.sqrt(geom.num_mics)


def srp_map(measured: SteeringVectorSet, grid: DoaGrid, algebraic_source: ArrayGeometry | None = None,
            bins=None) -> SrpMap:
    """``S(theta) = sum_f |<a~_f(theta)/|a~|, a^_f/|a^|>|^2`` over ``bins``."""
    bins = default_bins(measured.num_bins) if bins is None else np.asarray(bins)
    if algebraic_source is not None:
        n = (algebraic_source.channel_count if isinstance(algebraic_source, AmbisonicSpec)
             else algebraic_source.num_mics)
        if n != measured.num_channels:
            raise ValueError(f"channel mismatch: algebraic {n} vs measured {measured.num_channels}")
    a = measured.vectors[bins]
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    a = a / np.where(norms > 0, norms, 1.0)
    if measured.domain == "ambisonic":
        y = grid_steering(measured, grid, bins)
        # real frequency-independent y: S = y^T (sum_f a a^H) y
        r = np.einsum("fm,fn->mn", a, np.conj(a))
        scores = np.real(np.einsum("gm,mn,gn->g", y, r, y))
    else:
        y = grid_steering(measured, grid, bins, algebraic_source)
        scores = np.sum(np.abs(np.einsum("bgm,bm->bg", np.conj(y), a)) ** 2, axis=0)
    return SrpMap(np.maximum(scores, 0.0), grid, int(bins.size))


def pick_peak(srp: SrpMap, interpolate: bool = True) -> Direction:
    """Grid argmax (first index on ties) refined by a 3-point parabola on rings."""
    s = srp.scores
    if s.size == 0:
        raise ValueError("empty SRP map")
    i = int(np.argmax(s))
    grid = srp.grid
    if not interpolate or grid.kind != "azimuth_ring" or s.size < 3:
        return grid.direction(i)
    left, mid, right = s[(i - 1) % s.size], s[i], s[(i + 1) % s.size]
    denom = left - 2 * mid + right
    delta = 0.0 if denom >= 0 else 0.5 * (left - right) / denom
    az = grid.azimuth[i] + np.deg2rad(delta * grid.step_deg)
    return Direction(az, grid.elevation[i])


def angular_error(est: Direction, truth: Direction) -> float:
    """Wrapped absolute azimuth difference in degrees, in [0, 180]."""
    d = abs(est.azimuth_deg - truth.azimuth_deg) % 360.0
    return float(min(d, 360.0 - d))


def localize(sv: SteeringVectorSet, grid: DoaGrid | None = None, bins=None) -> tuple[Direction, SrpMap]:
    grid = grid or DoaGrid.azimuth_ring()
    srp = srp_map(sv, grid, bins=bins)
    return pick_peak(srp), srp

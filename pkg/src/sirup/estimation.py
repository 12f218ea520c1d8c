"""Measured steering vectors from spatial covariance matrices."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import (AmbisonicSpec, ArrayGeometry, Direction, SteeringVectorSet,
                       ambisonic_algebraic_sv, canonicalize, order_from_channels)
from .signal import SignalBuffer, Spectrogram, stft

POWER_TOL = 1e-10
MAX_POWER_ITER = 2000
DEGENERATE_GAP = 1e-6


@dataclass(frozen=True)
class SpatialCovariance:
    matrices: np.ndarray  # (F, M, M)
    frame_count: int


@dataclass(frozen=True)
class ConditioningTensor:
    data: np.ndarray  # (F, M')
    valid_channels: int

    @property
    def num_channels(self) -> int:
        return self.data.shape[1]


def scm(spec: Spectrogram, frame_range: tuple | range | None = None) -> SpatialCovariance:
    """Frame-averaged outer products ``(1/T) sum_t x_ft x_ft^H``."""
    if frame_range is None:
        frame_range = range(spec.num_frames)
    frames = np.asarray(list(frame_range) if not isinstance(frame_range, range) else frame_range)
    if frames.size == 0:
        raise ValueError("empty frame range")
    if frames.min() < 0 or frames.max() >= spec.num_frames:
        raise ValueError(f"frame range outside 0..{spec.num_frames - 1}")
    x = spec.bins[:, frames, :]
    cov = np.einsum("ftm,ftn->fmn", x, np.conj(x)) / frames.size
    return SpatialCovariance(cov, int(frames.size))


def power_iteration(mats: np.ndarray, tol: float = POWER_TOL, max_iter: int = MAX_POWER_ITER):
    """Batched power iteration from ``e0`` for Hermitian PSD matrices.

    Returns the iterate and a mask of rows that converged. Convergence uses
    the geometric-rate error estimate ``|dv| r / (1 - r)``.
    """
    f, m, _ = mats.shape
    v = np.zeros((f, m), dtype=complex)
    v[:, 0] = 1.0
    done = np.zeros(f, dtype=bool)
    prev_step = np.full(f, np.inf)
    for _ in range(max_iter):
        w = np.einsum("fmn,fn->fm", mats, v)
        norm = np.linalg.norm(w, axis=1)
        alive = (~done) & (norm > 0)
        if not alive.any():
            break
        w[alive] /= norm[alive, None]
        # align phase with previous iterate before measuring the step
        ph = np.einsum("fm,fm->f", np.conj(w), v)
        ph = np.where(np.abs(ph) > 0, ph / np.where(np.abs(ph) > 0, np.abs(ph), 1), 1)
        w = w * ph[:, None]
        step = np.linalg.norm(w - v, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.where(prev_step > 0, step / prev_step, 0.0)
            bound = np.where(rate < 1, step * rate / (1 - rate), np.inf)
        v[alive] = w[alive]
        newly = alive & ((step == 0) | (bound < tol))
        done |= newly
        prev_step = np.where(alive, step, prev_step)
    return v, done


def principal_eigvec(cov: SpatialCovariance) -> SteeringVectorSet:
    """Unit-norm principal eigenvector per frequency, channel 0 real and >= 0.

    Power iteration does the work; a values-only dense eigensolve guards
    against convergence to a non-dominant eigenvector and measures the
    eigengap. Rows that stagnate or fail the guard fall back to ``eigh``.
    Zero matrices return ``e0``; rows with relative eigengap below 1e-6 are
    flagged in ``degenerate``.
    """
    mats = np.asarray(cov.matrices, dtype=complex)
    f, m, _ = mats.shape
    v, converged = power_iteration(mats)
    evals = np.linalg.eigvalsh(mats)
    lam1 = evals[:, -1]
    lam2 = evals[:, -2] if m > 1 else np.zeros(f)
    scale = np.maximum(np.abs(lam1), 1e-300)
    rayleigh = np.real(np.einsum("fm,fmn,fn->f", np.conj(v), mats, v))
    wrong = np.abs(rayleigh - lam1) > 1e-9 * scale
    zero = np.real(np.trace(mats, axis1=1, axis2=2)) <= 0
    redo = (~converged | wrong) & ~zero
    if redo.any():
        _, vecs = np.linalg.eigh(mats[redo])
        v[redo] = vecs[:, :, -1]
    v[zero] = 0
    v[zero, 0] = 1
    degenerate = zero | ((lam1 - lam2) < DEGENERATE_GAP * scale)
    if m == 1:
        degenerate = zero
    v = canonicalize(v)
    return _wrap(v, degenerate)


def _wrap(v: np.ndarray, degenerate=None, sample_rate=16000, frame_size=512) -> SteeringVectorSet:
    m = v.shape[1]
    try:
        spec = AmbisonicSpec(order_from_channels(m))
        domain = "ambisonic"
    except ValueError:
        spec = ArrayGeometry(np.zeros((m, 3)))
        domain = "mic_array"
    return SteeringVectorSet(v, domain, spec, "measured", sample_rate, frame_size, degenerate)


def estimate_sv(mixture: SignalBuffer, window: tuple | None = None, frame_size: int = 512,
                hop: int = 256, stft_window: str = "hamming", domain: str = "ambisonic",
                spec=None) -> SteeringVectorSet:
    """Measured SV of the dominant source in ``window = (t0, t1)`` seconds."""
    seg = mixture if window is None else mixture.segment(*window)
    if seg.num_samples < frame_size:
        raise ValueError(f"window {window} shorter than one frame")
    spectrogram = stft(seg, frame_size, hop, stft_window)
    sv = principal_eigvec(scm(spectrogram))
    if spec is None:
        spec = sv.spec
        domain = sv.domain
    return replace(sv, domain=domain, spec=spec, sample_rate=mixture.sample_rate,
                   frame_size=frame_size)


def estimate_pair(mixture: SignalBuffer, window: tuple, protocol) -> tuple:
    """(FOA, HOA) measured SVs; FOA uses only the low-order channel prefix."""
    n_foa = (protocol.foa_order + 1) ** 2
    kw = dict(frame_size=protocol.frame_size, hop=protocol.hop, stft_window=protocol.window)
    hoa = estimate_sv(mixture, window, **kw)
    foa = estimate_sv(mixture.channels(slice(0, n_foa)), window, **kw)
    return foa, hoa


def make_condition(foa_sv: SteeringVectorSet, num_channels: int,
                   algebraic_fill: Direction | None = None) -> ConditioningTensor:
    """Zero-pad the FOA vectors to ``num_channels``; optionally fill with encoding values."""
    f, m = foa_sv.vectors.shape
    if m > num_channels:
        raise ValueError(f"condition has {m} channels, more than target {num_channels}")
    data = np.zeros((f, num_channels), dtype=complex)
    data[:, :m] = foa_sv.vectors
    if algebraic_fill is not None and m < num_channels:
        enc = ambisonic_algebraic_sv(algebraic_fill, AmbisonicSpec(order_from_channels(num_channels)), f)
        data[:, m:] = enc.vectors[:, m:]
    return ConditioningTensor(data, m)

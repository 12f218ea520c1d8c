"""Matched-filter beamforming, beampattern metrics and bss_eval scores."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import toeplitz
from scipy.signal import fftconvolve

from .geometry import AmbisonicSpec, ArrayGeometry, SteeringVectorSet, order_from_channels
from .localization import DoaGrid, default_bins, grid_steering
from .signal import SignalBuffer, Spectrogram, istft, stft

SCORE_CAP_DB = 100.0


@dataclass(frozen=True)
class Beamformer:
    weights: np.ndarray  # (F, M), unit-norm rows
    source_kind: str = "measured"

    @property
    def num_channels(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class BeamMetrics:
    di_db: float
    bw3_deg: float
    sl_db: float
    sl_defined: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass(frozen=True)
class SeparationScores:
    sdr_db: np.ndarray
    sir_db: np.ndarray
    sar_db: np.ndarray

    def as_dict(self) -> dict:
        return {"sdr_db": self.sdr_db.tolist(), "sir_db": self.sir_db.tolist(),
                "sar_db": self.sar_db.tolist()}


def make_beamformer(sv: SteeringVectorSet, source_kind: str | None = None) -> Beamformer:
    """``w_f = a_f / ||a_f||``; MaxSINR when ``a`` is a measured SV."""
    a = np.asarray(sv.vectors, dtype=complex)
    if not np.all(np.isfinite(a)):
        raise ValueError("steering vectors are not finite")
    norms = np.linalg.norm(a, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ValueError(f"zero-norm steering vector at frequency index {int(bad[0])}")
    kind = source_kind or ("algebraic" if sv.kind == "algebraic" else "measured")
    return Beamformer(a / norms[:, None], kind)


def apply_beamformer(bf: Beamformer, spec: Spectrogram) -> Spectrogram:
    """``s^_ft = w_f^H x_ft``, returned as a one-channel spectrogram."""
    if spec.num_channels != bf.num_channels:
        raise ValueError(f"beamformer has {bf.num_channels} channels, input {spec.num_channels}")
    out = np.einsum("fm,ftm->ft", np.conj(bf.weights), spec.bins)[:, :, None]
    return Spectrogram(out, spec.frame_size, spec.hop, spec.window, spec.sample_rate, spec.num_samples)


def beamform_signal(bf: Beamformer, signal: SignalBuffer, frame_size: int = 512, hop: int = 256,
                    window: str = "hamming") -> SignalBuffer:
    """Beamform in the STFT domain and return a time signal of the input length."""
    pad = frame_size
    x = np.pad(signal.samples, ((0, 0), (pad, pad + frame_size)))
    spec = stft(SignalBuffer(x, signal.sample_rate), frame_size, hop, window)
    y = istft(apply_beamformer(bf, spec))
    return SignalBuffer(y.samples[:, pad:pad + signal.num_samples], signal.sample_rate)


def beampattern(bf: Beamformer, grid: DoaGrid, algebraic_source=None, bins=None,
                sample_rate: int = 16000, frame_size: int = 512) -> np.ndarray:
    """``p(theta) = mean_f |w_f^H a~_f(theta)/||a~_f||^2`` over ``bins``."""
    f = bf.weights.shape[0]
    bins = default_bins(f) if bins is None else np.asarray(bins)
    w = bf.weights[bins]
    probe = SteeringVectorSet(bf.weights, "mic_array", ArrayGeometry(np.zeros((bf.num_channels, 3))),
                              sample_rate=sample_rate, frame_size=frame_size)
    if algebraic_source is None or isinstance(algebraic_source, AmbisonicSpec):
        spec = algebraic_source or AmbisonicSpec(order_from_channels(bf.num_channels))
        if spec.channel_count != bf.num_channels:
            raise ValueError(f"channel mismatch: {spec.channel_count} vs {bf.num_channels}")
        probe = SteeringVectorSet(bf.weights, "ambisonic", spec, sample_rate=sample_rate,
                                  frame_size=frame_size)
        y = grid_steering(probe, grid, bins)
        return np.mean(np.abs(np.conj(w) @ y.T) ** 2, axis=0)
    if algebraic_source.num_mics != bf.num_channels:
        raise ValueError(f"channel mismatch: {algebraic_source.num_mics} vs {bf.num_channels}")
    y = grid_steering(probe, grid, bins, algebraic_source)
    return np.mean(np.abs(np.einsum("bm,bgm->bg", np.conj(w), y)) ** 2, axis=0)


def _circular_smooth(p: np.ndarray) -> np.ndarray:
    return (np.roll(p, 1) + p + np.roll(p, -1)) / 3.0


def _walk_to_minimum(s: np.ndarray, start: int, direction: int) -> int:
    """Steps from ``start`` to the first local minimum of ``s`` going ``direction``."""
    n = s.size
    k = 0
    while k < n - 1 and s[(start + direction * (k + 1)) % n] <= s[(start + direction * k) % n]:
        k += 1
    return k


def _half_power_offset(p: np.ndarray, start: int, half: float, direction: int) -> float | None:
    n = p.size
    for k in range(1, n):
        cur = p[(start + direction * k) % n]
        if cur < half:
            prev = p[(start + direction * (k - 1)) % n]
            return k - 1 + (prev - half) / (prev - cur)
    return None


def beam_metrics(pattern: np.ndarray, peak_index: int | None = None,
                 step_deg: float | None = None) -> BeamMetrics:
    """DI, -3 dB beamwidth and highest sidelobe of a pattern on a full azimuth ring.

    The main lobe ends at the first local minimum on each side of the peak,
    found on a 3-point circular moving average of the pattern.
    """
    p = np.asarray(pattern, dtype=float)
    n = p.size
    step = 360.0 / n if step_deg is None else step_deg
    if np.allclose(p, p[0], rtol=1e-12, atol=0):
        return BeamMetrics(0.0, 360.0, 0.0, False)
    i0 = int(np.argmax(p)) if peak_index is None else int(peak_index) % n
    peak = p[i0]
    di = 10 * np.log10(peak / np.mean(p))

    half = peak / 2
    right = _half_power_offset(p, i0, half, +1)
    left = _half_power_offset(p, i0, half, -1)
    bw = 360.0 if right is None or left is None else min((right + left) * step, 360.0)

    s = _circular_smooth(p)
    kr = _walk_to_minimum(s, i0, +1)
    kl = _walk_to_minimum(s, i0, -1)
    if kr + kl >= n - 1:
        return BeamMetrics(float(di), float(bw), 0.0, False)
    side = [(i0 + k) % n for k in range(kr + 1, n - kl)]
    sl = 10 * np.log10(np.max(p[side]) / peak)
    return BeamMetrics(float(di), float(bw), float(sl), True)


class Projector:
    """Orthogonal projections onto delayed copies of reference signals.

    Holds the Gram matrix of ``filter_len`` delays of each reference so that
    several estimates can be scored against the same references.
    """

    def __init__(self, references: np.ndarray, filter_len: int = 512):
        refs = np.atleast_2d(np.asarray(references, dtype=float))
        if np.any(np.sum(refs ** 2, axis=1) == 0):
            raise ValueError("degenerate (all-zero) reference signal")
        self.refs = refs
        self.filter_len = int(filter_len)
        j, n = refs.shape
        el = self.filter_len
        nfft = int(2 ** np.ceil(np.log2(n + el)))
        self.nfft = nfft
        self._ref_fft = np.fft.rfft(refs, nfft, axis=1)
        gram = np.empty((j * el, j * el))
        for a in range(j):
            for b in range(a, j):
                # r[tau] = sum_n s_a[n] s_b[n + tau]
                r = np.fft.irfft(np.conj(self._ref_fft[a]) * self._ref_fft[b], nfft)
                # block[l, m] = sum_n s_a[n - l] s_b[n - m] = r[l - m]
                col = r[np.arange(el)]
                row = r[(-np.arange(el)) % nfft]
                block = toeplitz(col, row)
                gram[a * el:(a + 1) * el, b * el:(b + 1) * el] = block
                gram[b * el:(b + 1) * el, a * el:(a + 1) * el] = block.T
        load = 1e-10 * np.trace(gram) / gram.shape[0]
        self._gram = gram
        self._all = scipy.linalg.cho_factor(gram + load * np.eye(gram.shape[0]))
        self._own = [scipy.linalg.cho_factor(gram[a * el:(a + 1) * el, a * el:(a + 1) * el]
                                             + load * np.eye(el)) for a in range(j)]

    def _correlations(self, est: np.ndarray) -> np.ndarray:
        e = np.fft.rfft(est, self.nfft)
        # d[a, l] = sum_n s_a[n - l] est[n]
        r = np.fft.irfft(np.conj(self._ref_fft) * e[None, :], self.nfft, axis=1)
        return r[:, :self.filter_len]

    def _synthesize(self, coefs: np.ndarray, which) -> np.ndarray:
        n = self.refs.shape[1] + self.filter_len - 1
        out = np.zeros(n)
        for a, c in zip(which, coefs):
            out += fftconvolve(self.refs[a], c)[:n]
        return out

    def decompose(self, est: np.ndarray, target: int):
        """Return ``(s_target, e_interf, e_artif)`` of zero-padded ``est``."""
        est = np.asarray(est, dtype=float)
        el = self.filter_len
        d = self._correlations(est)
        c_all = scipy.linalg.cho_solve(self._all, d.ravel()).reshape(d.shape)
        c_own = scipy.linalg.cho_solve(self._own[target], d[target])
        n = self.refs.shape[1] + el - 1
        padded = np.zeros(n)
        padded[:est.size] = est
        s_target = self._synthesize([c_own], [target])
        p_all = self._synthesize(c_all, range(self.refs.shape[0]))
        return s_target, p_all - s_target, padded - p_all


def _ratio_db(num: float, den: float) -> float:
    if den <= 0 or num / den > 10 ** (SCORE_CAP_DB / 10):
        return SCORE_CAP_DB
    if num <= 0:
        return -SCORE_CAP_DB
    return float(10 * np.log10(num / den))


def scores_from_parts(s_target, e_interf, e_artif) -> tuple[float, float, float]:
    t = np.sum(s_target ** 2)
    i = np.sum(e_interf ** 2)
    a = np.sum(e_artif ** 2)
    sdr = _ratio_db(t, np.sum((e_interf + e_artif) ** 2))
    sir = _ratio_db(t, i)
    sar = _ratio_db(np.sum((s_target + e_interf) ** 2), a)
    return sdr, sir, sar


def bss_eval(estimates, references, filter_len: int = 512) -> SeparationScores:
    """SDR/SIR/SAR of estimate ``j`` against reference ``j``.

    ``s_target`` is the projection onto ``filter_len`` delays of reference
    ``j``; interference is the extra part explained by all references' delays.
    """
    est = [e.samples[0] if isinstance(e, SignalBuffer) else np.asarray(e, dtype=float)
           for e in estimates]
    refs = np.stack([r.samples[0] if isinstance(r, SignalBuffer) else np.asarray(r, dtype=float)
                     for r in references])
    if len(est) > refs.shape[0]:
        raise ValueError("more estimates than references")
    if any(e.size != refs.shape[1] for e in est):
        raise ValueError("estimates and references must have equal lengths")
    proj = Projector(refs, filter_len)
    out = np.array([scores_from_parts(*proj.decompose(e, j)) for j, e in enumerate(est)])
    return SeparationScores(out[:, 0], out[:, 1], out[:, 2])

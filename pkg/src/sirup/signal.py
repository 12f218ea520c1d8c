"""Time-frequency front-end and audio containers.

The STFT here is a plain framed FFT: frames start at sample 0 with no
centering or padding, so ``T = floor((N - frame_size) / hop) + 1``.
Synthesis is overlap-add of the inverse frames divided by the (constant)
sum of shifted analysis windows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

WINDOWS = ("hamming", "hann", "boxcar")


@dataclass(frozen=True)
class SignalBuffer:
    """Multichannel time-domain signal, shape ``(channels, num_samples)``."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise ValueError(f"samples must be 2-D (channels, num_samples), got {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def channels(self, idx) -> "SignalBuffer":
        return SignalBuffer(self.samples[idx], self.sample_rate)

    def segment(self, start_s: float, stop_s: float) -> "SignalBuffer":
        a = int(round(start_s * self.sample_rate))
        b = int(round(stop_s * self.sample_rate))
        return SignalBuffer(self.samples[:, a:b], self.sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """One-sided STFT, ``bins`` has shape ``(F, T, M)``."""

    bins: np.ndarray
    frame_size: int
    hop: int
    window: str
    sample_rate: int
    num_samples: int | None = None

    @property
    def num_bins(self) -> int:
        return self.bins.shape[0]

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def num_channels(self) -> int:
        return self.bins.shape[2]

    def frequencies(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.sample_rate / self.frame_size

    def frame_index(self, time_s: float) -> int:
        """Index of the first frame starting at or after ``time_s``."""
        return int(np.ceil(time_s * self.sample_rate / self.hop - 1e-9))


def get_window(name: str, frame_size: int) -> np.ndarray:
    if name not in WINDOWS:
        raise ValueError(f"unknown window {name!r}; expected one of {WINDOWS}")
    # periodic (DFT-even) windows are exactly COLA at 50% overlap
    return scipy.signal.get_window(name, frame_size, fftbins=True)


def num_frames(num_samples: int, frame_size: int, hop: int) -> int:
    return (num_samples - frame_size) // hop + 1


def stft(signal: SignalBuffer, frame_size: int = 512, hop: int = 256,
         window: str = "hamming") -> Spectrogram:
    """One-sided STFT of every channel.

    Parameters
    ----------
    signal : SignalBuffer
    frame_size : int
        Even frame length in samples.
    hop : int
        Frame advance, ``hop <= frame_size``.
    window : {'hamming', 'hann', 'boxcar'}

    Returns
    -------
    Spectrogram
        ``bins`` of shape ``(frame_size // 2 + 1, T, channels)``.
    """
    if frame_size % 2:
        raise ValueError("frame_size must be even")
    if not 0 < hop <= frame_size:
        raise ValueError("hop must satisfy 0 < hop <= frame_size")
    x = signal.samples
    n = x.shape[1]
    if n < frame_size:
        raise ValueError(f"insufficient samples: {n} < frame_size {frame_size}")
    win = get_window(window, frame_size)
    t = num_frames(n, frame_size, hop)
    idx = np.arange(frame_size)[None, :] + hop * np.arange(t)[:, None]
    frames = x[:, idx] * win  # (M, T, frame)
    spec = np.fft.rfft(frames, axis=-1)
    return Spectrogram(np.transpose(spec, (2, 1, 0)), frame_size, hop, window,
                       signal.sample_rate, n)


def cola_constant(window: str, frame_size: int, hop: int) -> float:
    """Constant value of the shifted-window sum; raises if not COLA."""
    win = get_window(window, frame_size)
    if not scipy.signal.check_COLA(win, frame_size, frame_size - hop):
        raise ValueError(f"window {window!r} with hop {hop} is not COLA for frame {frame_size}")
    return float(win.sum() / hop)


def istft(spec: Spectrogram) -> SignalBuffer:
    """Overlap-add inverse of :func:`stft`.

    Samples covered by fewer than ``frame_size / hop`` frames (the first and
    last partial hops) are not exactly reconstructed.
    """
    c = cola_constant(spec.window, spec.frame_size, spec.hop)
    frames = np.fft.irfft(np.transpose(spec.bins, (2, 1, 0)), n=spec.frame_size, axis=-1)
    m, t, _ = frames.shape
    n = spec.num_samples or (t - 1) * spec.hop + spec.frame_size
    out = np.zeros((m, max(n, (t - 1) * spec.hop + spec.frame_size)))
    for i in range(t):
        out[:, i * spec.hop:i * spec.hop + spec.frame_size] += frames[:, i]
    return SignalBuffer(out[:, :n] / c, spec.sample_rate)


def read_wav(path) -> SignalBuffer:
    """Read a PCM16 or IEEE float32 RIFF/WAVE file.

    PCM16 is mapped to [-1, 1) by dividing by 32768.
    """
    path = Path(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise ValueError(f"{path}: malformed or unsupported WAV file ({exc})") from exc
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype != np.float32:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}; need PCM16 or float32")
    data = data.T if data.ndim == 2 else data[None, :]
    return SignalBuffer(np.ascontiguousarray(data), rate)


def write_wav(signal: SignalBuffer, path, pcm16: bool = False) -> None:
    x = signal.samples
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    scipy.io.wavfile.write(Path(path), signal.sample_rate, data.T if data.shape[0] > 1 else data[0])

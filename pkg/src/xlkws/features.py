"""Acoustic front-end: MFCC extraction, delta appending, length fitting.

The defaults follow a standard ASR recipe: 25 ms Hamming window, 10 ms hop,
23 mel filters, pre-emphasis 0.97, DCT-II keeping coefficients 0..12 (c0
kept), regression deltas over +-2 frames with edge replication.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    window_length: float = 0.025
    hop_length: float = 0.010
    num_mel_filters: int = 23
    num_cepstra: int = 13
    pre_emphasis: float = 0.97
    log_floor: float = 1e-10
    delta_window: int = 2

    def __post_init__(self):
        if not self.window_length > self.hop_length > 0:
            raise ValueError("require window_length > hop_length > 0")
        if self.num_cepstra > self.num_mel_filters:
            raise ValueError("num_cepstra must not exceed num_mel_filters")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_length * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_length * self.sample_rate))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(num_filters, n_fft, sample_rate):
    """Triangular mel filterbank, (num_filters, n_fft//2 + 1)."""
    low_mel = hz_to_mel(0.0)
    high_mel = hz_to_mel(sample_rate / 2.0)
    mel_points = np.linspace(low_mel, high_mel, num_filters + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((n_fft + 1) * hz_points / sample_rate).astype(int)

    fbank = np.zeros((num_filters, n_fft // 2 + 1))
    for i in range(num_filters):
        left, center, right = bins[i], bins[i + 1], bins[i + 2]
        for k in range(left, center):
            if center > left:
                fbank[i, k] = (k - left) / (center - left)
        for k in range(center, right):
            if right > center:
                fbank[i, k] = (right - k) / (right - center)
    return fbank


def frame_count(num_samples, window_samples, hop_samples):
    """Number of full analysis windows that fit in the signal."""
    if num_samples < window_samples:
        return 0
    return (num_samples - window_samples) // hop_samples + 1


def extract_mfcc(waveform, config: FeatureConfig):
    """Compute (T, num_cepstra) MFCCs from a 1-D sample array."""
    x = np.asarray(waveform, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("waveform contains non-finite samples")
    win = config.window_samples
    hop = config.hop_samples
    if x.size < win:
        raise ValueError(
            f"waveform of {x.size} samples is shorter than one {win}-sample window"
        )

    emphasized = np.concatenate([x[:1], x[1:] - config.pre_emphasis * x[:-1]])

    t = frame_count(emphasized.size, win, hop)
    idx = np.arange(win)[None, :] + hop * np.arange(t)[:, None]
    frames = emphasized[idx] * np.hamming(win)

    n_fft = 1
    while n_fft < win:
        n_fft *= 2
    spectrum = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))

    fbank = mel_filterbank(config.num_mel_filters, n_fft, config.sample_rate)
    energies = spectrum @ fbank.T
    log_energies = np.log(np.maximum(energies, config.log_floor))

    cepstra = scipy.fft.dct(log_energies, type=2, norm="ortho", axis=1)
    return cepstra[:, : config.num_cepstra].astype(np.float32)


def append_deltas(mfcc, delta_window: int = 2):
    """Append regression deltas and delta-deltas: (T, 13) -> (T, 39).

    Uses the standard regression formula over +-delta_window frames with
    edge replication.
    """
    m = np.asarray(mfcc)
    if m.ndim != 2 or m.shape[1] != 13:
        raise ValueError(f"expected (T, 13) static coefficients, got shape {m.shape}")
    d = _deltas(m, delta_window)
    dd = _deltas(d, delta_window)
    return np.hstack([m, d, dd]).astype(m.dtype)


def _deltas(seq, n):
    padded = np.pad(seq, ((n, n), (0, 0)), mode="edge")
    denom = 2.0 * sum(k * k for k in range(1, n + 1))
    out = np.zeros_like(seq, dtype=np.float64)
    for k in range(1, n + 1):
        out += k * (padded[n + k : n + k + seq.shape[0]] - padded[n - k : n - k + seq.shape[0]])
    return (out / denom).astype(seq.dtype)


def fit_length(frames, max_frames: int, min_frames: int = 0):
    """Truncate to max_frames or zero-pad up to min_frames; idempotent."""
    if max_frames < min_frames:
        raise ValueError("max_frames must be >= min_frames")
    t = frames.shape[0]
    if t > max_frames:
        return frames[:max_frames]
    if t < min_frames:
        pad = np.zeros((min_frames - t, frames.shape[1]), dtype=frames.dtype)
        return np.vstack([frames, pad])
    return frames


def compute_standardizer(frame_matrices):
    """Per-dimension mean/std over all frames of the training split."""
    stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in frame_matrices])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return mean.astype(np.float32), std.astype(np.float32)


def standardize(frames, mean, std):
    return ((frames - mean) / std).astype(frames.dtype)

"""Log-magnitude spectral frontend and its vector-Jacobian product."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

EPS_FEATURE = 1e-9
EPS_MAGNITUDE = 1e-9


class ClipTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class Frontend:
    frame_length: int = 256
    hop: int = 128
    eps_feature: float = EPS_FEATURE
    eps_magnitude: float = EPS_MAGNITUDE

    @property
    def n_bins(self) -> int:
        return self.frame_length // 2 + 1

    @cached_property
    def window(self) -> np.ndarray:
        # periodic Hann
        n = np.arange(self.frame_length)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.frame_length)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_length:
            return 0
        return (n_samples - self.frame_length) // self.hop + 1

    def frame_index(self, n_samples: int) -> np.ndarray:
        t = self.n_frames(n_samples)
        return self.hop * np.arange(t)[:, None] + np.arange(self.frame_length)[None, :]

    def to_dict(self) -> dict:
        return {
            "frame_length": self.frame_length,
            "hop": self.hop,
            "eps_feature": self.eps_feature,
            "eps_magnitude": self.eps_magnitude,
            "window": "hann",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Frontend":
        return cls(d["frame_length"], d["hop"], d["eps_feature"], d["eps_magnitude"])


@dataclass
class FeatureCache:
    n_samples: int
    re: np.ndarray
    im: np.ndarray
    mag: np.ndarray


def spectrum(wave: np.ndarray, fe: Frontend):
    """Windowed frames -> (re, im), each (frames, n_bins)."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.size < fe.frame_length:
        raise ClipTooShortError(
            f"{wave.size} samples is shorter than one {fe.frame_length}-sample frame"
        )
    frames = np.lib.stride_tricks.sliding_window_view(wave, fe.frame_length)[::fe.hop]
    spec = np.fft.rfft(frames[:fe.n_frames(wave.size)] * fe.window, axis=1)
    return spec.real, spec.imag


def extract_features(wave: np.ndarray, fe: Frontend, return_cache: bool = False):
    """log(eps_f + sqrt(re^2 + im^2 + eps_m)) per frame and bin.

    ``wave`` is the float waveform in full-scale units ([-1, 1]).
    """
    re, im = spectrum(wave, fe)
    mag = np.sqrt(re * re + im * im + fe.eps_magnitude)
    feats = np.log(fe.eps_feature + mag)
    if return_cache:
        return feats, FeatureCache(np.asarray(wave).size, re, im, mag)
    return feats


def features_vjp(d_feats: np.ndarray, cache: FeatureCache, fe: Frontend) -> np.ndarray:
    """Pull a feature-space gradient back to per-sample gradient."""
    d_mag = d_feats / (fe.eps_feature + cache.mag)
    d_re = d_mag * cache.re / cache.mag
    d_im = d_mag * cache.im / cache.mag
    # d/dx_n = Re sum_k (d_re + i d_im)_k exp(2 pi i k n / N), via one irfft
    z = d_re + 1j * d_im
    z[:, 1:-1] *= 0.5
    d_frames = np.fft.irfft(z, n=fe.frame_length, axis=1) * (fe.frame_length * fe.window)
    return overlap_add(d_frames, cache.n_samples, fe)


def overlap_add(frames: np.ndarray, n_samples: int, fe: Frontend) -> np.ndarray:
    """Sum frame rows back onto the sample axis (transpose of framing)."""
    out = np.zeros(n_samples)
    T = frames.shape[0]
    if fe.frame_length % fe.hop == 0:
        r = fe.frame_length // fe.hop
        blocks = np.zeros((T + r - 1, fe.hop))
        for j in range(r):
            blocks[j:j + T] += frames[:, j * fe.hop:(j + 1) * fe.hop]
        out[:blocks.size] = blocks.ravel()
    else:
        np.add.at(out, fe.frame_index(n_samples), frames)
    return out

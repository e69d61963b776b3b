"""Input-transformation defenses: quantization, local smoothing,
down-sampling with recovery, and frame-level autoencoder reformation.

Every defense has an integer-domain form operating on ``AudioClip`` and a
float form used inside attacks, where gradients must pass through.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio_io import FULL_SCALE, INT16_MAX, INT16_MIN, AudioClip, real_to_int16
from .toy_asr.frontend import Frontend, extract_features

RECOVERY_TAPS = 127
AE_FORMAT = "tdaudio-frame-autoencoder"
AE_VERSION = 1


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


# -- quantization ----------------------------------------------------------

def quantize_values(samples, q: int) -> np.ndarray:
    """Nearest multiple of ``q`` (ties away from zero), clamped to int16."""
    if q < 1:
        raise ValueError("q must be >= 1")
    x = np.asarray(samples, dtype=np.float64)
    out = _round_half_away(x / q) * q
    return np.clip(out, INT16_MIN, INT16_MAX)


def quantize(clip: AudioClip, q: int) -> AudioClip:
    return clip.with_samples(quantize_values(clip.samples, q))


# -- local smoothing -------------------------------------------------------

def _windows(x: np.ndarray, K: int) -> np.ndarray:
    """(n, 2K-1) reference windows, edges replicated."""
    padded = np.pad(x, K - 1, mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, 2 * K - 1)


def smooth_values(samples, kind: str, K: int) -> np.ndarray:
    if K < 1:
        raise ValueError("K must be >= 1")
    x = np.asarray(samples, dtype=np.float64)
    if K == 1:
        return x.copy()
    win = _windows(x, K)
    if kind == "average":
        return win.mean(axis=1)
    if kind == "median":
        return np.median(win, axis=1)
    raise ValueError(f"unknown smoothing kind {kind!r}")


def smooth(clip: AudioClip, kind: str, K: int) -> AudioClip:
    """Replace each sample by the average or median of its 2K-1 neighbourhood."""
    out = smooth_values(clip.samples, kind, K)
    if kind == "average":
        out = _round_half_away(out)
    return clip.with_samples(out)


def _edge_source_index(n: int, K: int) -> np.ndarray:
    """Source sample of each window slot, for edge-replicated windows."""
    idx = np.clip(np.arange(n + 2 * (K - 1)) - (K - 1), 0, n - 1)
    return np.lib.stride_tricks.sliding_window_view(idx, 2 * K - 1)


def average_smooth_adjoint(grad_out: np.ndarray, K: int) -> np.ndarray:
    """Transpose of the average smoother applied to an output gradient."""
    n = grad_out.size
    if K == 1:
        return grad_out.copy()
    src = _edge_source_index(n, K)
    g = np.zeros(n)
    np.add.at(g, src, np.repeat(grad_out[:, None] / (2 * K - 1), 2 * K - 1, axis=1))
    return g


def median_with_routes(x: np.ndarray, K: int):
    """Median smoothing plus, per output, the input index it was taken from.

    Ties route to the lowest input index holding the median value.
    """
    n = x.size
    if K == 1:
        return x.copy(), np.arange(n)
    win = _windows(x, K)
    src = _edge_source_index(n, K)
    order = np.argsort(win, axis=1, kind="stable")
    mid = order[:, K - 1]
    med = win[np.arange(n), mid]
    # lowest source index among slots equal to the median
    cand = np.where(win == med[:, None], src, n)
    return med, cand.min(axis=1)


def median_smooth_adjoint(grad_out: np.ndarray, routes: np.ndarray) -> np.ndarray:
    g = np.zeros(grad_out.size)
    np.add.at(g, routes, grad_out)
    return g


# -- down-sampling with recovery --------------------------------------------

def lowpass_taps(cutoff: float, n_taps: int = RECOVERY_TAPS) -> np.ndarray:
    """Hann-windowed sinc low-pass; ``cutoff`` as a fraction of the sample rate."""
    m = np.arange(n_taps) - (n_taps - 1) / 2
    h = 2 * cutoff * np.sinc(2 * cutoff * m) * np.hanning(n_taps)
    return h / h.sum()


def _recovery_cutoff(factor: int) -> float:
    return 0.9 * 0.5 / factor


def _filter(x, taps):
    # centered, zero-padded; symmetric odd taps make this self-adjoint
    return np.convolve(x, taps, mode="same")


def downsample_values(x, factor: int, n_taps: int = RECOVERY_TAPS) -> np.ndarray:
    """Low-pass, decimate by ``factor``, zero-stuff back and interpolate."""
    if factor < 2:
        raise ValueError("factor must be >= 2")
    x = np.asarray(x, dtype=np.float64)
    if x.size <= n_taps:
        raise ValueError(f"clip of {x.size} samples is not longer than the {n_taps}-tap filter")
    taps = lowpass_taps(_recovery_cutoff(factor), n_taps)
    low = _filter(x, taps)[::factor]
    return upsample_values(low, factor, x.size, n_taps)


def upsample_values(low, factor: int, n: int, n_taps: int = RECOVERY_TAPS) -> np.ndarray:
    """Zero-insertion to length ``n`` followed by the gain-``factor`` interpolator."""
    taps = lowpass_taps(_recovery_cutoff(factor), n_taps)
    stuffed = np.zeros(n)
    m = min(len(low), len(stuffed[::factor]))
    stuffed[::factor][:m] = low[:m]
    return factor * _filter(stuffed, taps)


def upsample_adjoint(grad_out, factor: int, n_low: int, n_taps: int = RECOVERY_TAPS) -> np.ndarray:
    taps = lowpass_taps(_recovery_cutoff(factor), n_taps)
    g = factor * _filter(grad_out, taps)[::factor]
    out = np.zeros(n_low)
    out[:min(n_low, g.size)] = g[:n_low]
    return out


def downsample_adjoint(grad_out, factor: int, n_taps: int = RECOVERY_TAPS) -> np.ndarray:
    taps = lowpass_taps(_recovery_cutoff(factor), n_taps)
    n = grad_out.size
    n_low = len(range(0, n, factor))
    g_low = upsample_adjoint(grad_out, factor, n_low, n_taps)
    spread = np.zeros(n)
    spread[::factor] = g_low
    return _filter(spread, taps)


def downsample_defense(clip: AudioClip, factor: int = 2) -> AudioClip:
    out = downsample_values(clip.samples, factor)
    return clip.with_samples(np.clip(np.round(out), INT16_MIN, INT16_MAX))


# -- frame autoencoder -------------------------------------------------------

class InsufficientFramesError(ValueError):
    pass


@dataclass
class FrameAutoencoder:
    """Linear principal-subspace projector over log-magnitude frames."""

    mean: np.ndarray
    basis: np.ndarray  # (n_bins, rank), orthonormal columns
    eigenvalues: np.ndarray
    frontend: Frontend
    sample_rate: int = 16000

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    def project(self, frames: np.ndarray) -> np.ndarray:
        z = (frames - self.mean) @ self.basis
        return self.mean + z @ self.basis.T

    def to_dict(self) -> dict:
        return {
            "format": AE_FORMAT,
            "version": AE_VERSION,
            "frontend": self.frontend.to_dict(),
            "sample_rate": self.sample_rate,
            "mean": self.mean.tolist(),
            "basis": self.basis.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameAutoencoder":
        if d.get("format") != AE_FORMAT or d.get("version") != AE_VERSION:
            raise ValueError(f"not a {AE_FORMAT} v{AE_VERSION} file")
        return cls(np.asarray(d["mean"]), np.asarray(d["basis"]).reshape(len(d["mean"]), -1),
                   np.asarray(d["eigenvalues"]), Frontend.from_dict(d["frontend"]),
                   d["sample_rate"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "FrameAutoencoder":
        return cls.from_dict(json.loads(Path(path).read_text()))


def autoencoder_fit(corpus, rank: int, frontend: Frontend | None = None) -> FrameAutoencoder:
    """Mean and top-``rank`` principal directions of the corpus frames."""
    frontend = frontend or Frontend()
    corpus = list(corpus)
    frames = np.concatenate([extract_features(c.to_real().values, frontend) for c in corpus])
    if rank < 1 or frames.shape[0] < rank or rank > frames.shape[1]:
        raise InsufficientFramesError(
            f"rank {rank} needs at least {rank} frames of dimension >= {rank}, "
            f"got {frames.shape[0]} x {frames.shape[1]}"
        )
    mean = frames.mean(axis=0)
    _, sv, vt = np.linalg.svd(frames - mean, full_matrices=False)
    basis = vt[:rank].T
    # sign convention: largest-magnitude entry of each direction is positive
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(rank)])
    basis = basis * flip
    eig = sv[:rank] ** 2 / frames.shape[0]
    rate = corpus[0].sample_rate if corpus else 16000
    return FrameAutoencoder(mean, basis, eig, frontend, rate)


def _stft_padding(n: int, fe: Frontend) -> tuple[int, int]:
    front = fe.frame_length - fe.hop
    total = n + front
    back = front
    rem = (total + back - fe.frame_length) % fe.hop
    if rem:
        back += fe.hop - rem
    return front, back


def autoencoder_reform_values(x: np.ndarray, ae: FrameAutoencoder) -> np.ndarray:
    """Project frame log-magnitudes, keep the input phase, overlap-add."""
    fe = ae.frontend
    x = np.asarray(x, dtype=np.float64)
    front, back = _stft_padding(x.size, fe)
    padded = np.pad(x, (front, back))
    idx = fe.frame_index(padded.size)
    spec = np.fft.rfft(padded[idx] * fe.window, axis=1)
    mag = np.abs(spec)
    feats = np.log(fe.eps_feature + np.sqrt(mag * mag + fe.eps_magnitude))
    rebuilt = np.exp(ae.project(feats)) - fe.eps_feature
    new_mag = np.sqrt(np.maximum(rebuilt * rebuilt - fe.eps_magnitude, 0.0))
    phase = np.where(mag > 0, spec / np.where(mag > 0, mag, 1.0), 0.0)
    frames = np.fft.irfft(new_mag * phase, n=fe.frame_length, axis=1) * fe.window
    out = np.zeros(padded.size)
    norm = np.zeros(padded.size)
    np.add.at(out, idx, frames)
    np.add.at(norm, idx, np.broadcast_to(fe.window ** 2, frames.shape))
    out = out / np.where(norm > 1e-12, norm, 1.0)
    return out[front:front + x.size]


def autoencoder_reform(clip: AudioClip, ae: FrameAutoencoder) -> AudioClip:
    if clip.sample_rate != ae.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} Hz, autoencoder expects {ae.sample_rate} Hz")
    out = autoencoder_reform_values(clip.samples / FULL_SCALE, ae)
    return clip.with_samples(real_to_int16(out))


# -- spec-driven dispatch ----------------------------------------------------

TRANSFORM_KINDS = ("identity", "quantize", "smooth", "downsample", "autoencoder")


@dataclass(frozen=True)
class TransformSpec:
    kind: str = "identity"
    q: int = 256
    smooth_kind: str = "median"
    K: int = 4
    factor: int = 2
    rank: int = 32
    autoencoder_path: str | None = None

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {self.kind!r}")
        if self.q < 1 or self.K < 1 or self.factor < 2 or self.rank < 1:
            raise ValueError("transform parameters out of range")
        if self.smooth_kind not in ("average", "median"):
            raise ValueError(f"unknown smoothing kind {self.smooth_kind!r}")

    def describe(self) -> dict:
        """Only the fields meaningful for this kind."""
        keep = {
            "identity": (),
            "quantize": ("q",),
            "smooth": ("smooth_kind", "K"),
            "downsample": ("factor",),
            "autoencoder": ("rank", "autoencoder_path"),
        }[self.kind]
        d = asdict(self)
        return {"kind": self.kind, **{k: d[k] for k in keep}}

    @property
    def label(self) -> str:
        return {
            "identity": "identity",
            "quantize": f"quantize-{self.q}",
            "smooth": f"{self.smooth_kind}-{self.K}",
            "downsample": f"downsample-{self.factor}",
            "autoencoder": f"autoencoder-{self.rank}",
        }[self.kind]


def apply_transform(clip: AudioClip, spec: TransformSpec, ae: FrameAutoencoder | None = None) -> AudioClip:
    if spec.kind == "identity":
        return clip
    if spec.kind == "quantize":
        return quantize(clip, spec.q)
    if spec.kind == "smooth":
        return smooth(clip, spec.smooth_kind, spec.K)
    if spec.kind == "downsample":
        return downsample_defense(clip, spec.factor)
    if ae is None:
        if spec.autoencoder_path is None:
            raise ValueError("autoencoder transform needs a fitted autoencoder")
        ae = FrameAutoencoder.load(spec.autoencoder_path)
    return autoencoder_reform(clip, ae)

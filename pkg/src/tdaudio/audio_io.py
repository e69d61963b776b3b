"""Waveform containers, RIFF/WAVE PCM16 I/O and loudness metrics."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INT16_MIN = -32768
INT16_MAX = 32767
FULL_SCALE = 32768.0
DEFAULT_RATE = 16000


class WavError(Exception):
    """Base class for WAV reading problems."""


class MalformedWavError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class TruncatedWavError(WavError):
    pass


class UndefinedLoudnessError(ValueError):
    """Raised when dB is requested for an all-zero signal."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono 16-bit PCM clip.

    ``samples`` is stored as an int16 numpy array; construction validates the
    range so downstream code never sees wrapped values.
    """

    id: str
    samples: np.ndarray
    sample_rate: int = DEFAULT_RATE

    def __post_init__(self):
        raw = np.asarray(self.samples)
        if raw.ndim != 1 or raw.size == 0:
            raise ValueError("samples must be a non-empty 1-D sequence")
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ValueError("samples must be integers")
        if raw.min() < INT16_MIN or raw.max() > INT16_MAX:
            raise ValueError("samples outside the signed 16-bit range")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        arr = raw.astype(np.int16)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return int(self.samples.size)

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return (
            self.id == other.id
            and self.sample_rate == other.sample_rate
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def to_real(self) -> "RealWave":
        return RealWave(self.samples.astype(np.float64) / FULL_SCALE, self.sample_rate)

    def with_samples(self, samples, id: str | None = None) -> "AudioClip":
        return AudioClip(self.id if id is None else id, samples, self.sample_rate)


@dataclass(frozen=True, eq=False)
class RealWave:
    """Float waveform in [-1, 1] used for gradients and perturbations."""

    values: np.ndarray
    sample_rate: int = DEFAULT_RATE

    def to_clip(self, id: str) -> AudioClip:
        return AudioClip(id, real_to_int16(self.values), self.sample_rate)


def real_to_int16(values) -> np.ndarray:
    """Round a float waveform to int16, saturating at the format limits."""
    scaled = np.round(np.asarray(values, dtype=np.float64) * FULL_SCALE)
    return np.clip(scaled, INT16_MIN, INT16_MAX).astype(np.int16)


def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)
    if pos < len(data):
        raise MalformedWavError(f"dangling bytes after last chunk at offset {pos}")


def parse_wav(data: bytes, id: str = "") -> AudioClip:
    if len(data) < 12:
        raise MalformedWavError("file too short for a RIFF header")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise MalformedWavError("missing RIFF/WAVE signature")

    fmt = None
    pcm = None
    for cid, start, size in _chunks(data):
        if cid == b"fmt ":
            if size < 16 or start + 16 > len(data):
                raise MalformedWavError("fmt chunk too small")
            fmt = struct.unpack_from("<HHIIHH", data, start)
        elif cid == b"data":
            if fmt is None:
                raise MalformedWavError("data chunk precedes fmt chunk")
            if start + size > len(data):
                raise TruncatedWavError(
                    f"data chunk declares {size} bytes, only {len(data) - start} present"
                )
            pcm = data[start:start + size]
            break
    if fmt is None:
        raise MalformedWavError("no fmt chunk")
    tag, channels, rate, _, _, bits = fmt
    if tag != 1:
        raise UnsupportedEncodingError(f"format tag {tag} is not PCM")
    if channels != 1:
        raise UnsupportedEncodingError(f"{channels} channels, only mono is supported")
    if bits != 16:
        raise UnsupportedEncodingError(f"{bits}-bit samples, only 16-bit is supported")
    if pcm is None:
        raise MalformedWavError("no data chunk")
    if len(pcm) % 2:
        raise TruncatedWavError("odd number of bytes in 16-bit data chunk")
    if not pcm:
        raise MalformedWavError("data chunk is empty")
    if rate == 0:
        raise MalformedWavError("sample rate is zero")
    return AudioClip(id, np.frombuffer(pcm, dtype="<i2"), rate)


def read_wav(path, id: str | None = None) -> AudioClip:
    """Read a PCM16 mono WAV. The clip id defaults to the file stem."""
    path = Path(path)
    return parse_wav(path.read_bytes(), path.stem if id is None else id)


def wav_bytes(clip: AudioClip) -> bytes:
    pcm = clip.samples.astype("<i2").tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16,
        b"data", len(pcm),
    )
    return header + pcm


def write_wav(clip: AudioClip, path) -> None:
    """Write ``clip`` with the canonical 44-byte header."""
    Path(path).write_bytes(wav_bytes(clip))


def db_scale(clip) -> float:
    """Peak loudness max_i 20*log10|x_i| on the raw int16 scale.

    Accepts an AudioClip or any integer-scale array.
    """
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    peak = float(np.max(np.abs(samples.astype(np.float64))))
    if peak == 0.0:
        raise UndefinedLoudnessError("all-zero signal has no dB level")
    return 20.0 * math.log10(peak)


def db_distortion(x, delta) -> float:
    """Relative perturbation loudness dB(delta) - dB(x)."""
    if isinstance(x, AudioClip) and isinstance(delta, AudioClip):
        if x.sample_rate != delta.sample_rate:
            raise ValueError("sample rate mismatch")
    if len(x) != len(delta):
        raise ValueError(f"length mismatch: {len(x)} vs {len(delta)}")
    return db_scale(delta) - db_scale(x)

"""Deterministic tone-speech synthesis and the standard synthetic corpus."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..audio_io import DEFAULT_RATE, AudioClip, real_to_int16
from .model import ALPHABET, AlphabetError

LETTERS = ALPHABET.strip()


@dataclass(frozen=True)
class SynthesisSpec:
    base_hz: float = 400.0
    step_hz: float = 120.0
    char_ms: float = 80.0
    amplitude: float = 0.3
    ramp_ms: float = 5.0
    noise_sigma: float = 0.005
    sample_rate: int = DEFAULT_RATE
    seed: int = 0

    def with_seed(self, seed: int) -> "SynthesisSpec":
        return replace(self, seed=seed)

    def tone_hz(self, char: str) -> float:
        return self.base_hz + self.step_hz * LETTERS.index(char)


def _segment(spec: SynthesisSpec, char: str) -> np.ndarray:
    n = int(round(spec.char_ms * spec.sample_rate / 1000))
    if char == " ":
        return np.zeros(n)
    t = np.arange(n) / spec.sample_rate
    tone = spec.amplitude * np.sin(2 * np.pi * spec.tone_hz(char) * t)
    r = int(round(spec.ramp_ms * spec.sample_rate / 1000))
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
    env = np.ones(n)
    env[:r] = ramp
    env[n - r:] = ramp[::-1]
    return tone * env


def synthesize_wave(text: str, spec: SynthesisSpec = SynthesisSpec()) -> np.ndarray:
    if not text:
        raise ValueError("cannot synthesize an empty transcript")
    bad = sorted(set(text) - set(ALPHABET))
    if bad:
        raise AlphabetError(f"characters {bad!r} are outside the synthesis alphabet")
    wave = np.concatenate([_segment(spec, c) for c in text])
    noise = np.random.default_rng(spec.seed).normal(0.0, spec.noise_sigma, wave.size)
    return wave + noise


def synthesize(text: str, spec: SynthesisSpec = SynthesisSpec(), id: str = "") -> AudioClip:
    """One tone per character, silence for spaces, plus seeded noise."""
    return AudioClip(id or text.replace(" ", "_"), real_to_int16(synthesize_wave(text, spec)),
                     spec.sample_rate)


def random_word(rng: np.random.Generator, min_chars=2, max_chars=5) -> str:
    # no doubled letters: equal neighbouring tones would merge into one
    n = int(rng.integers(min_chars, max_chars + 1))
    chars = [LETTERS[int(rng.integers(len(LETTERS)))]]
    while len(chars) < n:
        c = LETTERS[int(rng.integers(len(LETTERS)))]
        if c != chars[-1]:
            chars.append(c)
    return "".join(chars)


def random_sentence(rng: np.random.Generator, min_words=3, max_words=8) -> str:
    n = int(rng.integers(min_words, max_words + 1))
    return " ".join(random_word(rng) for _ in range(n))


def make_corpus(n: int, seed: int, min_words=3, max_words=8) -> list[tuple[str, int]]:
    """``n`` (text, noise seed) pairs, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        text = random_sentence(rng, min_words, max_words)
        out.append((text, int(rng.integers(2**31))))
    return out


def standard_corpus(seed: int = 0, n_train: int = 400, n_heldout: int = 100):
    """The 400/100 split used for training and held-out evaluation."""
    items = make_corpus(n_train + n_heldout, seed)
    return items[:n_train], items[n_train:]

"""Temporal-dependency consistency check.

Transcribe the first k portion of a clip, transcribe the whole clip and cut
that transcript to the same length, then measure how far apart the two are.
Benign audio keeps its meaning when cut; perturbations tuned against the
whole clip tend not to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .attacks import clip_rng
from .audio_io import AudioClip
from .backends import TranscriptionError
from .text_metrics import cer, lcp, normalize_text, wer

METRICS = ("wer", "cer", "lcp")
TRUNCATIONS = ("auto", "word", "char")
PREFIX_SUFFIX = "#prefix"


class DegeneratePrefixError(ValueError):
    pass


@dataclass(frozen=True)
class TdConfig:
    """Fixed ``k`` unless ``k_rand = (a, b)`` is given, then k ~ Uniform(a, b) per clip.

    ``truncation="auto"`` cuts by words for WER and LCP and by characters for CER.
    """

    k: float = 0.5
    k_rand: tuple | None = None
    metric: str = "wer"
    truncation: str = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.k_rand is not None:
            a, b = self.k_rand
            if not 0 < a < b < 1:
                raise ValueError("k_rand needs 0 < a < b < 1")
            object.__setattr__(self, "k_rand", (float(a), float(b)))
        elif not 0 < self.k < 1:
            raise ValueError("k must lie strictly between 0 and 1")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.truncation not in TRUNCATIONS:
            raise ValueError(f"unknown truncation {self.truncation!r}")

    @property
    def label(self) -> str:
        if self.k_rand is not None:
            return "rand({:g},{:g})".format(*self.k_rand)
        return f"{self.k:.4g}"

    def k_for(self, clip_id: str) -> float:
        if self.k_rand is None:
            return self.k
        return float(clip_rng(self.seed, clip_id).uniform(*self.k_rand))

    def granularity(self, metric: str) -> str:
        if self.truncation != "auto":
            return self.truncation
        return "char" if metric == "cer" else "word"

    def describe(self) -> dict:
        return {"k": None if self.k_rand else self.k,
                "k_rand": None if self.k_rand is None else list(self.k_rand),
                "metric": self.metric, "truncation": self.truncation, "seed": self.seed}


@dataclass
class TdOutcome:
    clip_id: str
    k: float
    s_k: str
    whole: str
    s_whole_k: dict  # granularity -> truncated whole transcript
    distances: dict  # metric -> distance


@dataclass
class DetectionRecord:
    id: str
    label: int
    k: float | None
    score: float | None
    distances: dict = field(default_factory=dict)
    s_k: str = ""
    s_whole_k: str = ""
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def split_prefix(clip: AudioClip, k: float) -> AudioClip:
    """First floor(k N) samples; the id gains a ``#prefix`` suffix so lookups stay distinct."""
    n = int(math.floor(k * len(clip)))
    if n < 1:
        raise DegeneratePrefixError(f"k={k} leaves no samples of {clip.id!r}")
    return clip.with_samples(clip.samples[:n], clip.id + PREFIX_SUFFIX)


def truncate_transcript(whole: str, reference: str, granularity: str = "word") -> str:
    """Cut ``whole`` to the word (or character) length of ``reference``."""
    if granularity == "word":
        w = whole.split()
        return " ".join(w[:min(len(reference.split()), len(w))])
    if granularity == "char":
        return normalize_text(whole[:min(len(reference), len(whole))])
    raise ValueError(f"unknown granularity {granularity!r}")


def consistency_distance(s_k: str, s_whole_k: str, metric: str) -> float:
    """Distance between the prefix and truncated-whole transcripts; 0 when both are empty."""
    if not s_k and not s_whole_k:
        return 0.0
    if not s_k or not s_whole_k:
        return 1.0
    if metric == "wer":
        return wer(s_k, s_whole_k)
    if metric == "cer":
        return cer(s_k, s_whole_k)
    if metric == "lcp":
        return 1.0 - lcp(s_k, s_whole_k) / max(len(s_k), len(s_whole_k))
    raise ValueError(f"unknown metric {metric!r}")


def td_from_transcripts(clip_id: str, k: float, s_k: str, whole: str, cfg: TdConfig) -> TdOutcome:
    s_k, whole = normalize_text(s_k), normalize_text(whole)
    cuts, dist = {}, {}
    for metric in METRICS:
        g = cfg.granularity(metric)
        cuts[g] = truncate_transcript(whole, s_k, g)
        dist[metric] = consistency_distance(s_k, cuts[g], metric)
    return TdOutcome(clip_id, k, s_k, whole, cuts, dist)


def td_score(backend, clip: AudioClip, cfg: TdConfig, whole: str | None = None) -> TdOutcome:
    """Score one clip; ``whole`` may carry an already computed full transcript."""
    k = cfg.k_for(clip.id)
    prefix = split_prefix(clip, k)
    if whole is None:
        whole = backend.transcribe(clip)
    return td_from_transcripts(clip.id, k, backend.transcribe(prefix), whole, cfg)


def detect_batch(backend, clips, cfg: TdConfig, wholes: dict | None = None) -> list[DetectionRecord]:
    """One record per (clip, label) pair, failures included with their error."""
    records = []
    for clip, label in clips:
        try:
            whole = None if wholes is None else wholes.get(clip.id)
            out = td_score(backend, clip, cfg, whole)
        except (TranscriptionError, DegeneratePrefixError) as exc:
            records.append(DetectionRecord(clip.id, int(label), None, None,
                                           error=f"{type(exc).__name__}: {exc}"))
            continue
        records.append(DetectionRecord(
            clip.id, int(label), out.k, out.distances[cfg.metric], dict(out.distances),
            out.s_k, out.s_whole_k[cfg.granularity(cfg.metric)]))
    return records

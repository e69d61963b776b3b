"""Optimization attacks on the toy recognizer and their adaptive variants.

All attacks minimise ||delta||^2 + c * loss over the perturbation with Adam,
walking an ascending list of c values (each warm-started from the last) and
stopping at the first success.
Waveforms are handled in normalized amplitude (int16 / 32768).
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .audio_io import FULL_SCALE, INT16_MAX, AudioClip, RealWave, UndefinedLoudnessError, db_distortion, real_to_int16
from .optim import Adam
from .text_metrics import normalize_text
from .toy_asr.ctc import min_frames
from .toy_asr.model import ToyAsrModel
from .transforms import (
    TransformSpec,
    _round_half_away,
    apply_transform,
    average_smooth_adjoint,
    downsample_adjoint,
    downsample_values,
    median_smooth_adjoint,
    median_with_routes,
    quantize_values,
    smooth_values,
    upsample_adjoint,
    upsample_values,
)

VARIANTS = ("plain", "segment", "concat_split", "concat_silence", "combination")
ADAPTIVE_KINDS = ("quantize", "downsample", "smooth")
UPPER = INT16_MAX / FULL_SCALE


class AttackSetupError(ValueError):
    """The clip (or one of its parts) cannot carry the requested target."""


@dataclass(frozen=True)
class AttackConfig:
    target: str
    c_schedule: tuple = (0.1, 1.0, 10.0, 100.0)
    iterations: int = 1000
    step: float = 0.002
    adaptive: TransformSpec | None = None
    variant: str = "plain"
    k: float = 0.5
    k_A: tuple = (0.5,)
    k_rand: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "target", normalize_text(self.target))
        object.__setattr__(self, "c_schedule", tuple(float(c) for c in self.c_schedule))
        object.__setattr__(self, "k_A", tuple(float(k) for k in self.k_A))
        if not self.c_schedule:
            raise ValueError("empty c schedule")
        if any(c < 0 for c in self.c_schedule) or any(
                b <= a for a, b in zip(self.c_schedule, self.c_schedule[1:])):
            raise ValueError("c schedule must be non-negative and strictly ascending")
        if self.iterations < 1 or self.step <= 0:
            raise ValueError("iterations and step must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attack variant {self.variant!r}")
        if self.adaptive is not None and self.adaptive.kind not in ADAPTIVE_KINDS:
            raise ValueError(f"no adaptive attack for transform {self.adaptive.kind!r}")
        if not 0 < self.k < 1 or not all(0 < k < 1 for k in self.k_A):
            raise ValueError("every k must lie strictly between 0 and 1")
        if self.k_rand is not None:
            a, b = self.k_rand
            if not 0 < a < b < 1:
                raise ValueError("k_rand needs 0 < a < b < 1")
            object.__setattr__(self, "k_rand", (float(a), float(b)))

    def describe(self) -> dict:
        return {
            "target": self.target,
            "c_schedule": list(self.c_schedule),
            "iterations": self.iterations,
            "step": self.step,
            "optimizer": "adam",
            "adaptive": None if self.adaptive is None else self.adaptive.describe(),
            "variant": self.variant,
            "k": self.k,
            "k_A": None if self.k_rand else list(self.k_A),
            "k_rand": None if self.k_rand is None else list(self.k_rand),
            "seed": self.seed,
        }


@dataclass
class AttackResult:
    clip_id: str
    variant: str
    target: str
    success: bool
    transcript: str
    adversarial: AudioClip
    delta: RealWave
    db: float
    c: float | None
    iterations: int
    objective_trace: list = field(default_factory=list)
    prefix_transcripts: dict = field(default_factory=dict)
    parts: list = field(default_factory=list)

    def to_record(self) -> dict:
        rec = {
            "id": self.clip_id,
            "variant": self.variant,
            "target": self.target,
            "success": self.success,
            "transcript": self.transcript,
            "db": self.db,
            "c": self.c,
            "iterations": self.iterations,
        }
        if self.prefix_transcripts:
            rec["prefix_transcripts"] = dict(self.prefix_transcripts)
        if self.parts:
            rec["parts"] = list(self.parts)
        return rec


def prefix_words(text: str, k: float) -> str:
    """First ceil(k * word count) words."""
    w = text.split()
    return " ".join(w[:math.ceil(k * len(w))])


def clip_rng(seed: int, clip_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(clip_id.encode("utf-8"))])


def relative_db(x: AudioClip, adversarial: AudioClip) -> float:
    """dB_x of the int16 perturbation; -inf when nothing changed."""
    delta = adversarial.samples.astype(np.int64) - x.samples
    if not delta.any():
        return -math.inf
    try:
        return db_distortion(x, delta)
    except UndefinedLoudnessError:
        return math.nan


def _fits(model: ToyAsrModel, n_samples: int, ids) -> bool:
    return model.frontend.n_frames(n_samples) >= max(1, min_frames(ids))


# -- the parameterisations of delta ------------------------------------------

class _Direct:
    """delta itself, optionally masked to a prefix."""

    def __init__(self, n, limit=None):
        self.n = n
        self.mask = None
        if limit is not None:
            self.mask = np.zeros(n)
            self.mask[:limit] = 1.0

    def init(self):
        return np.zeros(self.n)

    def apply(self, p):
        return p if self.mask is None else p * self.mask

    def adjoint(self, g):
        return g if self.mask is None else g * self.mask


class _Quantized:
    """delta = q * round(v / q): every step a multiple of q; straight-through gradient."""

    def __init__(self, n, q):
        self.n = n
        self.step = q / FULL_SCALE

    def init(self):
        return np.zeros(self.n)

    def apply(self, p):
        return self.step * _round_half_away(p / self.step)

    def adjoint(self, g):
        return g


class _Decimated:
    """delta lives on the decimated grid and is interpolated back to full rate."""

    def __init__(self, n, factor):
        self.n = n
        self.factor = factor
        self.n_low = len(range(0, n, factor))

    def init(self):
        return np.zeros(self.n_low)

    def apply(self, p):
        return upsample_values(p, self.factor, self.n)

    def adjoint(self, g):
        return upsample_adjoint(g, self.factor, self.n_low)


def _defense_forward(spec: TransformSpec | None, wave: np.ndarray):
    """Float form of the defense plus a function pulling gradients back."""
    if spec is None:
        return wave, lambda g: g
    if spec.kind == "quantize":
        out = quantize_values(wave * FULL_SCALE, spec.q) / FULL_SCALE
        return out, lambda g: g
    if spec.kind == "downsample":
        return downsample_values(wave, spec.factor), lambda g: downsample_adjoint(g, spec.factor)
    if spec.smooth_kind == "average":
        return smooth_values(wave, "average", spec.K), lambda g: average_smooth_adjoint(g, spec.K)
    out, routes = median_with_routes(wave, spec.K)
    return out, lambda g: median_smooth_adjoint(g, routes)


def _param(cfg: AttackConfig, n: int, limit=None):
    spec = cfg.adaptive
    if spec is not None and spec.kind == "quantize":
        return _Quantized(n, spec.q)
    if spec is not None and spec.kind == "downsample":
        return _Decimated(n, spec.factor)
    return _Direct(n, limit)


# -- the optimization loop -----------------------------------------------------

def _optimize(model: ToyAsrModel, clip: AudioClip, cfg: AttackConfig, limit=None,
              prefix_ks=(), k_rand=None, rng=None) -> AttackResult:
    x = clip.to_real().values
    n = x.size
    ids = model.encode(cfg.target)
    if not _fits(model, n, ids):
        raise AttackSetupError(f"clip {clip.id!r} has too few frames for target {cfg.target!r}")
    fixed = []
    for k in prefix_ks:
        m = int(math.floor(k * n))
        t_k = prefix_words(cfg.target, k)
        if not _fits(model, m, model.encode(t_k)):
            raise AttackSetupError(f"prefix k={k} of {clip.id!r} cannot carry {t_k!r}")
        fixed.append((k, m, t_k, model.encode(t_k)))
    judge = cfg.adaptive
    par = _param(cfg, n, limit)

    def verdict(xa):
        adv = clip.with_samples(real_to_int16(xa))
        seen = adv if judge is None else apply_transform(adv, judge)
        text = model.transcribe(seen)
        prefixes = {}
        ok = text == cfg.target
        for k, m, t_k, _ in fixed:
            prefixes[repr(k)] = model.transcribe_wave(seen.to_real().values[:m])
            ok = ok and prefixes[repr(k)] == t_k
        return ok, adv, text, prefixes

    total = 0
    last = None
    # each c continues from the perturbation the previous c reached
    p = {"p": par.init()}
    for c in cfg.c_schedule:
        opt = Adam(p, lr=cfg.step)
        best = math.inf
        trace = []
        for it in range(cfg.iterations + 1):
            applied = par.apply(p["p"])
            xa = np.clip(x + applied, -1.0, UPPER)
            inp, pull = _defense_forward(judge, xa)
            loss, g, logits = model.loss_and_wave_grad_ids(inp, ids)
            g = pull(g)
            candidate = model.greedy_decode(logits) == cfg.target
            terms = [(m, t_ids) for _, m, _, t_ids in fixed]
            if k_rand is not None:
                k = rng.uniform(*k_rand)
                m = int(math.floor(k * n))
                t_ids = model.encode(prefix_words(cfg.target, k))
                if _fits(model, m, t_ids):
                    terms.append((m, t_ids))
            for m, t_ids in terms:
                l_k, g_k, _ = model.loss_and_wave_grad_ids(xa[:m], t_ids)
                loss += l_k
                g[:m] += g_k
            objective = float(applied @ applied) + c * loss
            best = min(best, objective)
            trace.append(best)
            if candidate:
                ok, adv, text, prefixes = verdict(xa)
                if ok:
                    return _result(clip, cfg, True, text, adv, c, total, trace, prefixes)
            if it == cfg.iterations:
                break
            total += 1
            opt.step({"p": par.adjoint(2.0 * applied + c * g)})
            # keep x + delta inside the int16 range
            if isinstance(par, _Direct):
                p["p"] = np.clip(x + p["p"], -1.0, UPPER) - x
                if par.mask is not None:
                    p["p"] *= par.mask
        last = (c, xa, trace)
    c, xa, trace = last
    ok, adv, text, prefixes = verdict(xa)
    return _result(clip, cfg, ok, text, adv, c, total, trace, prefixes)


def _result(clip, cfg, success, text, adv, c, iterations, trace, prefixes) -> AttackResult:
    delta = (adv.samples.astype(np.int64) - clip.samples) / FULL_SCALE
    return AttackResult(clip.id, cfg.variant, cfg.target, bool(success), text, adv,
                        RealWave(delta, clip.sample_rate), relative_db(clip, adv), c,
                        iterations, trace, prefixes)


# -- public attacks --------------------------------------------------------------

def opt_attack(model: ToyAsrModel, clip: AudioClip, cfg: AttackConfig) -> AttackResult:
    """Plain optimization attack; success means the decode equals the target."""
    return _optimize(model, clip, replace(cfg, adaptive=None, variant="plain"))


def adaptive_transform_attack(model: ToyAsrModel, clip: AudioClip, cfg: AttackConfig) -> AttackResult:
    """Attack through a defense; success is judged on the transformed audio."""
    if cfg.adaptive is None:
        raise ValueError("adaptive attack needs an adaptive transform")
    return _optimize(model, clip, replace(cfg, variant="plain"))


def segment_attack(model: ToyAsrModel, clip: AudioClip, cfg: AttackConfig) -> AttackResult:
    """Perturb only the first floor(k N) samples, aiming at the full target."""
    cfg = replace(cfg, variant="segment", adaptive=None)
    return _optimize(model, clip, cfg, limit=int(math.floor(cfg.k * len(clip))))


def concat_attack(model: ToyAsrModel, clip: AudioClip, cfg: AttackConfig) -> AttackResult:
    """Attack the two parts as independent clips, then join them back.

    concat_split aims the prefix at the first words of the target and the
    rest at the remaining words; concat_silence aims the prefix at the whole
    target and the rest at an empty transcript.
    """
    if cfg.variant not in ("concat_split", "concat_silence"):
        raise ValueError(f"not a concatenation variant: {cfg.variant!r}")
    n1 = int(math.floor(cfg.k * len(clip)))
    if cfg.variant == "concat_split":
        t1 = prefix_words(cfg.target, cfg.k)
        t2 = cfg.target[len(t1):].strip()
    else:
        t1, t2 = cfg.target, ""
    pieces = [(clip.with_samples(clip.samples[:n1], clip.id + "#1"), t1),
              (clip.with_samples(clip.samples[n1:], clip.id + "#2"), t2)]
    results = []
    for part, t in pieces:
        if part.samples.size < model.frontend.frame_length:
            raise AttackSetupError(f"part {part.id!r} is shorter than one frame")
        results.append(opt_attack(model, part, replace(cfg, target=t)))
    joined = clip.with_samples(np.concatenate([r.adversarial.samples for r in results]))
    text = model.transcribe(joined)
    res = _result(clip, cfg, text == cfg.target, text, joined, None,
                  sum(r.iterations for r in results), [], {})
    res.parts = [{"id": r.clip_id, "target": r.target, "success": r.success,
                  "transcript": r.transcript, "c": r.c, "iterations": r.iterations}
                 for r in results]
    return res


def combination_attack(model: ToyAsrModel, clip: AudioClip, cfg: AttackConfig) -> AttackResult:
    """Full-clip loss plus one prefix loss per k in k_A (or a fresh Rand k per step)."""
    cfg = replace(cfg, variant="combination", adaptive=None)
    if cfg.k_rand is not None:
        return _optimize(model, clip, cfg, k_rand=cfg.k_rand, rng=clip_rng(cfg.seed, clip.id))
    return _optimize(model, clip, cfg, prefix_ks=cfg.k_A)


def run_attack(model: ToyAsrModel, clip: AudioClip, cfg: AttackConfig) -> AttackResult:
    """Dispatch on ``cfg.variant`` (and ``cfg.adaptive`` for the plain variant)."""
    if cfg.variant == "plain":
        if cfg.adaptive is not None:
            return adaptive_transform_attack(model, clip, cfg)
        return opt_attack(model, clip, cfg)
    if cfg.variant == "segment":
        return segment_attack(model, clip, cfg)
    if cfg.variant == "combination":
        return combination_attack(model, clip, cfg)
    return concat_attack(model, clip, cfg)

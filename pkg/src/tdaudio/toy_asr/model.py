"""Bidirectional tanh RNN acoustic model with hand-written backpropagation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..audio_io import AudioClip
from ..text_metrics import normalize_text
from ._kernels import rnn_scan, rnn_scan_grad
from .ctc import best_path, ctc_loss_and_grad
from .frontend import Frontend, extract_features, features_vjp

ALPHABET = "abcdefghij "
HIDDEN = 32
MODEL_FORMAT = "tdaudio-toy-asr"
MODEL_VERSION = 1

PARAM_NAMES = ("Wf_x", "Wf_h", "bf", "Wb_x", "Wb_h", "bb", "Wo", "bo")


class ModelFormatError(ValueError):
    pass


class AlphabetError(ValueError):
    pass


def param_shapes(n_in: int, hidden: int, n_out: int) -> dict[str, tuple]:
    return {
        "Wf_x": (n_in, hidden), "Wf_h": (hidden, hidden), "bf": (hidden,),
        "Wb_x": (n_in, hidden), "Wb_h": (hidden, hidden), "bb": (hidden,),
        "Wo": (2 * hidden, n_out), "bo": (n_out,),
    }


@dataclass
class RnnCache:
    X: np.ndarray
    H: np.ndarray
    G: np.ndarray
    mask: np.ndarray


def rnn_forward(params: dict, X: np.ndarray, lengths=None):
    """Logits for a padded batch ``X`` of shape (batch, frames, features).

    The right-to-left pass starts from a zero state at each sequence's own
    last frame, so padding never leaks into real frames.
    """
    B, T, _ = X.shape
    if lengths is None:
        lengths = np.full(B, T)
    mask = (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)

    pre_f = X @ params["Wf_x"] + params["bf"]
    pre_b = X @ params["Wb_x"] + params["bb"]
    H = rnn_scan(pre_f, params["Wf_h"], mask, False)
    G = rnn_scan(pre_b, params["Wb_h"], mask, True)
    logits = np.concatenate((H, G), axis=-1) @ params["Wo"] + params["bo"]
    return logits, RnnCache(X, H, G, mask)


def rnn_backward(params: dict, cache: RnnCache, d_logits: np.ndarray, need_input_grad=False,
                 need_param_grads=True):
    """Gradients of a scalar loss given d(loss)/d(logits).

    Returns (param_grads or None, d_X or None).
    """
    X, H, G, mask = cache.X, cache.H, cache.G, cache.mask
    B, T, hidden = H.shape
    d_logits = d_logits * mask[..., None]
    d_hg = d_logits @ params["Wo"].T
    d_h = np.ascontiguousarray(d_hg[..., :hidden])
    d_g = np.ascontiguousarray(d_hg[..., hidden:])

    # left-to-right recurrence, unrolled backwards in time
    dA = rnn_scan_grad(d_h, H, params["Wf_h"], mask, False)
    # right-to-left recurrence, unrolled forwards in time
    dC = rnn_scan_grad(d_g, G, params["Wb_h"], mask, True)

    d_X = None
    if need_input_grad:
        d_X = dA @ params["Wf_x"].T + dC @ params["Wb_x"].T
    if not need_param_grads:
        return None, d_X

    HG = np.concatenate((H, G), axis=-1)
    grads = {
        "Wo": np.einsum("btj,btk->jk", HG, d_logits),
        "bo": d_logits.sum(axis=(0, 1)),
    }
    H_prev = np.concatenate((np.zeros((B, 1, hidden)), H[:, :-1]), axis=1)
    grads["Wf_x"] = np.einsum("btf,bth->fh", X, dA)
    grads["Wf_h"] = np.einsum("btj,bth->jh", H_prev, dA)
    grads["bf"] = dA.sum(axis=(0, 1))

    G_next = np.concatenate((G[:, 1:], np.zeros((B, 1, hidden))), axis=1)
    grads["Wb_x"] = np.einsum("btf,bth->fh", X, dC)
    grads["Wb_h"] = np.einsum("btj,bth->jh", G_next, dC)
    grads["bb"] = dC.sum(axis=(0, 1))
    return grads, d_X


@dataclass
class ToyAsrModel:
    params: dict
    feat_mean: np.ndarray
    feat_std: np.ndarray
    frontend: Frontend = field(default_factory=Frontend)
    alphabet: str = ALPHABET

    @property
    def blank(self) -> int:
        return len(self.alphabet)

    @property
    def n_out(self) -> int:
        return len(self.alphabet) + 1

    @classmethod
    def init(cls, rng: np.random.Generator, scale: float = 0.05, frontend: Frontend | None = None,
             alphabet: str = ALPHABET, hidden: int = HIDDEN) -> "ToyAsrModel":
        """Gaussian weights of std ``scale``; zero biases."""
        frontend = frontend or Frontend()
        shapes = param_shapes(frontend.n_bins, hidden, len(alphabet) + 1)
        params = {}
        for name in PARAM_NAMES:
            if name.startswith("b"):
                params[name] = np.zeros(shapes[name])
            else:
                params[name] = rng.normal(0.0, scale, size=shapes[name])
        n = frontend.n_bins
        return cls(params, np.zeros(n), np.ones(n), frontend, alphabet)

    # text <-> symbol indices

    def encode(self, text: str) -> list[int]:
        try:
            return [self.alphabet.index(c) for c in text]
        except ValueError:
            bad = sorted(set(text) - set(self.alphabet))
            raise AlphabetError(f"characters {bad!r} are outside the model alphabet") from None

    def decode_indices(self, indices) -> str:
        return normalize_text("".join(self.alphabet[i] for i in indices))

    # inference

    def features(self, wave: np.ndarray, return_cache=False):
        if return_cache:
            feats, cache = extract_features(wave, self.frontend, return_cache=True)
            return (feats - self.feat_mean) / self.feat_std, cache
        return (extract_features(wave, self.frontend) - self.feat_mean) / self.feat_std

    def forward(self, feats: np.ndarray) -> np.ndarray:
        """Per-frame logits for one normalized feature matrix (frames, bins)."""
        return rnn_forward(self.params, feats[None])[0][0]

    def logits(self, wave: np.ndarray) -> np.ndarray:
        return self.forward(self.features(wave))

    def greedy_decode(self, logits: np.ndarray) -> str:
        return self.decode_indices(best_path(logits, self.blank))

    def transcribe_wave(self, wave: np.ndarray) -> str:
        return self.greedy_decode(self.logits(wave))

    def transcribe(self, clip: AudioClip) -> str:
        return self.transcribe_wave(clip.to_real().values)

    # gradients

    def loss_and_wave_grad(self, wave: np.ndarray, target: str):
        """CTC loss of ``target`` on ``wave`` and its gradient per sample."""
        return self.loss_and_wave_grad_ids(wave, self.encode(target))

    def loss_and_wave_grad_ids(self, wave, target_ids):
        feats, fcache = self.features(wave, return_cache=True)
        logits, rcache = rnn_forward(self.params, feats[None])
        loss, d_logits = ctc_loss_and_grad(logits[0], target_ids, self.blank)
        _, d_X = rnn_backward(self.params, rcache, d_logits[None], need_input_grad=True,
                              need_param_grads=False)
        d_feats = d_X[0] / self.feat_std
        return loss, features_vjp(d_feats, fcache, self.frontend), logits[0]

    def waveform_grad(self, wave: np.ndarray, target: str) -> np.ndarray:
        return self.loss_and_wave_grad(wave, target)[1]

    # persistence

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "alphabet": self.alphabet,
            "blank": self.blank,
            "frontend": self.frontend.to_dict(),
            "feat_mean": self.feat_mean.tolist(),
            "feat_std": self.feat_std.tolist(),
            "params": {k: self.params[k].tolist() for k in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyAsrModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"not a {MODEL_FORMAT} v{MODEL_VERSION} model file")
        params = {k: np.asarray(d["params"][k], dtype=np.float64) for k in PARAM_NAMES}
        for k, v in params.items():
            if not np.all(np.isfinite(v)):
                raise ModelFormatError(f"non-finite weights in {k}")
        return cls(
            params,
            np.asarray(d["feat_mean"], dtype=np.float64),
            np.asarray(d["feat_std"], dtype=np.float64),
            Frontend.from_dict(d["frontend"]),
            d["alphabet"],
        )

    def save(self, path) -> None:
        # repr round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ToyAsrModel":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

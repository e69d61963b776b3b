"""CTC loss, its gradient, and greedy best-path decoding.

Everything works on a single utterance: ``logits`` is (frames, symbols) and
the target is a sequence of symbol indices that never contains ``blank``.
"""

from __future__ import annotations

import numpy as np

from ._kernels import ctc_lattice


class TargetTooLongError(ValueError):
    pass


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def min_frames(target) -> int:
    """Shortest input that can emit ``target``: one frame per label plus a
    separating blank between equal neighbours."""
    target = list(target)
    repeats = sum(a == b for a, b in zip(target, target[1:]))
    return len(target) + repeats


def _extended(target, blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def _skip_mask(ext: np.ndarray, blank: int) -> np.ndarray:
    """True where state s may be entered from s-2."""
    allow = np.zeros(ext.size, dtype=bool)
    allow[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allow


def _forward_backward(logp: np.ndarray, target, blank: int):
    T = logp.shape[0]
    if T < max(1, min_frames(target)):
        raise TargetTooLongError(
            f"target needs {min_frames(target)} frames, input has {T}"
        )
    ext = _extended(target, blank)
    S = ext.size
    emit = np.ascontiguousarray(logp[:, ext])
    alpha, beta = ctc_lattice(emit, _skip_mask(ext, blank))
    ends = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    return alpha, beta, ext, float(ends)


def ctc_loss(logits: np.ndarray, target, blank: int) -> float:
    """Negative log-probability of ``target`` summed over all alignments."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    return -_forward_backward(logp, list(target), blank)[3]


def ctc_loss_and_grad(logits: np.ndarray, target, blank: int):
    """Loss and d(loss)/d(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    logp = log_softmax(logits)
    alpha, beta, ext, log_total = _forward_backward(logp, list(target), blank)
    occupancy = np.exp(alpha + beta - log_total)  # (T, S)
    posterior = np.zeros_like(logp)
    for s, k in enumerate(ext):
        posterior[:, k] += occupancy[:, s]
    return -log_total, np.exp(logp) - posterior


def ctc_backward(logits: np.ndarray, target, blank: int) -> np.ndarray:
    return ctc_loss_and_grad(logits, target, blank)[1]


def best_path(logits: np.ndarray, blank: int) -> list[int]:
    """Argmax per frame, merge repeats, drop blanks."""
    path = np.argmax(logits, axis=-1)
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out

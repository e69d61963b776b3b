"""Transcript normalization and edit-distance based error rates."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

_DROP = re.compile(r"[^a-z0-9' ]+")
_SPACES = re.compile(r"\s+")


class UndefinedReferenceError(ValueError):
    pass


class UndefinedRatioError(ZeroDivisionError):
    """Plain-input distance is zero, so the effectiveness ratio is undefined."""


def normalize_text(raw: str) -> str:
    """Lowercase, drop everything but [a-z0-9'] and collapse whitespace."""
    text = _SPACES.sub(" ", raw.lower())
    text = _DROP.sub("", text)
    return _SPACES.sub(" ", text).strip()


@dataclass(frozen=True)
class EditDistanceDetail:
    S: int
    D: int
    I: int
    N: int

    @property
    def distance(self) -> int:
        return self.S + self.D + self.I

    @property
    def rate(self) -> float:
        if self.N == 0:
            raise UndefinedReferenceError("empty reference")
        return self.distance / self.N


def edit_distance(ref: Sequence, hyp: Sequence) -> EditDistanceDetail:
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    Among minimal alignments the backtrace prefers substitution/match, then
    insertion, then deletion, so the S/D/I split is deterministic.
    """
    n, m = len(ref), len(hyp)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        r = ref[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (r != hyp[j - 1])
            row[j] = min(sub, row[j - 1] + 1, prev[j] + 1)

    s = d = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and dp[i][j] == dp[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            d += 1
            i -= 1
    return EditDistanceDetail(S=s, D=d, I=ins, N=n)


def words(text: str) -> list[str]:
    return text.split()


def wer(ref: str, hyp: str) -> float:
    ref_words = words(ref)
    if not ref_words:
        raise UndefinedReferenceError("WER needs a non-empty reference")
    return edit_distance(ref_words, words(hyp)).rate


def cer(ref: str, hyp: str) -> float:
    """Character error rate; spaces count as characters."""
    if not ref:
        raise UndefinedReferenceError("CER needs a non-empty reference")
    return edit_distance(ref, hyp).rate


def lcp(a: str, b: str) -> int:
    n = 0
    for ca, cb in zip(a, b):
        if ca != cb:
            break
        n += 1
    return n


def effectiveness_ratio(d_transformed: float, d_plain: float) -> float:
    """D(g(T(x)), y) / D(g(x), y)."""
    if d_plain == 0:
        raise UndefinedRatioError("clean baseline: untransformed distance is zero")
    return d_transformed / d_plain

"""Compiled inner loops for the recurrences and the CTC lattice."""

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def rnn_scan(pre, W, mask, reverse):
    """h_t = tanh(pre_t + h_prev @ W) * mask_t over each sequence."""
    B, T, H = pre.shape
    out = np.empty((B, T, H))
    h = np.zeros(H)
    nxt = np.zeros(H)
    for b in range(B):
        h[:] = 0.0
        for step in range(T):
            t = T - 1 - step if reverse else step
            m = mask[b, t]
            for j in range(H):
                acc = pre[b, t, j]
                for i in range(H):
                    acc += h[i] * W[i, j]
                nxt[j] = math.tanh(acc) * m
            for j in range(H):
                h[j] = nxt[j]
                out[b, t, j] = nxt[j]
    return out


@njit(cache=True)
def rnn_scan_grad(d_out, out, W, mask, reverse):
    """Gradient w.r.t. the pre-activations of ``rnn_scan``."""
    B, T, H = out.shape
    dA = np.empty((B, T, H))
    carry = np.zeros(H)
    da = np.zeros(H)
    for b in range(B):
        carry[:] = 0.0
        for step in range(T):
            t = step if reverse else T - 1 - step
            m = mask[b, t]
            for j in range(H):
                o = out[b, t, j]
                da[j] = (d_out[b, t, j] + carry[j]) * (1.0 - o * o) * m
                dA[b, t, j] = da[j]
            for i in range(H):
                acc = 0.0
                for j in range(H):
                    acc += da[j] * W[i, j]
                carry[i] = acc
    return dA


@njit(cache=True)
def _lse(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def ctc_lattice(emit, skip):
    """Log-space alpha (emission included) and beta (emission excluded).

    ``emit`` is (T, S) log-probabilities of the extended label at each state;
    ``skip[s]`` says whether state s can be entered from s - 2.
    """
    T, S = emit.shape
    alpha = np.full((T, S), NEG_INF)
    beta = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        for s in range(S):
            v = alpha[t - 1, s]
            if s >= 1:
                v = _lse(v, alpha[t - 1, s - 1])
            if s >= 2 and skip[s]:
                v = _lse(v, alpha[t - 1, s - 2])
            if v != NEG_INF:
                alpha[t, s] = v + emit[t, s]
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S):
            v = beta[t + 1, s] + emit[t + 1, s]
            if s + 1 < S:
                v = _lse(v, beta[t + 1, s + 1] + emit[t + 1, s + 1])
            if s + 2 < S and skip[s + 2]:
                v = _lse(v, beta[t + 1, s + 2] + emit[t + 1, s + 2])
            beta[t, s] = v
    return alpha, beta

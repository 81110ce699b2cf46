"""Start/end distributions over passage tokens, the training loss, and span decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fabir import tensor as T
from fabir.errors import DataError
from fabir.module import Module, xavier, zeros
from fabir.tensor import Tensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class SpanPrediction:
    start: int
    end: int

    def __iter__(self):
        return iter((self.start, self.end))


class ConvSelector(Module):
    """Two 1-D convolutions along the passage: ``d_model -> hidden -> 2``, ReLU between."""

    def __init__(self, d_model: int, rng: np.random.Generator, hidden: int = 32, kernel: int = 9):
        self.kernel1 = xavier(rng, (1, kernel, d_model, hidden), fan_in=kernel * d_model,
                              fan_out=kernel * hidden)
        self.bias1 = zeros((hidden,))
        self.kernel2 = xavier(rng, (1, kernel, hidden, 2), fan_in=kernel * hidden, fan_out=kernel * 2)
        self.bias2 = zeros((2,))

    def logits(self, x: Tensor, keep_prob: float, training: bool, rng, valid=None) -> Tensor:
        h = T.dropout(T.expand_dims(x, 1), keep_prob, training, rng)
        h = T.relu(T.conv2d(h, self.kernel1, "same") + self.bias1)
        if valid is not None:  # padded hidden rows would leak into the second convolution
            h = h * valid[:, None, :, None].astype(h.dtype)
        h = T.dropout(h, keep_prob, training, rng)
        out = T.conv2d(h, self.kernel2, "same") + self.bias2
        return T.reshape(out, (x.shape[0], x.shape[1], 2))


class LinearSelector(Module):
    """Ablation variant: one affine map per token to the two logits."""

    def __init__(self, d_model: int, rng: np.random.Generator):
        self.weight = xavier(rng, (d_model, 2))
        self.bias = zeros((2,))

    def logits(self, x: Tensor, keep_prob: float, training: bool, rng, valid=None) -> Tensor:
        return T.dropout(x, keep_prob, training, rng) @ self.weight + self.bias


def selector_forward(p_final: Tensor, params, mask=None, keep_prob: float = 1.0,
                     training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
    """Returns ``(pi1, pi2)``, each ``(B, P_len)`` (or ``(P_len,)`` for unbatched input).

    Padded rows are zeroed before each convolution so the receptive field sees
    the same zero border as an unpadded passage; padded positions get
    probability exactly 0.
    """
    single = p_final.ndim == 2
    x = T.expand_dims(p_final, 0) if single else p_final
    B, L, _ = x.shape
    valid = np.ones((B, L), bool) if mask is None else np.asarray(mask, bool).reshape(B, L)
    x = x * valid[:, :, None].astype(x.dtype)
    logits = params.logits(x, keep_prob, training, rng, valid)
    logits = T.where(valid[:, :, None], logits, -1e9)
    probs = T.softmax(logits, axis=1) * valid[:, :, None].astype(x.dtype)
    pi1, pi2 = probs[:, :, 0], probs[:, :, 1]
    if single:
        return pi1[0], pi2[0]
    return pi1, pi2


def nll_loss(pi1: Tensor, pi2: Tensor, y1, y2, ids=None) -> Tensor:
    """Mean over the batch of ``-(log pi1[y1] + log pi2[y2])``, probabilities floored at 1e-12."""
    single = pi1.ndim == 1
    if single:
        pi1, pi2 = T.expand_dims(pi1, 0), T.expand_dims(pi2, 0)
    y1 = np.atleast_1d(np.asarray(y1, dtype=np.int64))
    y2 = np.atleast_1d(np.asarray(y2, dtype=np.int64))
    B, L = pi1.shape
    for b in range(B):
        if not (0 <= y1[b] <= y2[b] < L):
            who = ids[b] if ids is not None else b
            raise DataError(f"example {who}: gold span ({y1[b]}, {y2[b]}) invalid for passage length {L}")
    rows = np.arange(B)
    p1 = T.maximum(pi1[rows, y1], PROB_FLOOR)
    p2 = T.maximum(pi2[rows, y2], PROB_FLOOR)
    return -T.mean(T.log(p1) + T.log(p2))


def decode_span(pi1, pi2, max_len: int = 15) -> SpanPrediction:
    """Maximize ``pi1[i]*pi2[j]`` subject to ``i <= j < i + max_len``.

    For each end ``j`` the best start is the (first) maximum of ``pi1`` over the
    trailing window, kept with a monotone deque, so the scan is linear in the
    passage length. Ties go to the smallest start, then the smallest end.
    """
    p1 = np.asarray(getattr(pi1, "data", pi1), dtype=np.float64)
    p2 = np.asarray(getattr(pi2, "data", pi2), dtype=np.float64)
    n = len(p1)
    window: list[int] = []  # indices with strictly decreasing p1, front is the best start
    head = 0
    best = (-1.0, 0, 0)
    for j in range(n):
        while len(window) > head and p1[window[-1]] < p1[j]:
            window.pop()
        window.append(j)
        if window[head] <= j - max_len:
            head += 1
        i = window[head]
        score = p1[i] * p2[j]
        if score > best[0] or (score == best[0] and i < best[1]):
            best = (score, i, j)
    return SpanPrediction(best[1], best[2])


def decode_span_bruteforce(pi1, pi2, max_len: int = 15) -> SpanPrediction:
    """Enumerate every feasible pair; same tie-break as :func:`decode_span`."""
    p1 = np.asarray(getattr(pi1, "data", pi1), dtype=np.float64)
    p2 = np.asarray(getattr(pi2, "data", pi2), dtype=np.float64)
    best = None
    for i in range(len(p1)):
        for j in range(i, min(i + max_len, len(p2))):
            score = p1[i] * p2[j]
            if best is None or score > best[0]:
                best = (score, i, j)
    return SpanPrediction(best[1], best[2])

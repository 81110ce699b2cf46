"""Feedforward, normalization wrapping, processing layers and the reduction layer."""

from __future__ import annotations

import numpy as np

from fabir import tensor as T
from fabir.attention import ConvAttention, DecoupledAttention, SoftmaxAxis, cross_attention, self_attention
from fabir.errors import DimensionError
from fabir.module import LayerNorm, Module, xavier, zeros
from fabir.positional import encode
from fabir.tensor import Tensor


class FeedForward(Module):
    def __init__(self, d: int, d_hidden: int, rng: np.random.Generator, d_out: int | None = None):
        d_out = d if d_out is None else d_out
        self.w1 = xavier(rng, (d, d_hidden))
        self.b1 = zeros((d_hidden,))
        self.w2 = xavier(rng, (d_hidden, d_out))
        self.b2 = zeros((d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return feed_forward(x, self)


def feed_forward(x: Tensor, params: FeedForward) -> Tensor:
    """``ReLU(x W1 + b1) W2 + b2`` applied to every row."""
    if x.shape[-1] != params.w1.shape[0]:
        raise DimensionError(f"feedforward input width {x.shape[-1]} != {params.w1.shape[0]}")
    return T.relu(x @ params.w1 + params.b1) @ params.w2 + params.b2


def layer_norm(x: Tensor, params: LayerNorm, eps: float = 1e-6) -> Tensor:
    return T.layer_norm(x, params.gain, params.bias, eps)


def sublayer_wrap(f, x: Tensor, norm: LayerNorm, keep_prob: float = 1.0,
                  training: bool = False, rng=None) -> Tensor:
    """Residual sum followed by normalization: ``norm(x + dropout(f(x)))``."""
    y = f(x)
    if y.shape != x.shape:
        raise DimensionError(f"sublayer output {y.shape} does not match input {x.shape}")
    return norm(x + T.dropout(y, keep_prob, training, rng))


class ProcessingLayer(Module):
    """Shared self-attention on both streams, cross-attention into the passage, per-stream feedforward."""

    def __init__(self, d: int, d_hidden: int, n_heads: int, rng: np.random.Generator,
                 kernel_shape=(1, 5), noise: float = 0.01, scale_logits: bool = False,
                 cross_axis: str = "column", bidirectional: bool = False, eps: float = 1e-6):
        self.self_attn = ConvAttention(d, d, n_heads, rng, kernel_shape, noise, scale_logits)
        self.self_norm = LayerNorm(d, eps)
        self.cross_attn = ConvAttention(d, d, n_heads, rng, kernel_shape, noise, scale_logits)
        self.cross_norm = LayerNorm(d, eps)
        if bidirectional:
            self.cross_attn_q = ConvAttention(d, d, n_heads, rng, kernel_shape, noise, scale_logits)
            self.cross_norm_q = LayerNorm(d, eps)
        self.ff_p = FeedForward(d, d_hidden, rng)
        self.ff_p_norm = LayerNorm(d, eps)
        self.ff_q = FeedForward(d, d_hidden, rng)
        self.ff_q_norm = LayerNorm(d, eps)
        self._axis = SoftmaxAxis(cross_axis)
        self._bidirectional = bidirectional

    def __call__(self, P, Q, p_mask=None, q_mask=None, keep_prob=1.0, training=False, rng=None):
        return processing_layer(P, Q, p_mask, q_mask, self, keep_prob, training, rng)


def processing_layer(P: Tensor, Q: Tensor, p_mask, q_mask, params: ProcessingLayer,
                     keep_prob: float = 1.0, training: bool = False, rng=None):
    if P.shape[-1] != Q.shape[-1]:
        raise DimensionError(f"passage width {P.shape} and question width {Q.shape} differ")
    drop = dict(keep_prob=keep_prob, training=training, rng=rng)
    sa = params.self_attn
    P = sublayer_wrap(lambda x: self_attention(x, sa, p_mask, **drop), P, params.self_norm, **drop)
    Q = sublayer_wrap(lambda x: self_attention(x, sa, q_mask, **drop), Q, params.self_norm, **drop)
    P_in = P
    P = sublayer_wrap(
        lambda x: cross_attention(x, Q, params.cross_attn, p_mask, q_mask, params._axis, **drop),
        P, params.cross_norm, **drop)
    if params._bidirectional:
        Q = sublayer_wrap(
            lambda x: cross_attention(x, P_in, params.cross_attn_q, q_mask, p_mask, params._axis, **drop),
            Q, params.cross_norm_q, **drop)
    P = sublayer_wrap(params.ff_p, P, params.ff_p_norm, **drop)
    Q = sublayer_wrap(params.ff_q, Q, params.ff_q_norm, **drop)
    return P, Q


class ReductionLayer(Module):
    """Decoupled attention, a full-width processing layer, then projection to ``d_model``."""

    def __init__(self, d_input: int, d_model: int, d_hidden: int, n_heads: int,
                 rng: np.random.Generator, kernel_shape=(1, 5), noise: float = 0.01,
                 scale_logits: bool = False, cross_axis: str = "column",
                 bidirectional: bool = False, eps: float = 1e-6):
        self.decoupled = DecoupledAttention(d_input, d_model, n_heads, rng, kernel_shape, noise,
                                            scale_logits, eps)
        self.processing = ProcessingLayer(d_input, d_hidden, n_heads, rng, kernel_shape, noise,
                                          scale_logits, cross_axis, bidirectional, eps)
        self.w_reduction = xavier(rng, (d_model, d_input), fan_in=d_input, fan_out=d_model)
        self._d_model = d_model

    def __call__(self, omega_p, omega_q, p_mask=None, q_mask=None, keep_prob=1.0,
                 training=False, rng=None):
        return reduction_layer(omega_p, omega_q, p_mask, q_mask, self, keep_prob, training, rng)


def reduction_layer(omega_p: Tensor, omega_q: Tensor, p_mask, q_mask, params: ReductionLayer,
                    keep_prob: float = 1.0, training: bool = False, rng=None):
    """Returns ``(P1, Q1)`` of width ``d_model``: ``Omega' W_Reduction^T + E``."""
    d_input = params.w_reduction.shape[1]
    if omega_p.shape[-1] != d_input or omega_q.shape[-1] != d_input:
        raise DimensionError(f"reduction layer expects width {d_input}, got {omega_p.shape}, {omega_q.shape}")
    drop = dict(keep_prob=keep_prob, training=training, rng=rng)
    streams = []
    for omega, mask in ((omega_p, p_mask), (omega_q, q_mask)):
        L = omega.shape[-2]
        e_in = encode(L, d_input, omega.dtype)
        e_red = encode(L, params._d_model, omega.dtype)
        streams.append(params.decoupled(omega, e_in, e_red, mask, **drop))
    (op, ep), (oq, eq) = streams
    op, oq = processing_layer(op, oq, p_mask, q_mask, params.processing, **drop)
    w_t = T.transpose(params.w_reduction)
    return op @ w_t + ep, oq @ w_t + eq


class FeedForwardReduction(Module):
    """Ablation stand-in for the reduction layer: a feedforward map to ``d_model`` plus encodings."""

    def __init__(self, d_input: int, d_model: int, d_hidden: int, rng: np.random.Generator):
        self.ff = FeedForward(d_input, d_hidden, rng, d_out=d_model)
        self._d_model = d_model

    def __call__(self, omega_p, omega_q, p_mask=None, q_mask=None, keep_prob=1.0,
                 training=False, rng=None):
        out = []
        for omega in (omega_p, omega_q):
            y = T.dropout(self.ff(omega), keep_prob, training, rng)
            out.append(y + encode(omega.shape[-2], self._d_model, omega.dtype))
        return tuple(out)

"""Multi-head convolutional attention, with row- or column-normalized weights.

Layouts: sequences are ``(batch, length, width)``; logits are channels-last
``(batch, m, n, heads)`` so the convolution treats heads as channels; weights
are head-first ``(batch, heads, m, n)``. Unbatched ``(length, width)`` inputs
are accepted by the public functions and returned unbatched.
"""

from __future__ import annotations

import enum

import numpy as np

from fabir import tensor as T
from fabir.errors import DimensionError
from fabir.module import LayerNorm, Module, xavier
from fabir.tensor import Parameter, Tensor, get_default_dtype

MASK_FILL = -1e9


class SoftmaxAxis(str, enum.Enum):
    ROW = "row"        # normalize over keys j
    COLUMN = "column"  # normalize over queries i


class QueryKeyProjection(Module):
    """Per-head ``W_U,i`` and ``W_K,i`` stored side by side as ``d_in x (heads*d_head)``."""

    def __init__(self, d_in: int, n_heads: int, d_head: int, rng: np.random.Generator):
        self.w_u = xavier(rng, (d_in, n_heads * d_head))
        self.w_k = xavier(rng, (d_in, n_heads * d_head))
        self._n_heads = n_heads
        self._d_head = d_head

    @property
    def n_heads(self) -> int:
        return self._n_heads


class ValueProjection(Module):
    """Per-head ``W_V,i`` plus the output projection ``W_O``."""

    def __init__(self, d_in: int, n_heads: int, d_head: int, d_out: int, rng: np.random.Generator):
        self.w_v = xavier(rng, (d_in, n_heads * d_head))
        self.w_o = xavier(rng, (n_heads * d_head, d_out))
        self._n_heads = n_heads
        self._d_head = d_head


def delta_kernel(h: int, w: int, channels: int, rng: np.random.Generator | None = None,
                 noise: float = 0.0) -> np.ndarray:
    """Per-channel delta: centre tap is the identity across channels, zero elsewhere."""
    k = np.zeros((h, w, channels, channels))
    k[h // 2, w // 2] = np.eye(channels)
    if rng is not None and noise > 0:
        k += rng.normal(0.0, noise, size=k.shape)
    return k


def init_kernel(shape: tuple[int, int] | None, n_heads: int, rng, noise: float) -> Parameter | None:
    if shape is None:
        return None
    return Parameter(delta_kernel(shape[0], shape[1], n_heads, rng, noise), dtype=get_default_dtype())


class ConvAttention(Module):
    """Parameters of one attention sublayer: projections and an optional logit kernel."""

    def __init__(self, d_in: int, d_out: int, n_heads: int, rng: np.random.Generator,
                 kernel_shape: tuple[int, int] | None = (1, 5), noise: float = 0.01,
                 scale_logits: bool = False):
        if d_out % n_heads:
            raise DimensionError(f"d_out={d_out} not divisible by n_heads={n_heads}")
        d_head = d_out // n_heads
        self.qk = QueryKeyProjection(d_in, n_heads, d_head, rng)
        self.value = ValueProjection(d_in, n_heads, d_head, d_out, rng)
        self.kernel = init_kernel(kernel_shape, n_heads, rng, noise)
        self._scale = scale_logits


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    """``(B, L, H*d) -> (B, H, L, d)``."""
    B, L, D = x.shape
    return T.transpose(T.reshape(x, (B, L, n_heads, D // n_heads)), (0, 2, 1, 3))


def head_logits(U: Tensor, K: Tensor, qk: QueryKeyProjection, scale: bool = False) -> Tensor:
    """Stacked per-head logits ``U W_U,i (K W_K,i)^T`` as ``(B, m, n, heads)``."""
    if U.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query width {U.shape} and key width {K.shape} differ")
    if U.shape[-1] != qk.w_u.shape[0]:
        raise DimensionError(f"input width {U.shape[-1]} does not match projection {qk.w_u.shape}")
    single = U.ndim == 2
    if single:
        U, K = T.expand_dims(U, 0), T.expand_dims(K, 0)
    uh = _split_heads(U @ qk.w_u, qk.n_heads)
    kh = _split_heads(K @ qk.w_k, qk.n_heads)
    logits = uh @ T.swapaxes(kh, -1, -2)  # (B, H, m, n)
    if scale:
        logits = logits * (1.0 / np.sqrt(qk.w_u.shape[1] // qk.n_heads))
    out = T.transpose(logits, (0, 2, 3, 1))
    return out[0] if single else out


def pair_mask(q_mask, k_mask, batch: int, m: int, n: int) -> np.ndarray:
    """Boolean validity of each (query, key) pair, shape ``(B, m, n)``."""
    qm = np.ones((batch, m), bool) if q_mask is None else np.asarray(q_mask, bool).reshape(batch, m)
    km = np.ones((batch, n), bool) if k_mask is None else np.asarray(k_mask, bool).reshape(batch, n)
    return qm[:, :, None] & km[:, None, :]


def attention_weights(logits: Tensor, kernel: Tensor | None, axis: SoftmaxAxis,
                      pairs: np.ndarray) -> Tensor:
    """Convolve channels-last logits, mask, and normalize; returns ``(B, H, m, n)``.

    Masked logits are zeroed before the convolution, which makes padding
    indistinguishable from the zero border of an unbatched sequence, and set
    to ``MASK_FILL`` after it. Masked weights are then forced to exactly 0, so
    a query row with no valid key (row-wise) yields a zero output row.
    """
    valid = pairs[..., None]
    x = T.where(valid, logits, 0.0)
    if kernel is not None:
        if kernel.shape[2] != logits.shape[-1]:
            raise DimensionError(f"kernel {kernel.shape} does not match {logits.shape[-1]} heads")
        x = T.conv2d(x, kernel, padding="same")
    x = T.where(valid, x, MASK_FILL)
    x = T.transpose(x, (0, 3, 1, 2))
    w = T.softmax(x, axis=-1 if SoftmaxAxis(axis) is SoftmaxAxis.ROW else -2)
    return w * pairs[:, None].astype(w.dtype)


def attend(weights: Tensor, V: Tensor, value: ValueProjection) -> Tensor:
    """Per-head ``weights @ V W_V,i``, heads concatenated, then ``W_O``."""
    B, H, m, _ = weights.shape
    vh = _split_heads(V @ value.w_v, H)
    heads = weights @ vh  # (B, H, m, d_head)
    cat = T.reshape(T.transpose(heads, (0, 2, 1, 3)), (B, m, -1))
    return cat @ value.w_o


def conv_attention(U: Tensor, K: Tensor, V: Tensor, attn: ConvAttention,
                   axis: SoftmaxAxis = SoftmaxAxis.ROW, q_mask=None, k_mask=None,
                   keep_prob: float = 1.0, training: bool = False, rng=None,
                   return_weights: bool = False):
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"keys {K.shape} and values {V.shape} have different lengths")
    single = U.ndim == 2
    if single:
        U, K, V = (T.expand_dims(x, 0) for x in (U, K, V))
    B, m, n = U.shape[0], U.shape[1], K.shape[1]
    pairs = pair_mask(q_mask, k_mask, B, m, n)
    logits = head_logits(U, K, attn.qk, attn._scale)
    w = attention_weights(logits, attn.kernel, axis, pairs)
    w_used = T.dropout(w, keep_prob, training, rng)
    out = attend(w_used, V, attn.value)
    if single:
        out, w = out[0], w[0]
    return (out, w) if return_weights else out


def self_attention(P: Tensor, attn: ConvAttention, mask=None, **kw):
    return conv_attention(P, P, P, attn, SoftmaxAxis.ROW, mask, mask, **kw)


def cross_attention(P: Tensor, Q: Tensor, attn: ConvAttention, p_mask=None, q_mask=None,
                    axis: SoftmaxAxis = SoftmaxAxis.COLUMN, **kw):
    """Attention of ``Q`` over ``P``: queries from ``P``, keys and values from ``Q``."""
    if P.shape[-1] != Q.shape[-1]:
        raise DimensionError(f"passage width {P.shape} and question width {Q.shape} differ")
    return conv_attention(P, Q, Q, attn, axis, p_mask, q_mask, **kw)


def cross_attention_columnwise(P: Tensor, Q: Tensor, attn: ConvAttention, p_mask=None,
                               q_mask=None, **kw):
    """Column-wise cross-attention: each question word's weights sum to 1 over the passage."""
    return cross_attention(P, Q, attn, p_mask, q_mask, SoftmaxAxis.COLUMN, **kw)


class DecoupledAttention(Module):
    """Twin-branch self-attention that keeps embeddings and encodings apart.

    Both branches share ``W_U``, ``W_K`` and the logit kernel, so the attention
    weights are computed once. Branch one maps the embeddings (values and
    residual ``Omega``) back to ``d_input``; branch two attends over the
    ``d_model`` position encodings.
    """

    def __init__(self, d_input: int, d_model: int, n_heads: int, rng: np.random.Generator,
                 kernel_shape=(1, 5), noise: float = 0.01, scale_logits: bool = False,
                 eps: float = 1e-6):
        self.qk = QueryKeyProjection(d_input, n_heads, d_model // n_heads, rng)
        self.kernel = init_kernel(kernel_shape, n_heads, rng, noise)
        self.value_emb = ValueProjection(d_input, n_heads, d_input // n_heads, d_input, rng)
        self.value_enc = ValueProjection(d_model, n_heads, d_model // n_heads, d_model, rng)
        self.norm_emb = LayerNorm(d_input, eps)
        self.norm_enc = LayerNorm(d_model, eps)
        self._scale = scale_logits

    def __call__(self, omega: Tensor, e_in, e_red, mask=None, keep_prob: float = 1.0,
                 training: bool = False, rng=None, return_intermediates: bool = False):
        single = omega.ndim == 2
        if single:
            omega = T.expand_dims(omega, 0)
        B, L, d_input = omega.shape
        e_in = np.asarray(e_in, dtype=omega.dtype)
        e_red = np.asarray(e_red, dtype=omega.dtype)
        if e_in.shape[-2:] != (L, d_input):
            raise DimensionError(f"input encoding {e_in.shape} does not match embeddings {omega.shape}")
        if e_red.shape[-2] != L or e_red.shape[-1] != self.value_enc.w_v.shape[0]:
            raise DimensionError(f"reduced encoding {e_red.shape} does not match length {L}")
        x = omega + e_in
        pairs = pair_mask(mask, mask, B, L, L)
        logits = head_logits(x, x, self.qk, self._scale)
        w = attention_weights(logits, self.kernel, SoftmaxAxis.ROW, pairs)
        w = T.dropout(w, keep_prob, training, rng)

        branch_emb = attend(w, omega, self.value_emb)
        omega_out = self.norm_emb(omega + T.dropout(branch_emb, keep_prob, training, rng))

        enc = Tensor(np.broadcast_to(e_red, (B, L, e_red.shape[-1])))
        branch_enc = attend(w, enc, self.value_enc)
        e_out = self.norm_enc(enc + T.dropout(branch_enc, keep_prob, training, rng))

        if single:
            omega_out, e_out = omega_out[0], e_out[0]
        if return_intermediates:
            shared = {"emb_logits": logits, "enc_logits": logits, "weights": w}
            return omega_out, e_out, shared
        return omega_out, e_out

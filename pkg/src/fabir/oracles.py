"""Reference implementations used by the test-suite.

Nothing here imports the tensor engine or the model modules: attention and
layer oracles are straight-line scalar loops over Python floats, the
parameter counter works from the configuration alone, and the
finite-difference helper only needs a scalar callable. Sizes are meant to be
tiny.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

# --- reports -------------------------------------------------------------------


@dataclass
class OracleReport:
    case: str
    compared: int
    max_abs_diff: float
    max_rel_diff: float
    tolerance: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def compare(case: str, got, expected, tol: float, rel: bool = False) -> OracleReport:
    """Elementwise comparison; ``rel`` selects which difference is held to ``tol``."""
    a = np.asarray(got, dtype=np.float64).reshape(-1)
    b = np.asarray(expected, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        return OracleReport(case, int(max(a.size, b.size)), math.inf, math.inf, tol, False)
    absd = np.abs(a - b)
    reld = absd / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-12)
    mabs = float(absd.max(initial=0.0))
    mrel = float(reld.max(initial=0.0))
    return OracleReport(case, int(a.size), mabs, mrel, tol, (mrel if rel else mabs) < tol)


# --- finite differences ---------------------------------------------------------


def finite_diff(f: Callable[[], float], params: Sequence[np.ndarray], step: float = 1e-5,
                max_entries: int | None = None, rng: np.random.Generator | None = None):
    """Central-difference gradient estimates of the scalar ``f()``.

    ``params`` are arrays that ``f`` reads (perturbed in place and restored).
    For arrays with more than ``max_entries`` elements only that many random
    entries are estimated. Returns one ``(flat_indices, estimates)`` pair per
    array.
    """
    rng = rng or np.random.default_rng(0)
    out = []
    for arr in params:
        flat = arr.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            idx = np.arange(flat.size)
        est = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + step
            up = f()
            flat[i] = old - step
            down = f()
            flat[i] = old
            est[k] = (up - down) / (2 * step)
        out.append((idx, est))
    return out


# --- scalar linear algebra helpers ---------------------------------------------


def _lists(x):
    return np.asarray(x, dtype=np.float64).tolist()


def _mm(a, b):
    n, k, m = len(a), len(b), len(b[0])
    return [[sum(a[i][t] * b[t][j] for t in range(k)) for j in range(m)] for i in range(n)]


def _cols(a, lo, hi):
    return [row[lo:hi] for row in a]


def _add(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def _transpose(a):
    return [list(col) for col in zip(*a)]


def _relu(a):
    return [[x if x > 0 else 0.0 for x in row] for row in a]


# --- attention ------------------------------------------------------------------


def _softmax_rows(s):
    out = []
    for row in s:
        mx = max(row)
        e = [math.exp(v - mx) for v in row]
        z = sum(e)
        out.append([v / z for v in e])
    return out


def oracle_multihead_attention(U, K, V, w_u, w_k, w_v, w_o, n_heads: int, axis: str = "row"):
    """Plain multi-head attention: per head ``softmax(U W_U (K W_K)^T) V W_V``, concat, ``W_O``."""
    return oracle_conv_attention(U, K, V, w_u, w_k, w_v, w_o, n_heads, None, axis)


def oracle_attention_weights(U, K, w_u, w_k, n_heads: int, kernel=None, axis: str = "row",
                             q_mask=None, k_mask=None):
    """Per-head weight matrices ``[head][i][j]`` following the step sequence literally.

    Masked logits are zero going into the convolution and excluded from the
    normalization afterwards; masked weights are exactly 0.
    """
    U, K, w_u, w_k = map(_lists, (U, K, w_u, w_k))
    m, n = len(U), len(K)
    qm = [True] * m if q_mask is None else [bool(v) for v in q_mask]
    km = [True] * n if k_mask is None else [bool(v) for v in k_mask]
    dh = len(w_u[0]) // n_heads
    UW, KW = _mm(U, w_u), _mm(K, w_k)
    logits = []
    for h in range(n_heads):
        uh, kh = _cols(UW, h * dh, (h + 1) * dh), _cols(KW, h * dh, (h + 1) * dh)
        lg = _mm(uh, _transpose(kh))
        logits.append([[lg[i][j] if qm[i] and km[j] else 0.0 for j in range(n)] for i in range(m)])
    if kernel is not None:
        H = _lists(kernel)
        kh_, kw_ = len(H), len(H[0])
        ph, pw = (kh_ - 1) // 2, (kw_ - 1) // 2
        conv = [[[0.0] * n for _ in range(m)] for _ in range(n_heads)]
        for o in range(n_heads):
            for i in range(m):
                for j in range(n):
                    acc = 0.0
                    for a in range(kh_):
                        for b in range(kw_):
                            ii, jj = i + a - ph, j + b - pw
                            if 0 <= ii < m and 0 <= jj < n:
                                for c in range(n_heads):
                                    acc += logits[c][ii][jj] * H[a][b][c][o]
                    conv[o][i][j] = acc
        logits = conv
    weights = []
    for h in range(n_heads):
        w = [[0.0] * n for _ in range(m)]
        if axis == "row":
            for i in range(m):
                js = [j for j in range(n) if qm[i] and km[j]]
                if js:
                    p = _softmax_rows([[logits[h][i][j] for j in js]])[0]
                    for j, v in zip(js, p):
                        w[i][j] = v
        else:
            for j in range(n):
                is_ = [i for i in range(m) if qm[i] and km[j]]
                if is_:
                    p = _softmax_rows([[logits[h][i][j] for i in is_]])[0]
                    for i, v in zip(is_, p):
                        w[i][j] = v
        weights.append(w)
    return weights


def oracle_conv_attention(U, K, V, w_u, w_k, w_v, w_o, n_heads: int, kernel=None,
                          axis: str = "row", q_mask=None, k_mask=None):
    """Convolutional attention output ``(m, d_out)`` as nested lists."""
    weights = oracle_attention_weights(U, K, w_u, w_k, n_heads, kernel, axis, q_mask, k_mask)
    V, w_v, w_o = map(_lists, (V, w_v, w_o))
    dv = len(w_v[0]) // n_heads
    VW = _mm(V, w_v)
    heads = [_mm(weights[h], _cols(VW, h * dv, (h + 1) * dv)) for h in range(n_heads)]
    cat = [sum((heads[h][i] for h in range(n_heads)), []) for i in range(len(weights[0]))]
    return _mm(cat, w_o)


# --- layers ----------------------------------------------------------------------


def oracle_layer_norm(x, gain, bias, eps: float = 1e-6):
    x, gain, bias = _lists(x), _lists(gain), _lists(bias)
    out = []
    for row in x:
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        s = math.sqrt(var + eps)
        out.append([(v - mu) / s * g + b for v, g, b in zip(row, gain, bias)])
    return out


def oracle_feed_forward(x, w1, b1, w2, b2):
    x, w1, b1, w2, b2 = map(_lists, (x, w1, b1, w2, b2))
    h = _relu([[v + b for v, b in zip(row, b1)] for row in _mm(x, w1)])
    return [[v + b for v, b in zip(row, b2)] for row in _mm(h, w2)]


def _attn(p: dict, prefix: str, U, K, V, n_heads, axis, qm=None, km=None):
    kernel = p.get(prefix + "kernel")
    return oracle_conv_attention(U, K, V, p[prefix + "qk.w_u"], p[prefix + "qk.w_k"],
                                 p[prefix + "value.w_v"], p[prefix + "value.w_o"], n_heads,
                                 kernel, axis, qm, km)


def _ln(p: dict, prefix: str, x, eps):
    return oracle_layer_norm(x, p[prefix + "gain"], p[prefix + "bias"], eps)


def oracle_processing_layer(P, Q, params: dict, n_heads: int, axis: str = "column",
                            eps: float = 1e-6):
    """One processing layer on unbatched streams. ``params`` maps local names to arrays."""
    P, Q = _lists(P), _lists(Q)
    P = _ln(params, "self_norm.", _add(P, _attn(params, "self_attn.", P, P, P, n_heads, "row")), eps)
    Q = _ln(params, "self_norm.", _add(Q, _attn(params, "self_attn.", Q, Q, Q, n_heads, "row")), eps)
    P = _ln(params, "cross_norm.", _add(P, _attn(params, "cross_attn.", P, Q, Q, n_heads, axis)), eps)
    ffp = oracle_feed_forward(P, *(params["ff_p." + k] for k in ("w1", "b1", "w2", "b2")))
    ffq = oracle_feed_forward(Q, *(params["ff_q." + k] for k in ("w1", "b1", "w2", "b2")))
    return _ln(params, "ff_p_norm.", _add(P, ffp), eps), _ln(params, "ff_q_norm.", _add(Q, ffq), eps)


def oracle_encoding(length: int, d: int):
    rows = []
    for i in range(length):
        row = []
        for k in range(d // 2):
            f = 10000.0 ** (-2.0 * k / d)
            row += [math.sin(i * f), math.cos(i * f)]
        rows.append(row)
    return rows


def oracle_decoupled_attention(omega, params: dict, n_heads: int, d_model: int, eps: float = 1e-6):
    """Both branches of the decoupled attention for one unbatched sequence."""
    omega = _lists(omega)
    L, d_input = len(omega), len(omega[0])
    x = _add(omega, oracle_encoding(L, d_input))
    e_red = oracle_encoding(L, d_model)
    kernel = params.get("kernel")
    w = oracle_attention_weights(x, x, params["qk.w_u"], params["qk.w_k"], n_heads, kernel, "row")

    def branch(V, w_v, w_o):
        V, w_v, w_o = map(_lists, (V, w_v, w_o))
        dv = len(w_v[0]) // n_heads
        VW = _mm(V, w_v)
        heads = [_mm(w[h], _cols(VW, h * dv, (h + 1) * dv)) for h in range(n_heads)]
        return _mm([sum((heads[h][i] for h in range(n_heads)), []) for i in range(L)], w_o)

    out_emb = branch(omega, params["value_emb.w_v"], params["value_emb.w_o"])
    out_enc = branch(e_red, params["value_enc.w_v"], params["value_enc.w_o"])
    return (_ln(params, "norm_emb.", _add(omega, out_emb), eps),
            _ln(params, "norm_enc.", _add(e_red, out_enc), eps))


def oracle_reduction_layer(omega_p, omega_q, params: dict, n_heads: int, d_model: int,
                           axis: str = "column", eps: float = 1e-6):
    sub = lambda pre: {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}
    dec, proc = sub("decoupled."), sub("processing.")
    op, ep = oracle_decoupled_attention(omega_p, dec, n_heads, d_model, eps)
    oq, eq = oracle_decoupled_attention(omega_q, dec, n_heads, d_model, eps)
    op, oq = oracle_processing_layer(op, oq, proc, n_heads, axis, eps)
    wr_t = _transpose(_lists(params["w_reduction"]))
    return _add(_mm(op, wr_t), ep), _add(_mm(oq, wr_t), eq)


# --- span decoding and loss -----------------------------------------------------


def oracle_decode_span(pi1, pi2, max_len: int = 15) -> tuple[int, int]:
    """Exhaustive search; ties resolve to the smallest start, then the smallest end."""
    best, arg = -1.0, (0, 0)
    for i in range(len(pi1)):
        for j in range(i, min(len(pi2), i + max_len)):
            s = float(pi1[i]) * float(pi2[j])
            if s > best:
                best, arg = s, (i, j)
    return arg


# --- parameter counting ---------------------------------------------------------

N_CHARS = 95 + 2  # printable ASCII + PAD + UNK; the PAD row is not trainable


def count_params(config) -> tuple[int, dict[str, int]]:
    """Closed-form trainable parameter count with a per-module breakdown."""
    c = config
    kernel = 0
    if c.use_conv_attention:
        kh, kw = c.attn_kernel if c.attn_kernel is not None else (1, 5)
        kernel = kh * kw * c.n_heads * c.n_heads
    d_in = c.word_dim + (c.char_filters if c.use_char_embed else 0)

    emb = c.word_dim  # UNK row
    if c.use_char_embed:
        emb += (N_CHARS - 1) * c.char_dim
        emb += c.char_kernel_width * c.char_dim * c.char_filters + c.char_filters
    emb += c.highway_layers * 2 * (d_in * d_in + d_in)

    def attention(d):
        return 4 * d * d + kernel

    def processing(d, hidden):
        n_attn = 3 if c.bidirectional_cross else 2
        n_norm = 5 if c.bidirectional_cross else 4
        ff = d * hidden + hidden + hidden * d + d
        return n_attn * attention(d) + 2 * ff + n_norm * 2 * d

    if c.use_reduction_layer:
        decoupled = 2 * d_in * c.d_model + kernel + 2 * d_in * d_in + 2 * c.d_model * c.d_model
        decoupled += 2 * d_in + 2 * c.d_model
        red = decoupled + processing(d_in, c.ff_hidden_reduction) + c.d_model * d_in
    else:
        h = c.ff_hidden_reduction
        red = d_in * h + h + h * c.d_model + c.d_model
    proc = c.n_processing_layers * processing(c.d_model, c.ff_hidden_processing)
    if c.selector_kind == "conv":
        k, hdn = c.selector_kernel, c.selector_hidden
        sel = k * c.d_model * hdn + hdn + k * hdn * 2 + 2
    else:
        sel = c.d_model * 2 + 2
    breakdown = {"embeddings": emb, "reduction": red, "processing": proc, "selector": sel}
    return sum(breakdown.values()), breakdown

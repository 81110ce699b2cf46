"""Self-checks for the independent reference implementations."""
import math

import numpy as np
import pytest

from fabir import synthetic
from fabir import tensor as T
from fabir.config import ModelConfig, toy_config
from fabir.model import build_model
from fabir.oracles import (compare, count_params, finite_diff, oracle_attention_weights,
                           oracle_decode_span, oracle_encoding, oracle_layer_norm)


def test_finite_diff_square():
    x = np.array([3.0])
    [(idx, est)] = finite_diff(lambda: float(x[0] ** 2), [x])
    assert list(idx) == [0] and abs(est[0] - 6.0) < 1e-8
    assert x[0] == 3.0  # restored


def test_finite_diff_matches_engine_on_softmax_cross_entropy(rng):
    z = rng.normal(size=(3, 5))
    y = np.array([0, 4, 2])

    def loss_np():
        s = z - z.max(axis=1, keepdims=True)
        return float(-(s[np.arange(3), y] - np.log(np.exp(s).sum(axis=1))).mean())

    zt = T.Tensor(z.copy(), requires_grad=True)
    probs = T.softmax(zt, axis=1)
    loss = -T.log(probs[np.arange(3), y]).mean()
    assert math.isclose(loss.item(), loss_np(), rel_tol=1e-12)
    grad = T.backward(loss)[zt]
    [(_, est)] = finite_diff(loss_np, [z])
    assert np.max(np.abs(est - grad.reshape(-1))) < 1e-6


def test_finite_diff_sampling(rng):
    big = rng.normal(size=(40, 25))
    [(idx, est)] = finite_diff(lambda: float((big ** 2).sum()), [big], max_entries=50, rng=rng)
    assert len(set(idx.tolist())) == 50 and len(est) == 50
    np.testing.assert_allclose(est, 2 * big.reshape(-1)[idx], atol=1e-6)


def test_compare_report():
    ok = compare("c", np.array([1.0, 2.0]), np.array([1.0, 2.0 + 1e-9]), 1e-8)
    bad = compare("c", np.array([1.0]), np.array([1.1]), 1e-3)
    assert ok.passed and ok.compared == 2 and not bad.passed
    assert '"case": "c"' in ok.to_json()
    mismatch = compare("c", np.zeros(2), np.zeros(3), 1e-3)
    assert not mismatch.passed and mismatch.max_abs_diff == math.inf


@pytest.mark.parametrize("changes", [
    {}, {"use_conv_attention": False, "attn_kernel": None}, {"use_char_embed": False},
    {"use_reduction_layer": False}, {"bidirectional_cross": True}, {"selector_kind": "linear"},
    {"n_processing_layers": 3}, {"attn_kernel": (3, 5)},
])
def test_count_params_matches_built_model(changes):
    cfg = toy_config(**changes)
    total, parts = count_params(cfg)
    assert build_model(cfg, synthetic.word_vectors(cfg.word_dim, 1)).num_parameters() == total
    assert sum(parts.values()) == total


def test_conv_attention_costs_exactly_its_kernels():
    cfg = ModelConfig()
    with_conv, _ = count_params(cfg)
    without, _ = count_params(cfg.replace(use_conv_attention=False, attn_kernel=None))
    h, (kh, kw) = cfg.n_heads, (1, 5)  # the default kernel when none is configured
    # one kernel per attention sublayer: the decoupled attention, then two per processing
    # layer (self + cross), counting the one inside the reduction layer
    sublayers = 1 + (1 + cfg.n_processing_layers) * 2
    assert with_conv - without == sublayers * h * h * kh * kw == 720
    assert with_conv == 1_483_498


def test_column_weights_normalise_over_queries(rng):
    U, K = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    wu, wk = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    kern = rng.normal(size=(1, 3, 2, 2))
    for head in oracle_attention_weights(U, K, wu, wk, 2, kern, axis="column"):
        for j in range(5):
            assert abs(sum(head[i][j] for i in range(3)) - 1.0) < 1e-12
    for head in oracle_attention_weights(U, K, wu, wk, 2, kern, axis="row"):
        for row in head:
            assert abs(sum(row) - 1.0) < 1e-12


def test_masked_weights_are_zero(rng):
    U, K = rng.normal(size=(2, 4)), rng.normal(size=(3, 4))
    w = oracle_attention_weights(U, K, np.eye(4), np.eye(4), 1, None, "row",
                                 q_mask=[1, 1], k_mask=[1, 1, 0])
    assert all(row[2] == 0.0 for row in w[0])


def test_encoding_and_layer_norm_basics():
    enc = oracle_encoding(2, 2)
    assert enc[0] == [0.0, 1.0]
    assert math.isclose(enc[1][0], math.sin(1.0)) and math.isclose(enc[1][1], math.cos(1.0))
    out = oracle_layer_norm([[1.0, 3.0]], [1.0, 1.0], [0.0, 0.0], eps=0.0)
    assert out == [[-1.0, 1.0]]


def test_decode_oracle_examples():
    assert oracle_decode_span([0.1, 0.6, 0.3], [0.2, 0.2, 0.6]) == (1, 2)
    assert oracle_decode_span([0.5, 0.5], [0.5, 0.5]) == (0, 0)
    assert oracle_decode_span([0.0, 0.0, 1.0], [1.0, 0.0, 0.0]) == (0, 0)
    assert oracle_decode_span([1.0] + [0.0] * 19, [0.0] * 19 + [1.0], max_len=15)[1] - 0 < 15

"""Assembly of the full network: embeddings, reduction layer, processing layers, selector."""

from __future__ import annotations

import numpy as np

from fabir import tensor as T
from fabir.config import ModelConfig
from fabir.errors import ConfigError
from fabir.data import Batch
from fabir.embeddings import Embedder, WordVocab
from fabir.layers import FeedForwardReduction, ProcessingLayer, ReductionLayer
from fabir.module import Module, assign_names
from fabir.selector import ConvSelector, LinearSelector, nll_loss, selector_forward
from fabir.tensor import Tensor, dtype_for


class FabirModel(Module):
    def __init__(self, config: ModelConfig, vocab: WordVocab, rng: np.random.Generator):
        c = config
        self._config = c
        ks = c.kernel_shape
        common = dict(noise=c.kernel_init_noise, scale_logits=c.scale_logits,
                      cross_axis=c.cross_softmax_axis, bidirectional=c.bidirectional_cross,
                      eps=c.ln_eps)
        self.embedder = Embedder(vocab, rng, c.char_dim, c.char_filters, c.char_kernel_width,
                                 c.highway_layers, c.use_char_embed)
        if c.use_reduction_layer:
            self.reduction = ReductionLayer(c.d_input, c.d_model, c.ff_hidden_reduction, c.n_heads,
                                            rng, ks, **common)
        else:
            self.reduction = FeedForwardReduction(c.d_input, c.d_model, c.ff_hidden_reduction, rng)
        self.processing = [
            ProcessingLayer(c.d_model, c.ff_hidden_processing, c.n_heads, rng, ks, **common)
            for _ in range(c.n_processing_layers)
        ]
        if c.selector_kind == "conv":
            self.selector = ConvSelector(c.d_model, rng, c.selector_hidden, c.selector_kernel)
        else:
            self.selector = LinearSelector(c.d_model, rng)

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def vocab(self) -> WordVocab:
        return self.embedder.vocab

    def forward(self, batch: Batch, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Start and end distributions, each ``(B, P_len)``."""
        c = self._config
        p_mask, q_mask = batch.passage_mask, batch.question_mask
        omega_p, omega_q = self.embedder.embed_groups(
            [batch.passage_tokens, batch.question_tokens], c.keep_char, training, rng)
        P, Q = self.reduction(omega_p, omega_q, p_mask, q_mask, c.keep_reduction, training, rng)
        for layer in self.processing:
            P, Q = layer(P, Q, p_mask, q_mask, c.keep_processing, training, rng)
        return selector_forward(P, self.selector, p_mask, c.keep_selector, training, rng)

    def loss(self, batch: Batch, training: bool = False, rng=None) -> Tensor:
        pi1, pi2 = self.forward(batch, training, rng)
        return nll_loss(pi1, pi2, batch.spans[:, 0], batch.spans[:, 1], batch.ids)

    def parameter_table(self) -> list[tuple[str, tuple[int, ...], int]]:
        return [(name, p.shape, p.size) for name, p in self.named_parameters()]


def build_model(config: ModelConfig, vocab: WordVocab | None = None,
                rng: np.random.Generator | int = 0) -> FabirModel:
    """Construct a model with deterministic initialization from ``rng`` (or an integer seed)."""
    config.validate()
    if vocab is None:
        vocab = WordVocab(dim=config.word_dim)
    if vocab.dim != config.word_dim:
        raise ConfigError(f"word vectors have width {vocab.dim}, config expects {config.word_dim}")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    old = T.get_default_dtype()
    T.set_default_dtype(dtype_for(config.precision))
    try:
        model = FabirModel(config, vocab, rng)
    finally:
        T.set_default_dtype(old)
    assign_names(model)
    return model


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based generator keyed by integers (e.g. ``seed, epoch``)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))

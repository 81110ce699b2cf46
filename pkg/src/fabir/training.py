"""Optimization loop, learning-rate schedule, Adam, and batched prediction."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from fabir import tensor as T
from fabir.checkpoint import Checkpoint
from fabir.config import ModelConfig
from fabir.data import TokenizedExample, bucket_batches
from fabir.embeddings import WordVocab
from fabir.errors import ContractError, DivergenceError
from fabir.metrics import evaluate
from fabir.model import FabirModel, build_model, make_rng
from fabir.selector import decode_span

log = logging.getLogger(__name__)

# stream identifiers for make_rng(seed, stream, ...)
_INIT, _SHUFFLE, _DROPOUT = 1, 2, 3


def lr_schedule(step: int, d_model: int, warmup: int, scale: float = 0.5) -> float:
    """``scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)``."""
    if step < 1:
        raise ContractError(f"step must be >= 1, got {step}")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: ModelConfig) -> "AdamState":
        return cls(config.adam_beta1, config.adam_beta2, config.adam_eps)


def adam_step(named_params, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place. Missing gradients count as zero.

    All gradients are validated before any state changes, so a failed step leaves
    both the parameters and the optimizer state untouched.
    """
    checked = []
    for name, p in named_params:
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter {name!r} shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
        checked.append((name, p, g))
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    updates = []
    for name, p, g in checked:
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        updates.append((p, lr * (m / c1) / (np.sqrt(v / c2) + state.eps)))
    for p, delta in updates:
        p.data = (p.data - delta).astype(p.dtype)


@dataclass
class TrainResult:
    model: FabirModel
    best: Checkpoint
    last: Checkpoint
    history: list[dict]
    timings: list[dict]


def _snapshot(model, adam, epoch, history) -> Checkpoint:
    return Checkpoint.from_model(model, adam.step, epoch, history, adam)


def train(config: ModelConfig, train_set: Sequence[TokenizedExample],
          dev_set: Sequence[TokenizedExample] | None, epochs: int, seed: int,
          vocab: WordVocab | None = None, resume: Checkpoint | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Minimize the span negative log-likelihood with Adam; keep the best-dev checkpoint.

    Every random stream (init, shuffling, dropout) is derived from ``seed`` and
    the epoch index, so resuming from an epoch boundary reproduces the
    uninterrupted run.
    """
    train_set = [e for e in train_set if e.spans]
    if not train_set:
        raise ContractError("training set has no aligned examples")
    if resume is not None:
        model = resume.to_model(config.precision)
        adam = AdamState.for_config(config)
        adam.step = resume.step
        adam.m = {k: v.astype(T.dtype_for(config.precision)) for k, v in resume.adam_m.items()}
        adam.v = {k: v.astype(T.dtype_for(config.precision)) for k, v in resume.adam_v.items()}
        history = [dict(r) for r in resume.history]
        start_epoch = resume.epoch
    else:
        model = build_model(config, vocab, make_rng(seed, _INIT))
        adam = AdamState.for_config(config)
        history, start_epoch = [], 0
    named = list(model.named_parameters())
    best = _snapshot(model, adam, start_epoch, history)
    best_f1 = max((r["f1"] for r in history if r.get("f1") is not None), default=-1.0)
    timings = []

    for epoch in range(start_epoch, start_epoch + epochs):
        t0 = time.perf_counter()
        batches = bucket_batches(train_set, config.batch_size, config.bucket_edges,
                                 make_rng(seed, _SHUFFLE, epoch))
        drop_rng = make_rng(seed, _DROPOUT, epoch)
        total, count = 0.0, 0
        lr = 0.0
        for batch in batches:
            loss = model.loss(batch, training=True, rng=drop_rng)
            value = loss.item()
            if not math.isfinite(value):
                T.current_tape().clear()
                raise DivergenceError(f"non-finite loss at step {adam.step + 1}", last_good=best)
            grads = T.backward(loss)
            lr = lr_schedule(adam.step + 1, config.d_model, config.warmup_steps, config.lr_scale)
            try:
                adam_step(named, grads, adam, lr)
            except DivergenceError as err:
                raise DivergenceError(str(err), last_good=best) from None
            total += value * len(batch)
            count += len(batch)
        record = {"epoch": epoch + 1, "step": adam.step, "loss": total / count, "lr": lr,
                  "em": None, "f1": None}
        if dev_set:
            answers, _ = predict(model, dev_set)
            report = evaluate(answers, [e.example for e in dev_set])
            record["em"], record["f1"] = report.em, report.f1
        history.append(record)
        timings.append({"epoch": epoch + 1, "wall_time": time.perf_counter() - t0})
        log.info("epoch %d loss %.4f em %s f1 %s", epoch + 1, record["loss"], record["em"], record["f1"])
        if on_epoch is not None:
            on_epoch(record)
        score = record["f1"] if record["f1"] is not None else -record["loss"]
        if score > best_f1 or not dev_set:
            best_f1 = score
            best = _snapshot(model, adam, epoch + 1, history)
        else:
            best.history = [dict(r) for r in history]
    last = _snapshot(model, adam, start_epoch + epochs, history)
    return TrainResult(model, best, last, history, timings)


def predict(model: FabirModel, examples: Sequence[TokenizedExample], batch_size: int = 64,
            max_len: int | None = None) -> tuple[dict[str, str], float]:
    """Decode an answer string per example; returns ``(answers, samples_per_second)``."""
    max_len = model.config.max_answer_len if max_len is None else max_len
    answers: dict[str, str] = {}
    t0 = time.perf_counter()
    with T.no_grad():
        for batch in bucket_batches(list(examples), batch_size, model.config.bucket_edges):
            pi1, pi2 = model.forward(batch, training=False)
            for b, ex in enumerate(batch.examples):
                n = len(ex.passage)
                i, j = decode_span(pi1.data[b, :n], pi2.data[b, :n], max_len)
                answers[ex.id] = ex.answer_text(i, j)
    elapsed = max(time.perf_counter() - t0, 1e-9)
    return answers, len(examples) / elapsed

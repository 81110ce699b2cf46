"""Checkpoint files: a JSON manifest followed by a raw little-endian float32 payload.

Layout::

    b"FABIRCKPT1\\n"
    uint64 LE   manifest length in bytes
    manifest    UTF-8 JSON, sorted keys
    payload     float32 LE values, tensors back to back in manifest order

Each manifest tensor entry has ``name``, ``kind`` (``param``, ``adam_m``,
``adam_v`` or ``frozen``), ``shape``, ``offset`` and ``count`` (in elements).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from fabir.config import ModelConfig
from fabir.embeddings import WordVocab
from fabir.errors import CheckpointError, ConfigError

MAGIC = b"FABIRCKPT1\n"
_LE32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab_tokens: list[str]
    word_matrix: np.ndarray  # frozen rows, including PAD/UNK
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    # --- construction ----------------------------------------------------------

    @classmethod
    def from_model(cls, model, step=0, epoch=0, history=(), adam=None) -> "Checkpoint":
        params = {name: p.data.copy() for name, p in model.named_parameters()}
        m = {k: v.copy() for k, v in adam.m.items()} if adam else {}
        v = {k: x.copy() for k, x in adam.v.items()} if adam else {}
        vocab = model.vocab
        return cls(model.config, list(vocab.tokens[2:]), vocab.matrix.copy(), params, m, v,
                   int(step), int(epoch), [dict(r) for r in history])

    def vocab(self) -> WordVocab:
        return WordVocab(self.vocab_tokens, self.word_matrix[2:], dim=self.word_matrix.shape[1])

    def to_model(self, precision: int | None = None):
        """Build the configured model and load every parameter, auditing names and shapes."""
        from fabir.model import build_model

        config = self.config if precision is None else self.config.replace(precision=precision)
        model = build_model(config, self.vocab(), rng=0)
        load_parameters(model, self.params)
        return model

    # --- serialization ----------------------------------------------------------

    def _tensors(self):
        yield from (("param", k, v) for k, v in self.params.items())
        yield from (("adam_m", k, v) for k, v in self.adam_m.items())
        yield from (("adam_v", k, v) for k, v in self.adam_v.items())
        yield "frozen", "embeddings.words", self.word_matrix

    def to_bytes(self) -> bytes:
        table, chunks, offset = [], [], 0
        for kind, name, arr in self._tensors():
            flat = np.ascontiguousarray(arr, dtype=_LE32).reshape(-1)
            table.append({"kind": kind, "name": name, "shape": list(arr.shape),
                          "offset": offset, "count": int(flat.size)})
            chunks.append(flat.tobytes())
            offset += flat.size
        manifest = {
            "format": 1,
            "config": self.config.to_dict(),
            "step": self.step,
            "epoch": self.epoch,
            "history": self.history,
            "vocab": self.vocab_tokens,
            "tensors": table,
            "payload_count": offset,
        }
        head = json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if not raw.startswith(MAGIC) or len(raw) < len(MAGIC) + 8:
            raise CheckpointError("not a checkpoint file (bad magic)")
        pos = len(MAGIC)
        (n,) = struct.unpack("<Q", raw[pos:pos + 8])
        pos += 8
        try:
            manifest = json.loads(raw[pos:pos + n].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"unreadable manifest: {exc}") from None
        payload = raw[pos + n:]
        if len(payload) % 4:
            raise CheckpointError(f"payload length {len(payload)} is not a multiple of 4")
        values = np.frombuffer(payload, dtype=_LE32)
        buckets = {"param": {}, "adam_m": {}, "adam_v": {}, "frozen": {}}
        for entry in manifest["tensors"]:
            start, count = entry["offset"], entry["count"]
            if start + count > values.size:
                raise CheckpointError(
                    f"payload too short for {entry['name']!r} ({entry['kind']}): needs elements "
                    f"{start}..{start + count}, payload has {values.size}")
            arr = values[start:start + count].reshape(entry["shape"]).copy()
            buckets[entry["kind"]][entry["name"]] = arr
        if values.size != manifest["payload_count"]:
            raise CheckpointError(
                f"payload has {values.size} elements, manifest declares {manifest['payload_count']}")
        try:
            config = ModelConfig.from_dict(manifest["config"])
        except (ConfigError, TypeError) as exc:
            raise CheckpointError(f"invalid config in checkpoint: {exc}") from None
        return cls(config, list(manifest["vocab"]), buckets["frozen"]["embeddings.words"],
                   buckets["param"], buckets["adam_m"], buckets["adam_v"],
                   manifest["step"], manifest["epoch"], manifest["history"])

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise CheckpointError(str(exc)) from None
        return cls.from_bytes(raw)


def load_parameters(model, params: dict[str, np.ndarray]) -> None:
    """Copy arrays into the model; any missing, extra or mis-shaped entry is an error."""
    named = dict(model.named_parameters())
    for name, p in named.items():
        if name not in params:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        if tuple(params[name].shape) != p.shape:
            raise CheckpointError(
                f"parameter {name!r}: checkpoint shape {tuple(params[name].shape)} != model shape {p.shape}")
    extra = sorted(set(params) - set(named))
    if extra:
        raise CheckpointError(f"checkpoint has parameters unknown to the model: {extra[:5]}")
    for name, p in named.items():
        p.data = params[name].astype(p.dtype)

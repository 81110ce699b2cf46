"""Word + character embeddings merged by a highway network."""

from __future__ import annotations

import string
from typing import Sequence

import numpy as np

from fabir import tensor as T
from fabir.errors import ContractError, ParseError
from fabir.module import Module, xavier, zeros
from fabir.tensor import Parameter, Tensor, get_default_dtype

PAD, UNK = 0, 1


class WordVocab:
    """Frozen word vectors with reserved PAD (row 0, zeros) and UNK (row 1) rows.

    Tokens are lowercased on insert and lookup. The UNK row of :attr:`matrix`
    is zero; the trainable UNK vector lives in :class:`Embedder`.
    """

    def __init__(self, tokens: Sequence[str] = (), vectors: np.ndarray | None = None, dim: int = 100):
        self.dim = dim if vectors is None else int(np.shape(vectors)[1])
        self.tokens: list[str] = ["<pad>", "<unk>"]
        self.index: dict[str, int] = {}
        rows = [np.zeros(self.dim), np.zeros(self.dim)]
        if vectors is not None:
            for tok, vec in zip(tokens, vectors):
                key = tok.lower()
                if key in self.index:
                    continue
                self.index[key] = len(self.tokens)
                self.tokens.append(key)
                rows.append(np.asarray(vec, dtype=np.float64))
        self.matrix = np.stack(rows)

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token.lower(), UNK)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.lookup(t) for t in tokens], dtype=np.int64)

    def restrict(self, keep: set[str]) -> "WordVocab":
        """Sub-vocabulary holding only the (lowercased) tokens in ``keep``."""
        keep = {k.lower() for k in keep}
        toks = [t for t in self.tokens[2:] if t in keep]
        vecs = self.matrix[[self.index[t] for t in toks]] if toks else np.zeros((0, self.dim))
        return WordVocab(toks, vecs, dim=self.dim)


def load_word_vectors(path, dim: int = 100) -> WordVocab:
    """Read ``token f1 ... f_dim`` lines. Duplicates keep their first occurrence."""
    tokens, vecs = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise ParseError(f"{path}: line {lineno}: expected {dim} floats, got {len(parts) - 1}")
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            tokens.append(parts[0])
            vecs.append(vec)
    return WordVocab(tokens, np.array(vecs, dtype=np.float64).reshape(-1, dim), dim=dim)


def save_word_vectors(vocab: WordVocab, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens[2:]:
            vec = vocab.matrix[vocab.index[tok]]
            fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")


class CharVocab:
    """Printable ASCII plus PAD (0) and UNK (1)."""

    chars = string.printable[:95]

    def __init__(self):
        self.index = {c: i + 2 for i, c in enumerate(self.chars)}

    def __len__(self) -> int:
        return len(self.chars) + 2

    def ids(self, word: str, min_len: int) -> list[int]:
        out = [self.index.get(c, UNK) for c in word]
        return out + [PAD] * (min_len - len(out))


class Highway(Module):
    def __init__(self, d: int, n_layers: int, rng: np.random.Generator):
        self.layers = [
            _HighwayLayer(xavier(rng, (d, d)), zeros((d,)), xavier(rng, (d, d)), zeros((d,)))
            for _ in range(n_layers)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        return highway(x, self)


class _HighwayLayer(Module):
    def __init__(self, w_h, b_h, w_t, b_t):
        self.w_h, self.b_h, self.w_t, self.b_t = w_h, b_h, w_t, b_t


def highway(x: Tensor, params: Highway) -> Tensor:
    """Each layer: ``t*relu(W_h x + b_h) + (1-t)*x`` with gate ``t = sigmoid(W_t x + b_t)``."""
    for layer in params.layers:
        t = T.sigmoid(x @ layer.w_t + layer.b_t)
        h = T.relu(x @ layer.w_h + layer.b_h)
        x = t * h + (1.0 - t) * x
    return x


class CharCNN(Module):
    """Character table (PAD row fixed at zero) and a ``1 x width x char_dim x filters`` kernel."""

    def __init__(self, n_chars: int, char_dim: int, filters: int, width: int, rng: np.random.Generator):
        # the table omits the PAD row; it is prepended as a constant zero row
        self.table = Parameter(rng.normal(0.0, 0.1, size=(n_chars - 1, char_dim)), dtype=get_default_dtype())
        self.kernel = xavier(rng, (1, width, char_dim, filters), fan_in=width * char_dim,
                             fan_out=width * filters)
        self.bias = zeros((filters,))
        self._width = width


def char_embed_batch(words: Sequence[str], params: CharCNN, charvocab: CharVocab,
                     keep_prob: float = 1.0, training: bool = False, rng=None) -> Tensor:
    """Max-over-time pooled char-CNN features (before tanh), one row per word.

    Each word is padded with PAD chars to at least the kernel width; windows
    that exist only because of batch padding are excluded from the max, so a
    word's features do not depend on the other words in the batch.
    """
    width = params._width
    lens = [max(len(w), width) for w in words]
    Lc = max(lens)
    ids = np.array([charvocab.ids(w, Lc) for w in words], dtype=np.int64)
    table = T.concat([Tensor(np.zeros((1, params.table.shape[1]), dtype=params.table.dtype)),
                      params.table], axis=0)
    C = T.take_rows(table, ids)  # (N, Lc, char_dim)
    C = T.dropout(C, keep_prob, training, rng)
    conv = T.conv2d(T.expand_dims(C, 1), params.kernel, padding="valid")  # (N, 1, Lc-w+1, F)
    conv = T.reshape(conv, (len(words), Lc - width + 1, -1)) + params.bias
    n_windows = np.array(lens) - width + 1
    valid = np.arange(Lc - width + 1)[None, :] < n_windows[:, None]
    conv = T.where(valid[:, :, None], conv, -np.inf)
    return T.max_(conv, axis=1)


def char_embed(word: str, params: CharCNN, charvocab: CharVocab) -> Tensor:
    return char_embed_batch([word], params, charvocab)[0]


class Embedder(Module):
    """Maps token strings to rows of the embedding matrix of width ``d_input``."""

    def __init__(self, vocab: WordVocab, rng: np.random.Generator, char_dim: int = 8,
                 char_filters: int = 100, char_width: int = 5, highway_layers: int = 2,
                 use_chars: bool = True):
        self._vocab = vocab
        self._charvocab = CharVocab()
        self._words = Tensor(vocab.matrix, dtype=get_default_dtype())
        self.unk = Parameter(rng.normal(0.0, 0.1, size=vocab.dim), dtype=get_default_dtype())
        if use_chars:
            self.chars = CharCNN(len(self._charvocab), char_dim, char_filters, char_width, rng)
        d_input = vocab.dim + (char_filters if use_chars else 0)
        self.highway = Highway(d_input, highway_layers, rng)
        self._use_chars = use_chars

    @property
    def vocab(self) -> WordVocab:
        return self._vocab

    @property
    def d_input(self) -> int:
        return self._vocab.dim + (self.chars.kernel.shape[-1] if self._use_chars else 0)

    def embed_words(self, words: Sequence[str], keep_char: float = 1.0,
                    training: bool = False, rng=None) -> Tensor:
        """One embedding row per word in ``words`` (typically a de-duplicated list)."""
        ids = self._vocab.ids(words)
        wv = T.take_rows(self._words, ids)
        is_unk = (ids == UNK).astype(wv.dtype)[:, None]
        wv = wv + is_unk * self.unk
        if self._use_chars:
            wc = char_embed_batch(words, self.chars, self._charvocab, keep_char, training, rng)
            wv = T.concat([wv, T.tanh(wc)], axis=1)
        return highway(wv, self.highway)

    def __call__(self, token_rows: Sequence[Sequence[str]], keep_char: float = 1.0,
                 training: bool = False, rng=None) -> Tensor:
        """Embed a batch of token lists into ``(B, L_max, d_input)``; short rows use PAD embeddings."""
        return self.embed_groups([token_rows], keep_char, training, rng)[0]

    def embed_groups(self, groups: Sequence[Sequence[Sequence[str]]], keep_char: float = 1.0,
                     training: bool = False, rng=None) -> list[Tensor]:
        """Like ``__call__`` for several batches at once, sharing one table of distinct words."""
        uniq: dict[str, int] = {}
        for rows in groups:
            for row in rows:
                for tok in row:
                    uniq.setdefault(tok, len(uniq))
        words = list(uniq)
        table = self.embed_words(words, keep_char, training, rng)
        table = T.concat([table, Tensor(np.zeros((1, table.shape[1]), dtype=table.dtype))], axis=0)
        out = []
        for rows in groups:
            L = max(len(r) for r in rows)
            index = np.full((len(rows), L), len(words), dtype=np.int64)
            for b, row in enumerate(rows):
                index[b, :len(row)] = [uniq[t] for t in row]
            out.append(T.take_rows(table, index))
        return out


def embed_text(tokens: Sequence[str], embedder: Embedder) -> Tensor:
    """Embedding matrix ``(len(tokens), d_input)`` for one token sequence."""
    if not tokens:
        raise ContractError("embed_text needs at least one token")
    return embedder([list(tokens)])[0]

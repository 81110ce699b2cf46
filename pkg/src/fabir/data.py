"""SQuAD-format loading, tokenization with offsets, answer alignment and bucketed batching."""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from fabir.config import DEFAULT_BUCKET_EDGES
from fabir.errors import ContractError, ParseError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Answer:
    text: str
    char_start: int


@dataclass(frozen=True)
class SquadExample:
    id: str
    passage: str
    question: str
    answers: tuple[Answer, ...]


@dataclass(frozen=True)
class Token:
    text: str
    begin: int
    end: int


@dataclass
class TokenizedExample:
    example: SquadExample
    passage: list[Token]
    question: list[Token]
    spans: list[tuple[int, int]] = field(default_factory=list)

    @property
    def id(self) -> str:
        return self.example.id

    @property
    def passage_words(self) -> list[str]:
        return [t.text for t in self.passage]

    @property
    def question_words(self) -> list[str]:
        return [t.text for t in self.question]

    def answer_text(self, start: int, end: int) -> str:
        """Original passage characters covered by tokens ``start..end``."""
        return self.example.passage[self.passage[start].begin:self.passage[end].end]


@dataclass
class LoadReport:
    examples: list[SquadExample]
    rejects: list[tuple[str, str]]

    def __len__(self) -> int:
        return len(self.examples)


def load_squad(path) -> LoadReport:
    """Flatten a SQuAD v1.1 file. Malformed question entries are collected, not fatal."""
    try:
        with open(path, encoding="utf-8") as fh:
            root = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(root, dict) or not isinstance(root.get("data"), list):
        raise ParseError(f"{path}: expected an object with a 'data' list")
    return parse_squad(root)


def parse_squad(root: dict) -> LoadReport:
    examples, rejects = [], []
    for article in root["data"]:
        for para in article.get("paragraphs", []):
            passage = para.get("context")
            for qa in para.get("qas", []):
                qid = str(qa.get("id", "?"))
                reason = _check_qa(qa, passage)
                if reason:
                    rejects.append((qid, reason))
                    continue
                answers = tuple(Answer(a["text"], int(a["answer_start"])) for a in qa["answers"])
                examples.append(SquadExample(qid, passage, qa["question"], answers))
    return LoadReport(examples, rejects)


def _check_qa(qa, passage) -> str | None:
    if not isinstance(passage, str):
        return "paragraph has no context string"
    if not isinstance(qa.get("question"), str):
        return "missing question"
    answers = qa.get("answers")
    if not answers:
        return "no answers"
    for a in answers:
        try:
            text, start = a["text"], int(a["answer_start"])
        except (KeyError, TypeError, ValueError):
            return "malformed answer entry"
        if start < 0 or start + len(text) > len(passage):
            return f"answer_start {start} + len {len(text)} beyond passage length {len(passage)}"
    return None


def to_squad_json(examples: Sequence[SquadExample], title: str = "data") -> dict:
    paragraphs: dict[str, list] = {}
    for ex in examples:
        paragraphs.setdefault(ex.passage, []).append({
            "id": ex.id, "question": ex.question,
            "answers": [{"text": a.text, "answer_start": a.char_start} for a in ex.answers],
        })
    return {"version": "1.1", "data": [{"title": title, "paragraphs": [
        {"context": ctx, "qas": qas} for ctx, qas in paragraphs.items()]}]}


# --- tokenizer ---------------------------------------------------------------

_CONTRACTIONS = ("'s", "'re", "'ve", "'ll", "'d", "'m")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def tokenize(text: str) -> list[Token]:
    """Rule tokenizer with exact character offsets.

    Whitespace separates chunks; leading and trailing punctuation characters
    become single-character tokens; ``n't`` and ``'s``-style clitics are split
    off; hyphens and other punctuation inside a word are kept.
    """
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        tokens.extend(_split_chunk(text, i, j))
        i = j
    return tokens


def _split_chunk(text: str, begin: int, end: int) -> list[Token]:
    lead, trail = [], []
    while begin < end and _is_punct(text[begin]):
        lead.append(Token(text[begin], begin, begin + 1))
        begin += 1
    while end > begin and _is_punct(text[end - 1]):
        trail.append(Token(text[end - 1], end - 1, end))
        end -= 1
    core: list[Token] = []
    if begin < end:
        word = text[begin:end]
        low = word.lower()
        cut = None
        if low.endswith("n't") and len(word) > 3:
            cut = end - 3
        else:
            for suffix in _CONTRACTIONS:
                if low.endswith(suffix) and len(word) > len(suffix):
                    cut = end - len(suffix)
                    break
        if cut is None:
            core = [Token(word, begin, end)]
        else:
            core = [Token(text[begin:cut], begin, cut), Token(text[cut:end], cut, end)]
    return lead + core + trail[::-1]


def align_answer(passage_tokens: Sequence[Token], answer_text: str, char_start: int):
    """Token span covering ``[char_start, char_start+len(answer_text))`` or None.

    The span runs from the first to the last token overlapping the answer's
    characters, which equals the tokens containing its first and last
    character whenever those exist.
    """
    end = char_start + len(answer_text)
    hits = [k for k, t in enumerate(passage_tokens) if t.begin < end and t.end > char_start]
    if not hits:
        return None
    return hits[0], hits[-1]


def tokenize_example(ex: SquadExample) -> TokenizedExample:
    tok = TokenizedExample(ex, tokenize(ex.passage), tokenize(ex.question))
    for a in ex.answers:
        span = align_answer(tok.passage, a.text, a.char_start)
        if span is not None:
            tok.spans.append(span)
    return tok


def prepare(examples: Iterable[SquadExample], for_training: bool = True):
    """Tokenize; with ``for_training`` drop examples that lack an aligned gold span or tokens.

    Returns ``(kept, dropped_ids)``.
    """
    kept, dropped = [], []
    for ex in examples:
        t = tokenize_example(ex)
        if not t.passage or not t.question or (for_training and not t.spans):
            dropped.append(ex.id)
            continue
        kept.append(t)
    if dropped:
        log.info("excluded %d unalignable or empty examples", len(dropped))
    return kept, dropped


# --- batching ----------------------------------------------------------------


@dataclass
class Batch:
    examples: list[TokenizedExample]
    passage_tokens: list[list[str]]
    question_tokens: list[list[str]]
    passage_lengths: np.ndarray
    question_lengths: np.ndarray
    spans: np.ndarray  # (B, 2); -1 where no gold span exists

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.examples]

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def passage_mask(self) -> np.ndarray:
        L = int(self.passage_lengths.max())
        return np.arange(L)[None, :] < self.passage_lengths[:, None]

    @property
    def question_mask(self) -> np.ndarray:
        L = int(self.question_lengths.max())
        return np.arange(L)[None, :] < self.question_lengths[:, None]

    def passage_ids(self, vocab) -> np.ndarray:
        return _padded_ids(self.passage_tokens, vocab)

    def question_ids(self, vocab) -> np.ndarray:
        return _padded_ids(self.question_tokens, vocab)


def _padded_ids(rows, vocab) -> np.ndarray:
    L = max(len(r) for r in rows)
    out = np.zeros((len(rows), L), dtype=np.int64)  # 0 is the PAD row
    for b, r in enumerate(rows):
        out[b, :len(r)] = vocab.ids(r)
    return out


def make_batch(examples: Sequence[TokenizedExample]) -> Batch:
    if not examples:
        raise ContractError("cannot build an empty batch")
    spans = np.array([e.spans[0] if e.spans else (-1, -1) for e in examples], dtype=np.int64)
    return Batch(
        list(examples),
        [e.passage_words for e in examples],
        [e.question_words for e in examples],
        np.array([len(e.passage) for e in examples], dtype=np.int64),
        np.array([len(e.question) for e in examples], dtype=np.int64),
        spans,
    )


def bucket_of(length: int, edges: Sequence[int]) -> int:
    """Index of the first edge ``>= length``; lengths past the last edge share the final bucket."""
    for k, e in enumerate(edges):
        if length <= e:
            return k
    return len(edges)


def bucket_batches(examples: Sequence[TokenizedExample], batch_size: int,
                   bucket_edges: Sequence[int] = DEFAULT_BUCKET_EDGES,
                   rng: np.random.Generator | None = None) -> list[Batch]:
    """Group by passage-length bucket, shuffle within buckets, cut into batches, shuffle batches.

    Without ``rng`` the order is the input order (used for evaluation).
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    buckets: dict[int, list[TokenizedExample]] = {}
    for e in examples:
        buckets.setdefault(bucket_of(len(e.passage), bucket_edges), []).append(e)
    batches = []
    for k in sorted(buckets):
        items = buckets[k]
        if rng is not None:
            items = [items[i] for i in rng.permutation(len(items))]
        for s in range(0, len(items), batch_size):
            batches.append(make_batch(items[s:s + batch_size]))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches

"""Exact-match and token-F1 scoring with SQuAD v1.1 answer normalization."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

_PUNCT = set(string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def f1_score(prediction: str, gold: str) -> float:
    pred = normalize_answer(prediction).split()
    ref = normalize_answer(gold).split()
    if not pred and not ref:
        return 1.0  # both normalize to nothing; agrees with exact_match
    common = Counter(pred) & Counter(ref)
    same = sum(common.values())
    if same == 0:
        return 0.0
    precision = same / len(pred)
    recall = same / len(ref)
    return 2 * precision * recall / (precision + recall)


def exact_match(prediction: str, gold: str) -> float:
    return float(normalize_answer(prediction) == normalize_answer(gold))


@dataclass
class ExampleScore:
    id: str
    prediction: str | None
    em: float
    f1: float
    missing: bool = False


@dataclass
class MetricReport:
    em: float
    f1: float
    records: list[ExampleScore] = field(default_factory=list)

    @property
    def missing(self) -> list[str]:
        return [r.id for r in self.records if r.missing]

    def to_dict(self) -> dict:
        return {"em": self.em, "f1": self.f1, "count": len(self.records),
                "missing": self.missing,
                "examples": [r.__dict__ for r in self.records]}


def evaluate(predictions: Mapping[str, str], examples: Sequence) -> MetricReport:
    """Average max-over-golds EM and F1, as percentages.

    ``examples`` are :class:`~fabir.data.SquadExample`-like (``id`` and
    ``answers`` with ``text``). Examples without a prediction score 0 and
    are flagged as missing.
    """
    records = []
    for ex in examples:
        golds = [a.text for a in ex.answers]
        pred = predictions.get(ex.id)
        if pred is None:
            records.append(ExampleScore(ex.id, None, 0.0, 0.0, missing=True))
            continue
        em = max(exact_match(pred, g) for g in golds)
        f1 = max(f1_score(pred, g) for g in golds)
        records.append(ExampleScore(ex.id, pred, em, f1))
    n = len(records)
    em = 100.0 * sum(r.em for r in records) / n if n else 0.0
    f1 = 100.0 * sum(r.f1 for r in records) / n if n else 0.0
    return MetricReport(em, f1, records)


def predictions_to_json(predictions: Mapping[str, str], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: predictions[k] for k in sorted(predictions)}, fh, ensure_ascii=False)


def load_predictions(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

"""A small extractive task that trains in minutes.

Each passage (10-30 tokens) is filler words with two marker segments
``<marker> a1 [a2 [a3]] end``. The question ``what follows <marker>`` names
one of the two markers; the answer is the 1-3 tokens between that marker
and the following ``end``. Vocabulary: 89 fillers, 8 markers and 3 function
words, 100 words in total.
"""

from __future__ import annotations

import numpy as np

from fabir.data import Answer, SquadExample
from fabir.embeddings import WordVocab

FILLERS = [f"w{k:02d}" for k in range(89)]
MARKERS = [f"mark{k}" for k in range(8)]
FUNCTION_WORDS = ["end", "what", "follows"]
VOCAB = FILLERS + MARKERS + FUNCTION_WORDS


def _passage(rng: np.random.Generator):
    length = int(rng.integers(10, 31))
    m_a, m_b = rng.choice(len(MARKERS), size=2, replace=False)
    segs = []
    for m in (m_a, m_b):
        ans = [FILLERS[k] for k in rng.integers(0, len(FILLERS), size=int(rng.integers(1, 4)))]
        segs.append((MARKERS[m], ans))
    n_seg_tokens = sum(len(a) + 2 for _, a in segs)
    n_fill = max(length - n_seg_tokens, 0)
    # split fillers into three gaps around the two segments
    cuts = np.sort(rng.integers(0, n_fill + 1, size=2))
    gaps = [cuts[0], cuts[1] - cuts[0], n_fill - cuts[1]]
    fill = [FILLERS[k] for k in rng.integers(0, len(FILLERS), size=n_fill)]
    tokens, spans, pos = [], {}, 0
    for g, (marker, ans) in zip(gaps, segs):
        tokens += fill[pos:pos + g]
        pos += g
        start = len(tokens) + 1
        tokens += [marker] + ans + ["end"]
        spans[marker] = (start, start + len(ans) - 1)
    tokens += fill[pos:]
    return tokens, spans, [segs[0][0], segs[1][0]]


def generate(n: int, seed: int, prefix: str = "syn") -> list[SquadExample]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5E7])))
    out = []
    for k in range(n):
        tokens, spans, markers = _passage(rng)
        marker = markers[int(rng.integers(0, 2))]
        i, j = spans[marker]
        starts = np.cumsum([0] + [len(t) + 1 for t in tokens])
        char_start = int(starts[i])
        text = " ".join(tokens[i:j + 1])
        out.append(SquadExample(f"{prefix}-{seed}-{k}", " ".join(tokens),
                                f"what follows {marker}", (Answer(text, char_start),)))
    return out


def word_vectors(dim: int, seed: int) -> WordVocab:
    """Random unit-scale vectors for the synthetic vocabulary."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x7EC])))
    vecs = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(len(VOCAB), dim))
    return WordVocab(VOCAB, vecs, dim=dim)


def dataset(n_train: int = 2000, n_dev: int = 500, seed: int = 7):
    """``(train, dev)`` example lists drawn from disjoint random streams."""
    return generate(n_train, seed, "train"), generate(n_dev, seed + 1_000_003, "dev")

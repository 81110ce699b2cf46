import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fabir import synthetic
from fabir.config import DEFAULT_BUCKET_EDGES
from fabir.data import (Answer, SquadExample, align_answer, bucket_batches, bucket_of, load_squad,
                        make_batch, parse_squad, prepare, to_squad_json, tokenize)
from fabir.errors import ContractError, ParseError


def _write(tmp_path, root, name="d.json"):
    path = tmp_path / name
    path.write_text(json.dumps(root))
    return path


def _squad(context, qas):
    return {"version": "1.1", "data": [{"title": "t", "paragraphs": [{"context": context, "qas": qas}]}]}


def _qa(qid, text, start, question="what?"):
    return {"id": qid, "question": question, "answers": [{"text": text, "answer_start": start}]}


# --- loading --------------------------------------------------------------------------------------


def test_minimal_file(tmp_path):
    report = load_squad(_write(tmp_path, _squad("The cat sat.", [_qa("a", "cat", 4)])))
    assert len(report) == 1 and not report.rejects
    ex = report.examples[0]
    assert ex.id == "a" and ex.answers == (Answer("cat", 4),)


def test_answer_beyond_passage_is_rejected_with_reason(tmp_path):
    report = load_squad(_write(tmp_path, _squad("short", [_qa("a", "xyz", 4), _qa("b", "short", 0)])))
    assert [e.id for e in report.examples] == ["b"]
    assert report.rejects[0][0] == "a" and "beyond" in report.rejects[0][1]


@pytest.mark.parametrize("qa,reason", [
    ({"id": "x", "question": "q", "answers": []}, "no answers"),
    ({"id": "x", "answers": [{"text": "a", "answer_start": 0}]}, "missing question"),
    ({"id": "x", "question": "q", "answers": [{"text": "a"}]}, "malformed"),
])
def test_malformed_entries_are_rejected(tmp_path, qa, reason):
    report = load_squad(_write(tmp_path, _squad("abc", [qa])))
    assert not report.examples and reason in report.rejects[0][1]


def test_unreadable_or_wrong_root_is_fatal(tmp_path):
    with pytest.raises(ParseError):
        load_squad(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_squad(bad)
    with pytest.raises(ParseError):
        load_squad(_write(tmp_path, {"data": "nope"}))


def test_squad_json_roundtrip():
    examples = synthetic.generate(12, seed=3)
    again = parse_squad(json.loads(json.dumps(to_squad_json(examples)))).examples
    assert again == examples


@pytest.mark.skipif(not os.environ.get("FABIR_SQUAD_DEV"), reason="set FABIR_SQUAD_DEV to the official dev-v1.1.json")
def test_official_dev_file_size():
    assert len(load_squad(os.environ["FABIR_SQUAD_DEV"])) == 10_570


# --- tokenization ---------------------------------------------------------------------------------


def test_tokenize_with_offsets():
    toks = tokenize("Hello, world.")
    assert [(t.text, t.begin, t.end) for t in toks] == [
        ("Hello", 0, 5), (",", 5, 6), ("world", 7, 12), (".", 12, 13)]


def test_tokenize_edge_cases():
    assert tokenize("") == []
    assert [t.text for t in tokenize("state-of-the-art")] == ["state-of-the-art"]
    assert [t.text for t in tokenize("don't stop")] == ["do", "n't", "stop"]
    assert [t.text for t in tokenize("John's (car)")] == ["John", "'s", "(", "car", ")"]


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60))
def test_offsets_always_point_at_token_text(text):
    prev_end = 0
    for t in tokenize(text):
        assert text[t.begin:t.end] == t.text and t.text.strip() == t.text and t.text
        assert t.begin >= prev_end
        prev_end = t.end


# --- alignment ---------------------------------------------------------------------------------------


def test_alignment_examples():
    toks = tokenize("The cat sat on the mat")
    assert align_answer(toks, "cat", 4) == (1, 1)
    assert align_answer(toks, "sat on the", 8) == (2, 4)
    assert align_answer(toks, "cat", 3) == (1, 1)  # start inside whitespace
    assert align_answer(toks, "at", 5) == (1, 1)  # partial token still covers it
    assert align_answer(tokenize("a   b"), " ", 2) is None


def test_prepare_excludes_unalignable_training_examples():
    exs = [SquadExample("ok", "The cat sat", "q", (Answer("cat", 4),)),
           SquadExample("gap", "a   b", "q", (Answer(" ", 2),)),
           SquadExample("noq", "a b", "   ", (Answer("a", 0),))]
    kept, dropped = prepare(exs, for_training=True)
    assert [k.id for k in kept] == ["ok"] and dropped == ["gap", "noq"]
    kept, dropped = prepare(exs, for_training=False)
    assert [k.id for k in kept] == ["ok", "gap"] and dropped == ["noq"]


def test_synthetic_answers_align_to_generated_spans():
    exs, dropped = prepare(synthetic.generate(200, seed=11))
    assert not dropped
    for e in exs:
        i, j = e.spans[0]
        marker = e.question_words[-1]
        assert e.passage_words[i - 1] == marker and e.passage_words[j + 1] == "end"
        assert 1 <= j - i + 1 <= 3 and 10 <= len(e.passage) <= 30


# --- batching ---------------------------------------------------------------------------------------


def _examples(lengths):
    out = []
    for k, n in enumerate(lengths):
        text = " ".join(["w"] * n)
        out.append(SquadExample(f"e{k}", text, "q ?", (Answer("w", 0),)))
    return prepare(out)[0]


def test_equal_lengths_give_padding_free_batches():
    for b in bucket_batches(_examples([7] * 10), 4):
        assert b.passage_mask.all()


def test_distant_lengths_never_share_a_batch():
    exs = _examples([10, 300] * 6)
    for b in bucket_batches(exs, 5, DEFAULT_BUCKET_EDGES, np.random.default_rng(0)):
        assert len(set(b.passage_lengths.tolist())) == 1


def test_bucket_of_edges():
    assert [bucket_of(n, (60, 100)) for n in (1, 60, 61, 100, 101, 500)] == [0, 0, 1, 1, 2, 2]


def test_seeded_order_is_reproducible_and_covers_everything():
    exs = _examples([5, 70, 12, 120, 33, 8, 61, 99] * 3)
    a = bucket_batches(exs, 3, rng=np.random.default_rng(4))
    b = bucket_batches(exs, 3, rng=np.random.default_rng(4))
    assert [x.ids for x in a] == [x.ids for x in b]
    assert sorted(i for x in a for i in x.ids) == sorted(e.id for e in exs)
    c = bucket_batches(exs, 3, rng=np.random.default_rng(5))
    assert [x.ids for x in a] != [x.ids for x in c]


def test_make_batch_spans_and_masks():
    exs = prepare([SquadExample("a", "x y z", "q", (Answer("y z", 2),)),
                   SquadExample("b", "x", "q r", ())], for_training=False)[0]
    b = make_batch(exs)
    assert b.spans.tolist() == [[1, 2], [-1, -1]]
    assert b.passage_mask.tolist() == [[True] * 3, [True, False, False]]
    assert b.question_mask.tolist() == [[True, False], [True, True]]
    with pytest.raises(ContractError):
        make_batch([])
    with pytest.raises(ContractError):
        bucket_batches(exs, 0)

import json

import pytest

from fabir import cli
from fabir.config import toy_config
from fabir.oracles import count_params

SMALL = ["--synthetic", "--synthetic-train", "120", "--synthetic-dev", "40", "--precision", "64"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    data = out / "data"
    assert cli.main(["synth", "--out", str(data), "--synthetic-train", "120",
                     "--synthetic-dev", "40"]) == 0
    assert cli.main(["train", *SMALL, "--epochs", "3", "--seed", "7", "--out", str(out / "run")]) == 0
    return out


def test_train_writes_history_and_checkpoints(trained):
    run_dir = trained / "run"
    records = [json.loads(line) for line in (run_dir / "history.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert all(set(r) == {"epoch", "step", "loss", "lr", "em", "f1"} for r in records)
    assert (run_dir / "checkpoint.fabir").exists() and (run_dir / "last.fabir").exists()
    assert len((run_dir / "timings.jsonl").read_text().splitlines()) == 3


def test_identical_invocations_give_identical_files(trained, tmp_path, capsys):
    assert run(capsys, "train", *SMALL, "--epochs", "3", "--seed", "7", "--out", tmp_path)[0] == 0
    for name in ("history.jsonl", "checkpoint.fabir", "last.fabir"):
        assert (tmp_path / name).read_bytes() == (trained / "run" / name).read_bytes()


def test_train_without_data_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--out", tmp_path)
    assert code == 2 and "--train" in err


def test_train_with_missing_file_is_data_error(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--train", tmp_path / "nope.json", "--vectors",
                       tmp_path / "v.txt", "--out", tmp_path)
    assert code == 3 and "nope.json" in err


def test_train_from_files_and_resume(trained, tmp_path, capsys):
    data = trained / "data"
    common = ["--train", data / "train.json", "--dev", data / "dev.json", "--vectors",
              data / "vectors.txt", "--config", _toy_file(tmp_path, word_dim=32), "--seed", "3"]
    code, out, _ = run(capsys, "train", *common, "--epochs", "1", "--out", tmp_path / "a")
    assert code == 0 and "dev EM" in out
    code, _, err = run(capsys, "train", *common, "--epochs", "1", "--resume",
                       tmp_path / "a" / "last.fabir", "--out", tmp_path / "a")
    assert code == 0, err
    steps = [json.loads(x)["step"] for x in (tmp_path / "a" / "history.jsonl").read_text().splitlines()]
    assert len(steps) == 2 and steps[1] == 2 * steps[0]


def test_eval_checkpoint_and_predictions(trained, tmp_path, capsys):
    dev = trained / "data" / "dev.json"
    ckpt = trained / "run" / "checkpoint.fabir"
    code, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--dev", dev, "--out", tmp_path / "r.json")
    assert code == 0 and out.startswith("EM ")
    report = json.loads((tmp_path / "r.json").read_text())
    assert run(capsys, "predict", "--checkpoint", ckpt, "--input", dev, "--out", tmp_path / "p.json")[0] == 0
    code, out2, _ = run(capsys, "eval", "--predictions", tmp_path / "p.json", "--dev", dev)
    assert code == 0 and out2 == out
    assert 0.0 <= report["em"] <= report["f1"] <= 100.0


def test_eval_rejects_corrupt_checkpoint(trained, tmp_path, capsys):
    bad = tmp_path / "bad.fabir"
    bad.write_bytes((trained / "run" / "checkpoint.fabir").read_bytes()[:-100])
    code, _, err = run(capsys, "eval", "--checkpoint", bad, "--dev", trained / "data" / "dev.json")
    assert code == 3 and "too short" in err and "embeddings.words" in err


def test_predict_outputs(trained, tmp_path, capsys):
    ckpt = trained / "run" / "checkpoint.fabir"
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"version": "1.1", "data": [
        {"title": "t", "paragraphs": [{"context": "some text here", "qas": []}]}]}))
    assert run(capsys, "predict", "--checkpoint", ckpt, "--input", empty, "--out", tmp_path / "e.json")[0] == 0
    assert json.loads((tmp_path / "e.json").read_text()) == {}
    code, out, _ = run(capsys, "predict", "--checkpoint", ckpt, "--input", trained / "data" / "dev.json",
                       "--out", tmp_path / "p.json")
    answers = json.loads((tmp_path / "p.json").read_text())
    assert code == 0 and len(answers) == 40 and "samples/s" in out
    assert all(isinstance(a, str) and len(a.split()) <= 15 for a in answers.values())


def test_inspect_totals(trained, tmp_path, capsys):
    cfg_file = _toy_file(tmp_path)
    code, out, _ = run(capsys, "inspect", "--config", cfg_file, "--json")
    info = json.loads(out)
    assert code == 0 and info["total"] == count_params(toy_config())[0]
    assert sum(info["breakdown"].values()) == info["total"]
    code, out, _ = run(capsys, "inspect", "--config", cfg_file)
    assert f"{info['total']:,}" in out
    fresh = json.loads(run(capsys, "inspect", "--synthetic", "--json")[1])
    from_ckpt = json.loads(run(capsys, "inspect", "--checkpoint", trained / "run" / "checkpoint.fabir",
                               "--json")[1])
    assert fresh["total"] == from_ckpt["total"]


def test_inspect_against_reference(capsys):
    code, out, _ = run(capsys, "inspect", "--against-reference", "--json")
    info = json.loads(out)
    assert code == 0 and info["reference_total"] == 1_385_198
    assert info["delta"] == info["total"] - 1_385_198


def test_config_file_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("d_model = 8\nbogus = 1\n")
    code, _, err = run(capsys, "inspect", "--config", bad)
    assert code == 2 and "bogus" in err
    bad.write_text("n_heads = 3\n")
    assert run(capsys, "inspect", "--config", bad)[0] == 2
    assert run(capsys, "inspect", "--config", tmp_path / "missing.cfg")[0] == 2


def test_parse_config_file_values(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# comment\nd_model = 16\nattn_kernel = [1, 3]  \ncross_softmax_axis = row\n\n")
    assert cli.parse_config_file(f) == {"d_model": 16, "attn_kernel": [1, 3], "cross_softmax_axis": "row"}


def _toy_file(tmp_path, **changes):
    path = tmp_path / "toy.cfg"
    cfg = toy_config(**changes).to_dict()
    path.write_text("".join(f"{k} = {json.dumps(v)}\n" for k, v in cfg.items()))
    return path

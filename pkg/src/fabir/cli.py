"""Command-line interface: ``fabir {train,eval,predict,inspect,synth}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data or checkpoint
integrity error, 4 numeric divergence.

Model settings come from, in increasing priority: the built-in defaults (the
synthetic preset with ``--synthetic``), a ``--config`` file of ``key=value``
lines, and explicit flags. Config keys are the fields of
:class:`fabir.config.ModelConfig`; values are JSON literals or bare strings.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from fabir import synthetic
from fabir.checkpoint import Checkpoint
from fabir.config import REFERENCE_PARAMETER_COUNT, ModelConfig, synthetic_config
from fabir.data import load_squad, prepare, to_squad_json
from fabir.embeddings import load_word_vectors, save_word_vectors
from fabir.errors import (CheckpointError, ConfigError, ContractError, DataError,
                          DivergenceError, ParseError)
from fabir.metrics import evaluate, load_predictions, predictions_to_json
from fabir.model import build_model
from fabir.training import predict, train

log = logging.getLogger("fabir")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --- configuration ------------------------------------------------------------------


def parse_config_file(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ConfigError(f"{path}: line {lineno}: expected key=value")
        if key not in known:
            raise ConfigError(f"{path}: line {lineno}: unknown config key {key!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _flag_overrides(args) -> dict:
    o = {}
    if args.batch_size is not None:
        o["batch_size"] = args.batch_size
    if args.precision is not None:
        o["precision"] = args.precision
    if args.warmup is not None:
        o["warmup_steps"] = args.warmup
    if args.no_char_embed:
        o["use_char_embed"] = False
    if args.no_conv_attention:
        o["use_conv_attention"] = False
    if args.no_reduction_layer:
        o["use_reduction_layer"] = False
    if args.cross_softmax is not None:
        o["cross_softmax_axis"] = args.cross_softmax
    if args.selector is not None:
        o["selector_kind"] = args.selector
    if args.processing_layers is not None:
        o["n_processing_layers"] = args.processing_layers
    return o


def resolve_config(args) -> ModelConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    values.update(_flag_overrides(args))
    if "attn_kernel" not in values and values.get("use_conv_attention") is False:
        values["attn_kernel"] = None
    try:
        return synthetic_config(**values) if args.synthetic else ModelConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --- commands -----------------------------------------------------------------------


def _load_examples(path):
    report = load_squad(path)
    for qid, reason in report.rejects:
        log.warning("skipping %s: %s", qid, reason)
    return report.examples


def cmd_train(args) -> int:
    config = resolve_config(args)
    if args.synthetic:
        train_raw, dev_raw = synthetic.dataset(args.synthetic_train, args.synthetic_dev, args.seed)
    elif args.train:
        train_raw = _load_examples(args.train)
        dev_raw = _load_examples(args.dev) if args.dev else []
    else:
        raise UsageError("train needs --train FILE or --synthetic")
    if args.vectors:
        vocab = load_word_vectors(args.vectors, config.word_dim)
    elif args.synthetic:
        vocab = synthetic.word_vectors(config.word_dim, args.seed)
    else:
        raise UsageError("--vectors is required when training on a data file")
    train_set, dropped = prepare(train_raw, for_training=True)
    dev_set, _ = prepare(dev_raw, for_training=False)
    if dropped:
        print(f"excluded {len(dropped)} training examples without an aligned answer")
    words = {w for ex in train_set + dev_set for w in ex.passage_words + ex.question_words}
    vocab = vocab.restrict(words)

    resume = Checkpoint.load(args.resume) if args.resume else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history_path = out / "history.jsonl"
    if resume is None:
        history_path.write_text("")

    def on_epoch(record):
        with open(history_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        if args.verbose:
            print(json.dumps(record, sort_keys=True), flush=True)

    try:
        result = train(config, train_set, dev_set, args.epochs, args.seed, vocab,
                       resume=resume, on_epoch=on_epoch)
    except DivergenceError as exc:
        if exc.last_good is not None:
            exc.last_good.save(out / "checkpoint.fabir")
            print(f"diverged; last good checkpoint written to {out / 'checkpoint.fabir'}",
                  file=sys.stderr)
        raise
    result.best.save(out / "checkpoint.fabir")
    result.last.save(out / "last.fabir")
    with open(out / "timings.jsonl", "a" if resume else "w", encoding="utf-8") as fh:
        for t in result.timings:
            fh.write(json.dumps(t, sort_keys=True) + "\n")
    if dev_set:
        answers, _ = predict(result.best.to_model(config.precision), dev_set)
        report = evaluate(answers, [e.example for e in dev_set])
        print(f"dev EM {report.em:.1f} F1 {report.f1:.1f}")
    print(f"wrote {out / 'checkpoint.fabir'}")
    return EXIT_OK


def _model_from(args):
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    ckpt = Checkpoint.load(args.checkpoint)
    return ckpt.to_model(args.precision)


def cmd_eval(args) -> int:
    if not args.dev:
        raise UsageError("eval needs --dev FILE")
    examples = _load_examples(args.dev)
    if args.predictions:
        answers = load_predictions(args.predictions)
    else:
        model = _model_from(args)
        tokenized, _ = prepare(examples, for_training=False)
        answers, _ = predict(model, tokenized, batch_size=args.batch_size or 64)
    report = evaluate(answers, examples)
    if report.missing:
        print(f"{len(report.missing)} examples have no prediction (scored 0)", file=sys.stderr)
    print(f"EM {report.em:.1f} F1 {report.f1:.1f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
    return EXIT_OK


def cmd_predict(args) -> int:
    if not args.input:
        raise UsageError("predict needs --input FILE")
    if not args.out:
        raise UsageError("predict needs --out FILE")
    model = _model_from(args)
    tokenized, skipped = prepare(_load_examples(args.input), for_training=False)
    for qid in skipped:
        log.warning("no tokens in passage or question of %s; no prediction", qid)
    answers, rate = predict(model, tokenized, batch_size=args.batch_size or 64)
    predictions_to_json(answers, args.out)
    print(f"{len(answers)} predictions, {rate:.1f} samples/s")
    return EXIT_OK


def _breakdown(table) -> dict[str, int]:
    out: dict[str, int] = {}
    for name, _, count in table:
        out[name.split(".")[0]] = out.get(name.split(".")[0], 0) + count
    return out


def cmd_inspect(args) -> int:
    if args.checkpoint:
        model = _model_from(args)
    else:
        config = resolve_config(args)
        model = build_model(config)
    table = model.parameter_table()
    total = sum(c for _, _, c in table)
    info = {
        "parameters": [{"name": n, "shape": list(s), "count": c} for n, s, c in table],
        "breakdown": _breakdown(table),
        "total": total,
    }
    if args.against_reference:
        info["reference_total"] = REFERENCE_PARAMETER_COUNT
        info["delta"] = total - REFERENCE_PARAMETER_COUNT
        info["delta_percent"] = 100.0 * (total - REFERENCE_PARAMETER_COUNT) / REFERENCE_PARAMETER_COUNT
    if args.json:
        print(json.dumps(info, sort_keys=True))
        return EXIT_OK
    width = max(len(n) for n, _, _ in table)
    for name, shape, count in table:
        print(f"{name:<{width}}  {str(tuple(shape)):<18} {count:>9,}")
    print()
    for module, count in info["breakdown"].items():
        print(f"{module:<{width}}  {'':<18} {count:>9,}")
    print(f"{'total':<{width}}  {'':<18} {total:>9,}")
    if args.against_reference:
        print(f"reference {REFERENCE_PARAMETER_COUNT:,}; delta {info['delta']:+,} "
              f"({info['delta_percent']:+.1f}%)")
    return EXIT_OK


def cmd_synth(args) -> int:
    if not args.out:
        raise UsageError("synth needs --out DIR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tr, dv = synthetic.dataset(args.synthetic_train, args.synthetic_dev, args.seed)
    for name, exs in (("train.json", tr), ("dev.json", dv)):
        with open(out / name, "w", encoding="utf-8") as fh:
            json.dump(to_squad_json(exs, "synthetic"), fh)
    save_word_vectors(synthetic.word_vectors(args.word_dim, args.seed), out / "vectors.txt")
    print(f"wrote {len(tr)} train / {len(dv)} dev examples and {args.word_dim}-d vectors to {out}")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------------


def _config_help() -> str:
    keys = ", ".join(f.name for f in dataclasses.fields(ModelConfig))
    return f"file of key=value lines overriding defaults; keys: {keys}"


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--config", help=_config_help())
    g.add_argument("--synthetic", action="store_true",
                   help="use the synthetic task and its small preset (d_model 32, 2 heads)")
    g.add_argument("--warmup", type=int, help="learning-rate warmup steps")
    g.add_argument("--no-char-embed", action="store_true", help="word vectors only")
    g.add_argument("--no-conv-attention", action="store_true", help="plain multi-head attention")
    g.add_argument("--no-reduction-layer", action="store_true",
                   help="feedforward map to d_model instead of the reduction layer")
    g.add_argument("--cross-softmax", choices=["row", "column"], help="cross-attention normalization")
    g.add_argument("--selector", choices=["conv", "linear"], help="answer selector variant")
    g.add_argument("--processing-layers", type=int, help="number of processing layers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fabir", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=7, help="seed for every random stream (default 7)")
        p.add_argument("--precision", type=int, choices=[32, 64], help="floating-point width")
        p.add_argument("--batch-size", type=int,
                       help="batch size (default 75; 32 with --synthetic; 64 for inference)")
        p.add_argument("--checkpoint", help="checkpoint file")
        p.add_argument("--out", help="output path")
        p.add_argument("--synthetic-train", type=int, default=2000, help="synthetic train size")
        p.add_argument("--synthetic-dev", type=int, default=500, help="synthetic dev size")

    p = sub.add_parser("train", help="train a model")
    common(p)
    _add_model_flags(p)
    p.add_argument("--train", help="SQuAD-format training file")
    p.add_argument("--dev", help="SQuAD-format dev file")
    p.add_argument("--vectors", help="word vectors, one 'token v1 ... vd' line per word")
    p.add_argument("--epochs", type=int, default=20, help="epochs to run (default 20)")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.set_defaults(func=cmd_train, out="run")

    p = sub.add_parser("eval", help="score a checkpoint or a predictions file")
    common(p)
    p.add_argument("--dev", help="SQuAD-format file with gold answers")
    p.add_argument("--predictions", help="id->answer JSON to score instead of running a model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write id->answer JSON")
    common(p)
    p.add_argument("--input", "--dev", dest="input", help="SQuAD-format input file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="parameter table and totals")
    common(p)
    _add_model_flags(p)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--against-reference", "--against-paper", action="store_true",
                   help=f"print the delta against the reference total {REFERENCE_PARAMETER_COUNT:,}")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth", help="write the synthetic task as SQuAD JSON plus vectors")
    common(p)
    p.add_argument("--word-dim", type=int, default=32, help="vector width (default 32)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"fabir {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, DataError, CheckpointError, ContractError) as exc:
        print(f"fabir {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"fabir {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Every command accepts ``--config run.ini`` plus one flag per TrainConfig
field (``--gen-lr 0.002``); flags override the file. Failures exit nonzero
after writing a single JSON error record to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .corpus import (
    CLASS_NAMES,
    DatasetBundle,
    load_bundle,
    load_corpus,
    read_unlabeled_file,
    save_bundle,
    split_and_subsample,
)
from .estimator import SpamGANClassifier
from .grid import MetricsReport, emit_plot_data, run_grid
from .trainer import (
    TrainConfig,
    parse_config_value,
    adversarial_train,
    evaluate,
    load_checkpoint,
    load_config,
    pretrain,
    save_checkpoint,
)

log = logging.getLogger("spamgan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [model] [optimizer] [objective] [schedule] [data] [run] sections")
    group = p.add_argument_group("training configuration (override --config)")
    for f in dataclasses.fields(TrainConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", default=None, metavar="VALUE",
                           help=f"[{f.metadata['section']}] default: {f.default}")


def _overrides(args) -> dict:
    """TrainConfig values given explicitly on the command line."""
    out = {}
    for f in dataclasses.fields(TrainConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            out[f.name] = parse_config_value(f, raw)
    return out


def _config(args) -> TrainConfig:
    if args.config:
        return load_config(args.config, **_overrides(args))
    return TrainConfig(**_overrides(args))


def _bundle(args, cfg: TrainConfig) -> DatasetBundle:
    if getattr(args, "data", None):
        return load_bundle(args.data)
    return _corpus_bundle(cfg)


def _corpus_bundle(cfg: TrainConfig) -> DatasetBundle:
    if not cfg.labeled_path:
        raise UsageError("pass --data DIR (from prepare-data) or --labeled-path")
    labeled, unlabeled, vocab = load_corpus(cfg.labeled_path, cfg.unlabeled_path, cfg.vocab_size, cfg.T)
    return split_and_subsample(labeled, cfg.test_fraction, cfg.labeled_fraction, unlabeled,
                               cfg.unlabeled_fraction, cfg.split_seed, vocab)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


# ------------------------------------------------------------------ commands


def cmd_prepare_data(args) -> None:
    cfg = _config(args)
    bundle = _corpus_bundle(cfg)
    save_bundle(bundle, args.out)
    _emit({"command": "prepare-data", "out": str(args.out), **bundle.manifest()})


def cmd_pretrain(args) -> None:
    cfg = _config(args)
    bundle = _bundle(args, cfg)
    state = pretrain(cfg, bundle)
    save_checkpoint(state, args.out)
    _emit({"command": "pretrain", "checkpoint": str(args.out), "counters": state.counters})


def cmd_train(args) -> None:
    if args.resume:
        # a resumed run keeps the checkpoint's configuration; explicit flags still apply
        state = load_checkpoint(args.resume)
        cfg = state.config.replace(**_overrides(args))
        bundle = _bundle(args, cfg)
    else:
        cfg = _config(args)
        bundle = _bundle(args, cfg)
        state = pretrain(cfg, bundle)
    state = adversarial_train(cfg, bundle, state)
    save_checkpoint(state, args.out)
    result = {"command": "train", "checkpoint": str(args.out), "counters": state.counters}
    if bundle.labeled_test:
        result["test"] = evaluate(state, bundle.labeled_test)
    _emit(result)


def cmd_evaluate(args) -> None:
    state = load_checkpoint(args.checkpoint)
    bundle = load_bundle(args.data)
    examples = bundle.labeled_test if args.split == "test" else bundle.labeled_train
    _emit({"command": "evaluate", "split": args.split, "n": len(examples), **evaluate(state, examples)})


def cmd_classify(args) -> None:
    est = SpamGANClassifier.load(args.checkpoint)
    texts = read_unlabeled_file(args.input)
    if not texts:
        raise UsageError(f"{args.input}: no reviews")
    proba = est.predict_proba(texts)
    preds = est.predict(texts)
    for text, p, c in zip(texts, proba, preds):
        _emit({"text": text, "class": CLASS_NAMES[int(c)], "confidence": float(p[int(c)]),
               "p_spam": float(p[1])})


def cmd_generate(args) -> None:
    est = SpamGANClassifier.load(args.checkpoint)
    classes = None if args.cls is None else CLASS_NAMES.index(args.cls)
    for rec in est.generate(args.n, classes, args.temperature, args.seed):
        _emit(rec)


def cmd_grid(args) -> None:
    cfg = _config(args)
    if not cfg.labeled_path:
        raise UsageError("grid needs --labeled-path (and usually --unlabeled-path)")
    labeled, unlabeled, vocab = load_corpus(cfg.labeled_path, cfg.unlabeled_path, cfg.vocab_size, cfg.T)
    report = run_grid(cfg, labeled, unlabeled, vocab, _floats(args.labeled_fractions),
                      _floats(args.unlabeled_fractions), [int(s) for s in _floats(args.seeds)],
                      include_base=not args.no_base, on_record=lambda r: log.info("record %s", r))
    report.save(args.out)
    _emit({"command": "grid", "report": str(args.out), "records": len(report.records),
           "failed": sum(r["status"] != "ok" for r in report.records)})


def cmd_plot_data(args) -> None:
    report = MetricsReport.load(args.report)
    warnings = emit_plot_data(report, args.out)
    _emit({"command": "plot-data", "out": str(args.out), "warnings": warnings})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spamgan", description="Semi-supervised GAN for opinion-spam classification")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare-data", help="split and encode a labeled (+ unlabeled) corpus")
    _add_config_flags(p)
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.set_defaults(func=cmd_prepare_data)

    for name, func, helptext in (("pretrain", cmd_pretrain, "pre-train all three networks"),
                                 ("train", cmd_train, "pre-train then run adversarial training")):
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p)
        p.add_argument("--data", help="directory written by prepare-data")
        p.add_argument("--out", required=True, type=Path, help="checkpoint file to write")
        if name == "train":
            p.add_argument("--resume", help="continue adversarial training from this checkpoint")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="accuracy, F1 and perplexity on a prepared split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", help="label reviews, one per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("generate", help="sample sentences from the generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--class", dest="cls", choices=CLASS_NAMES)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("grid", help="labeled x unlabeled fraction experiment grid")
    _add_config_flags(p)
    p.add_argument("--labeled-fractions", default="0.1,0.3,0.5,0.7,0.9,1.0")
    p.add_argument("--unlabeled-fractions", default="0,0.5,0.7,1.0")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--no-base", action="store_true", help="skip the classifier-only baseline")
    p.add_argument("--out", required=True, type=Path, help="report JSON file")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("plot-data", help="write one CSV table per figure from a grid report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    command = next((a for a in argv if not a.startswith("-")), None)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
        return 0
    except UsageError as err:
        _error(command, "UsageError", str(err))
        return 2
    except Exception as err:  # noqa: BLE001 - every failure becomes one error record
        _error(command, type(err).__name__, str(err))
        return 1


def _error(command, kind, message) -> None:
    sys.stderr.write(json.dumps({"status": "error", "command": command, "error": kind, "message": message}) + "\n")


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: ``train``, ``eval``, ``predict``, ``inspect-attention`` and
``gradcheck``.  Exit codes are stable: 0 success, 1 check failure, 2
usage/validation error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    TruncationCaps,
    build_vocab,
    encode_example,
    load_embeddings,
    load_race_dir,
    load_race_file,
    tokenized_view,
)
from .errors import ComatchingError, ConfigError, NumericError
from .gradcheck import TOLERANCE, end_to_end_errors
from .model import VARIANTS, forward_scores, predict, score_candidates
from .training import TrainConfig, config_from_dict, config_to_dict, evaluate, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

TRAIN_DEFAULTS: dict[str, object] = {
    "d": 100,
    "l": 150,
    "lr": 1e-3,
    "epochs": 1,
    "batch": 16,
    "seed": 0,
    "clip": 5.0,
    "variant": "full",
    "trainable_emb": False,
    "min_count": 1,
    "sentence_cap": 50,
    "question_cap": 30,
    "option_cap": 20,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comatching",
        description="Train and inspect the co-matching reading-comprehension model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write the best checkpoint")
    p_train.add_argument("--data", required=True, help="directory with train/ and dev/ subtrees")
    p_train.add_argument("--emb", required=True, help="embedding text file (token v1 .. vd)")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--config", help="key=value config file; flags win over it")
    p_train.add_argument("--d", type=int)
    p_train.add_argument("--l", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--clip", type=float)
    p_train.add_argument("--variant", choices=VARIANTS)
    p_train.add_argument("--trainable-emb", action="store_true", default=None)
    p_train.add_argument("--min-count", type=int)
    p_train.add_argument("--sentence-cap", type=int)
    p_train.add_argument("--question-cap", type=int)
    p_train.add_argument("--option-cap", type=int)
    p_train.add_argument("--metrics", help="metrics JSONL path (default: <out>.metrics.jsonl)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", choices=("test", "dev"), default="test")
    p_eval.add_argument("--json", action="store_true", help="also print the report as JSON")

    p_pred = sub.add_parser("predict", help="score the questions of one article file")
    p_pred.add_argument("--ckpt", required=True)
    p_pred.add_argument("--input", required=True)

    p_insp = sub.add_parser(
        "inspect-attention", help="dump per-sentence attention matrices as JSON"
    )
    p_insp.add_argument("--ckpt", required=True)
    p_insp.add_argument("--input", required=True)
    p_insp.add_argument("--question", type=int, required=True, help="question index (0-based)")
    p_insp.add_argument("--option", type=int, required=True, help="option index (0-based)")
    p_insp.add_argument("--out", required=True)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of the whole model")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--eps", type=float, default=1e-5)
    p_gc.add_argument(
        "--inject-fault",
        action="store_true",
        help="corrupt one gradient rule first (negative control; must exit 1)",
    )
    return parser


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{path} line {lineno}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def _coerce(key: str, raw: str, like: object):
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ConfigError(f"config key {key}: cannot read boolean from {raw!r}")
    try:
        return type(like)(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key}: {exc}") from exc


def _resolve_train_settings(args: argparse.Namespace) -> dict[str, object]:
    resolved = dict(TRAIN_DEFAULTS)
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        for key, raw in _parse_config_file(args.config).items():
            if key not in resolved:
                raise ConfigError(f"unknown config key {key!r} in {args.config}")
            resolved[key] = _coerce(key, raw, resolved[key])
    for key in resolved:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    if resolved["variant"] not in VARIANTS:
        raise ConfigError(f"unknown variant {resolved['variant']!r}")
    return resolved


def _print_resolved(settings: dict[str, object]) -> None:
    print("resolved config:")
    for key in sorted(settings):
        print(f"  {key} = {settings[key]}")


def cmd_train(args: argparse.Namespace) -> int:
    settings = _resolve_train_settings(args)
    _print_resolved(settings)
    root = Path(args.data)
    for sub in ("train", "dev"):
        if not (root / sub).is_dir():
            print(f"error: {root / sub} is not a directory", file=sys.stderr)
            return EXIT_USAGE
    if not Path(args.emb).is_file():
        print(f"error: embedding file not found: {args.emb}", file=sys.stderr)
        return EXIT_USAGE

    caps = TruncationCaps(
        sentence=int(settings["sentence_cap"]),
        question=int(settings["question_cap"]),
        option=int(settings["option_cap"]),
    )
    config = TrainConfig(
        d=int(settings["d"]),
        l=int(settings["l"]),
        learning_rate=float(settings["lr"]),
        batch_size=int(settings["batch"]),
        epochs=int(settings["epochs"]),
        seed=int(settings["seed"]),
        clip_norm=float(settings["clip"]),
        trainable_embeddings=bool(settings["trainable_emb"]),
        variant=str(settings["variant"]),
        caps=caps,
    )
    config.validate()

    raw_train = load_race_dir(root / "train")
    raw_dev = load_race_dir(root / "dev")
    if not raw_train:
        print(f"error: no training examples under {root / 'train'}", file=sys.stderr)
        return EXIT_USAGE
    vocab = build_vocab(raw_train, min_count=int(settings["min_count"]))
    table = load_embeddings(args.emb, vocab, config.d, seed=config.seed)
    print(f"loaded {len(raw_train)} train / {len(raw_dev)} dev examples; "
          f"vocab {len(vocab)} tokens, embedding coverage {table.coverage:.3f}")
    train_examples = [encode_example(r, vocab, caps) for r in raw_train]
    dev_examples = [encode_example(r, vocab, caps) for r in raw_dev]

    metrics_path = args.metrics or f"{args.out}.metrics.jsonl"
    result = train(
        config, train_examples, dev_examples, table,
        metrics_path=metrics_path, log=print,
    )
    save_checkpoint(result.params, result.embeddings, vocab, config_to_dict(config), args.out)
    if result.best_dev_accuracy is not None:
        print(f"best dev accuracy {result.best_dev_accuracy:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint written to {args.out}; metrics in {metrics_path}")
    return EXIT_OK


def _format_report_table(report) -> str:
    rows = [
        ("RACE-M", report.by_subset["middle"]),
        ("RACE-H", report.by_subset["high"]),
        ("RACE", report.overall),
    ]
    lines = [f"{'bucket':<10} {'accuracy':>9} {'correct':>8} {'total':>6}"]
    for name, stats in rows:
        acc = "-" if stats.accuracy is None else f"{stats.accuracy:.4f}"
        lines.append(f"{name:<10} {acc:>9} {stats.correct:>8} {stats.total:>6}")
    lines.append("question types:")
    for tag, stats in report.by_type.items():
        acc = "-" if stats.accuracy is None else f"{stats.accuracy:.4f}"
        lines.append(f"  {tag:<8} {acc:>9} {stats.correct:>8} {stats.total:>6}")
    return "\n".join(lines)


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    config = config_from_dict(ckpt.config)
    _print_resolved({"ckpt": args.ckpt, "data": args.data, "split": args.split,
                     "variant": config.variant, "d": config.d, "l": config.l})
    split_dir = Path(args.data) / args.split
    if not split_dir.is_dir():
        print(f"error: {split_dir} is not a directory", file=sys.stderr)
        return EXIT_USAGE
    raw = load_race_dir(split_dir)
    if not raw:
        print(f"error: no examples under {split_dir}", file=sys.stderr)
        return EXIT_USAGE
    examples = [encode_example(r, ckpt.vocab, config.caps) for r in raw]
    report = evaluate(ckpt.params, ckpt.embeddings, examples)
    print(_format_report_table(report))
    if args.json:
        print(json.dumps(report.as_dict(), indent=2))
    return EXIT_OK


def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def cmd_predict(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    config = config_from_dict(ckpt.config)
    _print_resolved({"ckpt": args.ckpt, "input": args.input, "variant": config.variant})
    raws = load_race_file(args.input, require_answers=False)
    for q_idx, raw in enumerate(raws):
        ex = encode_example(raw, ckpt.vocab, config.caps)
        scores = forward_scores(ex, ckpt.embeddings, ckpt.params).data.reshape(-1)
        probs = _softmax(scores)
        choice = int(scores.argmax())
        print(f"question {q_idx}: {raw.question}")
        for k, (s, p) in enumerate(zip(scores, probs)):
            print(f"  {chr(ord('a') + k)}  score={s: .6f}  prob={p:.6f}")
        print(f"  chosen: {chr(ord('a') + choice)}")
    return EXIT_OK


def cmd_inspect_attention(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    config = config_from_dict(ckpt.config)
    if config.variant != "full":
        print("error: attention inspection needs a full-variant checkpoint", file=sys.stderr)
        return EXIT_USAGE
    _print_resolved({"ckpt": args.ckpt, "input": args.input,
                     "question": args.question, "option": args.option})
    raws = load_race_file(args.input, require_answers=False)
    if not (0 <= args.question < len(raws)):
        print(f"error: question index {args.question} out of range "
              f"(file has {len(raws)})", file=sys.stderr)
        return EXIT_USAGE
    raw = raws[args.question]
    if not (0 <= args.option < len(raw.options)):
        print(f"error: option index {args.option} out of range "
              f"({len(raw.options)} options)", file=sys.stderr)
        return EXIT_USAGE

    ex = encode_example(raw, ckpt.vocab, config.caps)
    sent_tokens, q_tokens, opt_tokens = tokenized_view(raw, config.caps)
    collected: list[list] = []
    score_candidates(ex, ckpt.embeddings, ckpt.params, collect=collected)
    records = collected[args.option]
    dump = {
        "sentences": sent_tokens,
        "question": q_tokens,
        "option": opt_tokens[args.option],
        "G_q": [r.g_q.data.tolist() for r in records],
        "G_a": [r.g_a.data.tolist() for r in records],
    }
    Path(args.out).write_text(json.dumps(dump), encoding="utf-8")
    print(f"attention dump for question {args.question}, option {args.option} "
          f"written to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .tensor import gradient_fault

    _print_resolved({"seed": args.seed, "eps": args.eps,
                     "tolerance": TOLERANCE, "inject_fault": args.inject_fault})
    if args.inject_fault:
        with gradient_fault(1.05):
            errors = end_to_end_errors(args.seed, args.eps)
    else:
        errors = end_to_end_errors(args.seed, args.eps)
    failing = []
    for group, check in sorted(errors.items()):
        status = "ok" if check.ok else "FAIL"
        print(
            f"  {group:<12} max rel err {check.max_rel_err:.3e}  "
            f"(textbook floor: {check.literal_err:.3e})  [{status}]"
        )
        if not check.ok:
            failing.append(group)
    if failing:
        print(f"gradient check FAILED for: {', '.join(failing)}")
        return EXIT_CHECK_FAILED
    print("gradient check passed for all parameter groups")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "inspect-attention": cmd_inspect_attention,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ComatchingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())

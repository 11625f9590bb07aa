"""Optimization loop, evaluation harness and metrics."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import EmbeddingTable, EncodedExample, TruncationCaps, make_batches
from .errors import ConfigError, DataError, NumericError
from .model import (
    ModelParams,
    VARIANTS,
    bucket_by_question_type,
    candidate_loss,
    forward_scores,
    init_params,
    predict,
    QUESTION_TYPE_KEYWORDS,
)
from .tensor import Tape, Tensor

SUBSETS = ("middle", "high")


@dataclass
class TrainConfig:
    """Knobs of one training run; every tagged example derives from seed."""

    d: int = 100
    l: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 1
    seed: int = 0
    clip_norm: float = 5.0
    trainable_embeddings: bool = False
    variant: str = "full"
    caps: TruncationCaps = field(default_factory=TruncationCaps)

    def validate(self) -> None:
        if self.d < 1 or self.l < 2 or self.l % 2 != 0:
            raise ConfigError(f"bad model sizes d={self.d}, l={self.l} (l must be even)")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ConfigError("learning rate and clip norm must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.seed < 0:
            raise ConfigError("batch_size >= 1, epochs >= 0 and seed >= 0 required")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        self.caps.validate()


class AdamState:
    """First/second moment buffers and step counter for Adam."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: dict[str, Tensor]):
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update applied in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - AdamState.beta1 ** t
    bc2 = 1.0 - AdamState.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter {name} {p.data.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= AdamState.beta1
        m += (1.0 - AdamState.beta1) * g
        v *= AdamState.beta2
        v += (1.0 - AdamState.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + AdamState.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so the global norm is at most ``max_norm``.

    Returns the pre-clip global norm; gradients below the bound are untouched.
    """
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0.0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class BucketStats:
    correct: int = 0
    total: int = 0

    @property
    def accuracy(self) -> float | None:
        return None if self.total == 0 else self.correct / self.total

    def add(self, hit: bool) -> None:
        self.total += 1
        self.correct += int(hit)


@dataclass
class EvalReport:
    """Accuracy overall, per exam subset and per question-type bucket."""

    overall: BucketStats
    by_subset: dict[str, BucketStats]
    by_type: dict[str, BucketStats]

    def as_dict(self) -> dict:
        def enc(b: BucketStats) -> dict:
            return {"accuracy": b.accuracy, "correct": b.correct, "total": b.total}

        return {
            "overall": enc(self.overall),
            "subsets": {k: enc(v) for k, v in self.by_subset.items()},
            "question_types": {k: enc(v) for k, v in self.by_type.items()},
        }


def evaluate(
    params: ModelParams,
    emb: Tensor,
    examples: Sequence[EncodedExample],
    variant: str | None = None,
) -> EvalReport:
    """Accuracy of argmax predictions, bucketed by subset and question type."""
    if not examples:
        raise DataError("cannot evaluate on an empty dataset")
    if variant is not None and variant != params.variant:
        raise ConfigError(f"requested variant {variant!r} but params are {params.variant!r}")
    overall = BucketStats()
    by_subset = {s: BucketStats() for s in SUBSETS}
    by_type = {k: BucketStats() for k in (*QUESTION_TYPE_KEYWORDS, "other")}
    for ex in examples:
        if ex.gold is None:
            raise DataError(f"example {ex.id} has no gold answer")
        scores = forward_scores(ex, emb, params)
        hit = predict(scores) == ex.gold
        overall.add(hit)
        if ex.subset in by_subset:
            by_subset[ex.subset].add(hit)
        for tag in bucket_by_question_type(ex.question_tokens):
            by_type[tag].add(hit)
    return EvalReport(overall=overall, by_subset=by_subset, by_type=by_type)


@dataclass
class TrainResult:
    params: ModelParams
    embeddings: Tensor
    metrics: list[dict]
    best_epoch: int
    best_dev_accuracy: float | None


def _example_loss(ex: EncodedExample, emb: Tensor, params: ModelParams) -> tuple[float, Tape]:
    if ex.gold is None:
        raise DataError(f"example {ex.id} has no gold answer; cannot train on it")
    with Tape() as tape:
        scores = forward_scores(ex, emb, params)
        loss = candidate_loss(scores, ex.gold)
        value = loss.item()
        if math.isfinite(value):
            tape.backward(loss)
    return value, tape


def train(
    config: TrainConfig,
    train_examples: Sequence[EncodedExample],
    dev_examples: Sequence[EncodedExample],
    table: EmbeddingTable,
    initial_params: ModelParams | None = None,
    metrics_path: str | Path | None = None,
    log: Callable[[str], None] | None = None,
    stop_dev_accuracy: float | None = None,
) -> TrainResult:
    """Shuffled mini-batch training with gradient clipping and Adam.

    Evaluates on the dev split after every epoch and returns the parameters
    of the best dev epoch (ties go to the earlier epoch).  With zero epochs
    the initialized parameters are returned unchanged.  There is no early
    stopping by default; ``stop_dev_accuracy`` ends the run once the dev
    accuracy reaches the given level (used by time-bounded sanity checks).
    """
    config.validate()
    if not train_examples and config.epochs > 0:
        raise DataError("training requires a non-empty train split")
    if table.dim != config.d:
        raise ConfigError(f"embedding table dim {table.dim} != config d {config.d}")

    params = initial_params if initial_params is not None else init_params(
        config.d, config.l, config.seed, config.variant
    )
    if params.variant != config.variant:
        raise ConfigError(f"initial params variant {params.variant!r} != config {config.variant!r}")
    emb = Tensor(table.matrix.copy(), requires_grad=config.trainable_embeddings)

    trainables = dict(params.named_tensors())
    if config.trainable_embeddings:
        trainables["embeddings"] = emb
    state = AdamState(trainables)

    best_params = params.copy()
    best_emb = emb.copy()
    best_acc: float | None = None
    best_epoch = 0
    metrics: list[dict] = []
    sink = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            batches = make_batches(train_examples, config.batch_size, config.seed, epoch)
            epoch_losses = []
            for b_idx, batch in enumerate(batches):
                for t in trainables.values():
                    t.zero_grad()
                batch_ex = batch.examples()
                for ex in batch_ex:
                    value, _ = _example_loss(ex, emb, params)
                    if not math.isfinite(value):
                        raise NumericError(
                            f"non-finite loss in epoch {epoch} batch {b_idx} (example {ex.id})"
                        )
                    epoch_losses.append(value)
                inv = 1.0 / len(batch_ex)
                grads = {
                    name: (t.grad * inv if t.grad is not None else np.zeros_like(t.data))
                    for name, t in trainables.items()
                }
                clip_gradients(grads, config.clip_norm)
                adam_step(trainables, grads, state, config.learning_rate)

            train_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0
            dev_acc = None
            if dev_examples:
                dev_acc = evaluate(params, emb, dev_examples).overall.accuracy
            row = {
                "epoch": epoch,
                "train_loss": train_loss,
                "dev_accuracy": dev_acc,
                "wall_seconds": time.perf_counter() - started,
            }
            metrics.append(row)
            if sink:
                sink.write(json.dumps(row) + "\n")
                sink.flush()
            if log:
                log(
                    f"epoch {epoch}: train_loss={train_loss:.6f}"
                    + (f" dev_accuracy={dev_acc:.4f}" if dev_acc is not None else "")
                )
            if dev_acc is not None and (best_acc is None or dev_acc > best_acc):
                best_acc = dev_acc
                best_epoch = epoch
                best_params = params.copy()
                best_emb = emb.copy()
            if (
                stop_dev_accuracy is not None
                and dev_acc is not None
                and dev_acc >= stop_dev_accuracy
            ):
                break
    finally:
        if sink:
            sink.close()

    if best_acc is None:
        # No dev split (or zero epochs): the final state is the result.
        best_params = params
        best_emb = emb
        best_epoch = config.epochs
    return TrainResult(
        params=best_params,
        embeddings=best_emb,
        metrics=metrics,
        best_epoch=best_epoch,
        best_dev_accuracy=best_acc,
    )


def config_to_dict(config: TrainConfig) -> dict[str, str]:
    """Flat string map of the run configuration (checkpoint config block)."""
    return {
        "d": str(config.d),
        "l": str(config.l),
        "learning_rate": repr(config.learning_rate),
        "batch_size": str(config.batch_size),
        "epochs": str(config.epochs),
        "seed": str(config.seed),
        "clip_norm": repr(config.clip_norm),
        "trainable_embeddings": str(int(config.trainable_embeddings)),
        "variant": config.variant,
        "sentence_cap": str(config.caps.sentence),
        "question_cap": str(config.caps.question),
        "option_cap": str(config.caps.option),
    }


def config_from_dict(values: dict[str, str]) -> TrainConfig:
    try:
        config = TrainConfig(
            d=int(values["d"]),
            l=int(values["l"]),
            learning_rate=float(values["learning_rate"]),
            batch_size=int(values["batch_size"]),
            epochs=int(values["epochs"]),
            seed=int(values["seed"]),
            clip_norm=float(values["clip_norm"]),
            trainable_embeddings=bool(int(values["trainable_embeddings"])),
            variant=values["variant"],
            caps=TruncationCaps(
                sentence=int(values["sentence_cap"]),
                question=int(values["question_cap"]),
                option=int(values["option_cap"]),
            ),
        )
    except KeyError as exc:
        raise ConfigError(f"config block is missing key {exc.args[0]!r}") from exc
    config.validate()
    return config

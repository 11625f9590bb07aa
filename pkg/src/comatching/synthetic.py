"""Synthetic exam generator for sanity and learning-signal checks.

Each passage is a handful of short random-token sentences; the correct
option copies one passage sentence while distractors are fresh random token
strings, so a matching model can solve the task while a random scorer stays
at chance.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .data import RawExample
from .rng import substream


def synthetic_examples(
    count: int,
    seed: int,
    vocab_size: int = 50,
    sentences_per_passage: int = 3,
    sentence_len: int = 5,
    n_options: int = 4,
    option_len: int = 5,
) -> list[RawExample]:
    """Generate ``count`` single-question examples over a closed token set."""
    rng = substream(seed, "synthetic")
    words = [f"w{i:02d}" for i in range(vocab_size)]

    def phrase(n: int) -> list[str]:
        return [words[int(i)] for i in rng.integers(0, vocab_size, size=n)]

    examples = []
    for idx in range(count):
        sentences = [phrase(sentence_len) for _ in range(sentences_per_passage)]
        article = " ".join(" ".join(s) + "." for s in sentences)
        sentence_texts = {" ".join(s) for s in sentences}
        gold = int(rng.integers(0, n_options))
        options = []
        for slot in range(n_options):
            if slot == gold:
                copied = sentences[int(rng.integers(0, sentences_per_passage))]
                options.append(" ".join(copied))
            else:
                while True:
                    distractor = " ".join(phrase(option_len))
                    if distractor not in sentence_texts:
                        options.append(distractor)
                        break
        question = " ".join(phrase(3)) + " ?"
        examples.append(
            RawExample(
                id=f"synthetic-{idx}",
                article=article,
                question=question,
                options=options,
                gold=gold,
                subset="middle",
            )
        )
    return examples


def write_exam_dir(examples: Sequence[RawExample], root: str | Path, subset: str = "middle") -> Path:
    """Write examples as one article file each, in the on-disk exam schema."""
    target = Path(root) / subset
    target.mkdir(parents=True, exist_ok=True)
    for ex in examples:
        doc = {
            "article": ex.article,
            "questions": [ex.question],
            "options": [ex.options],
            "id": ex.id,
        }
        if ex.gold is not None:
            doc["answers"] = [chr(ord("A") + ex.gold)]
        (target / f"{ex.id}.txt").write_text(json.dumps(doc), encoding="utf-8")
    return target

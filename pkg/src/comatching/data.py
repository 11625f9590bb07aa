"""Reading-comprehension data pipeline: loading, tokenizing, vocab, batching.

The on-disk exam format is one JSON document per article (UTF-8, ``.txt`` or
``.json``), with fields::

    {"article": str, "questions": [str], "options": [[str, ...]],
     "answers": ["A".."D", ...], "id": str}

Directory names containing ``middle`` or ``high`` tag examples with their
exam subset for bucketed reporting.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, EmbeddingFormatError
from .rng import substream

PAD_INDEX = 0
UNK_INDEX = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_PUNCT = frozenset(string.punctuation)
_TERMINALS = frozenset(".!?")


@dataclass
class RawExample:
    """One (article, question, options) record before tokenization."""

    id: str
    article: str
    question: str
    options: list[str]
    gold: int | None
    subset: str | None = None


@dataclass
class TruncationCaps:
    """Per-sequence token limits applied at encode time."""

    sentence: int = 50
    question: int = 30
    option: int = 20

    def validate(self) -> None:
        if min(self.sentence, self.question, self.option) < 1:
            raise ConfigError(f"truncation caps must be >= 1, got {self}")


@dataclass
class EncodedExample:
    """Token-index view of a RawExample; sentences are never empty."""

    id: str
    sentences: list[list[int]]
    question: list[int]
    options: list[list[int]]
    gold: int | None
    subset: str | None = None
    question_tokens: tuple[str, ...] = ()


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenization with outer punctuation peeled off.

    Leading and trailing ASCII punctuation characters become tokens of their
    own; interior punctuation (apostrophes, hyphens, commas in numbers) is
    left alone.
    """
    tokens: list[str] = []
    for chunk in text.lower().split():
        i, j = 0, len(chunk)
        lead = []
        while i < j and chunk[i] in _PUNCT:
            lead.append(chunk[i])
            i += 1
        trail = []
        while j > i and chunk[j - 1] in _PUNCT:
            trail.append(chunk[j - 1])
            j -= 1
        tokens.extend(lead)
        if i < j:
            tokens.append(chunk[i:j])
        tokens.extend(reversed(trail))
    return tokens


def split_sentences(text: str) -> list[str]:
    """Split after '.', '!' or '?' when followed by whitespace or end of text.

    No abbreviation handling is attempted; empty segments are dropped.
    """
    sentences: list[str] = []
    buf: list[str] = []
    n = len(text)
    for pos, ch in enumerate(text):
        buf.append(ch)
        if ch in _TERMINALS and (pos + 1 == n or text[pos + 1].isspace()):
            sent = "".join(buf).strip()
            if sent:
                sentences.append(sent)
            buf = []
    tail = "".join(buf).strip()
    if tail:
        sentences.append(tail)
    return sentences


@dataclass
class Vocabulary:
    """Token <-> index maps with PAD=0 and UNK=1 reserved."""

    token_to_index: dict[str, int]
    index_to_token: list[str]

    def __len__(self) -> int:
        return len(self.index_to_token)

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_index.get
        return [get(t, UNK_INDEX) for t in tokens]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.index_to_token[i] for i in indices]

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        index_to_token = [PAD_TOKEN, UNK_TOKEN, *tokens]
        token_to_index = {tok: i for i, tok in enumerate(index_to_token)}
        if len(token_to_index) != len(index_to_token):
            raise DataError("duplicate tokens while building vocabulary")
        return cls(token_to_index, index_to_token)


def build_vocab(examples: Iterable[RawExample], min_count: int = 1) -> Vocabulary:
    """Count tokens over articles, questions and options; keep those with
    frequency >= min_count, ordered by descending frequency then token."""
    if min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {min_count}")
    counts: dict[str, int] = {}
    for ex in examples:
        for text in (ex.article, ex.question, *ex.options):
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary.from_tokens(kept)


@dataclass
class EmbeddingTable:
    """Embedding matrix of shape (dim, vocab_size); the PAD column is zero."""

    matrix: np.ndarray
    dim: int
    coverage: float = 0.0


def random_embeddings(
    vocab: Vocabulary, dim: int, seed: int = 0, scale: float = 0.1
) -> EmbeddingTable:
    """Uniform[-scale, scale] vectors for every token except PAD."""
    rng = substream(seed, "embedding-fill")
    matrix = rng.uniform(-scale, scale, size=(dim, len(vocab)))
    matrix[:, PAD_INDEX] = 0.0
    return EmbeddingTable(matrix, dim, coverage=0.0)


def load_embeddings(path: str | Path, vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingTable:
    """Read whitespace-separated "token v1 .. v_dim" lines into a table.

    Tokens absent from the file are filled uniform[-0.1, 0.1] from the
    seeded stream; PAD is forced to zero.  An optional leading "count dim"
    header is skipped when its second field equals the data arity minus one.
    """
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.readlines()
    start = 0
    if lines:
        head = lines[0].split()
        if len(head) == 2 and len(lines) > 1:
            try:
                declared = int(head[1])
            except ValueError:
                declared = -1
            if declared == len(lines[1].split()) - 1:
                start = 1
    for lineno, line in enumerate(lines[start:], start=start + 1):
        parts = line.split()
        if not parts:
            continue
        tok, vals = parts[0], parts[1:]
        if len(vals) != dim:
            raise EmbeddingFormatError(
                f"{path} line {lineno}: expected {dim} values, found {len(vals)}"
            )
        if tok in vocab.token_to_index:
            vectors[tok] = np.array([float(v) for v in vals])

    rng = substream(seed, "embedding-fill")
    matrix = np.empty((dim, len(vocab)))
    matched = 0
    for idx, tok in enumerate(vocab.index_to_token):
        vec = vectors.get(tok)
        if vec is not None:
            matrix[:, idx] = vec
            matched += 1
        else:
            matrix[:, idx] = rng.uniform(-0.1, 0.1, size=dim)
    matrix[:, PAD_INDEX] = 0.0
    non_reserved = max(len(vocab) - 2, 1)
    return EmbeddingTable(matrix, dim, coverage=matched / non_reserved)


def _letter_to_gold(letter: str, n_options: int, where: str) -> int:
    if len(letter) != 1 or not ("A" <= letter.upper() < chr(ord("A") + n_options)):
        raise DataError(f"{where}: answer letter {letter!r} is not in A..{chr(ord('A') + n_options - 1)}")
    return ord(letter.upper()) - ord("A")


def load_race_file(
    path: str | Path, subset: str | None = None, require_answers: bool = True
) -> list[RawExample]:
    """Parse one article file into one RawExample per question."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot parse article file ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: article file must hold a JSON object")
    for key in ("article", "questions", "options"):
        if key not in doc:
            raise DataError(f"{path}: missing field {key!r}")
    questions = doc["questions"]
    options = doc["options"]
    answers = doc.get("answers")
    if len(options) != len(questions):
        raise DataError(f"{path}: {len(questions)} questions but {len(options)} option lists")
    if answers is None:
        if require_answers:
            raise DataError(f"{path}: missing field 'answers'")
        answers = [None] * len(questions)
    elif len(answers) != len(questions):
        raise DataError(f"{path}: {len(questions)} questions but {len(answers)} answers")
    file_id = str(doc.get("id") or path.stem)

    examples = []
    for k, (question, opts, ans) in enumerate(zip(questions, options, answers)):
        if not isinstance(opts, list) or not opts:
            raise DataError(f"{path}: question {k} has no options")
        gold = None if ans is None else _letter_to_gold(str(ans), len(opts), f"{path} question {k}")
        examples.append(
            RawExample(
                id=f"{file_id}-q{k}",
                article=str(doc["article"]),
                question=str(question),
                options=[str(o) for o in opts],
                gold=gold,
                subset=subset,
            )
        )
    return examples


def _subset_of(path: Path, root: Path) -> str | None:
    parts = {p.lower() for p in path.relative_to(root).parts[:-1]}
    if "middle" in parts:
        return "middle"
    if "high" in parts:
        return "high"
    return None


def load_race_dir(path: str | Path) -> list[RawExample]:
    """Load every article file under ``path`` (recursively), sorted by name."""
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix in (".txt", ".json"))
    examples: list[RawExample] = []
    for f in files:
        examples.extend(load_race_file(f, subset=_subset_of(f, root)))
    return examples


def tokenized_view(
    raw: RawExample, caps: TruncationCaps | None = None
) -> tuple[list[list[str]], list[str], list[list[str]]]:
    """Truncated token lists (sentences, question, options) of an example.

    Sentences that are empty after tokenization are dropped.  This is the
    exact token view that ``encode_example`` maps to indices.
    """
    caps = caps or TruncationCaps()
    caps.validate()
    sentences = []
    for sent in split_sentences(raw.article):
        toks = tokenize(sent)[: caps.sentence]
        if toks:
            sentences.append(toks)
    question = tokenize(raw.question)[: caps.question]
    options = [tokenize(o)[: caps.option] for o in raw.options]
    return sentences, question, options


def encode_example(
    raw: RawExample, vocab: Vocabulary, caps: TruncationCaps | None = None
) -> EncodedExample:
    """Tokenize, split into sentences, truncate and map to indices.

    An article with no surviving sentence is a data error.
    """
    sentences, question, options = tokenized_view(raw, caps)
    if not sentences:
        raise DataError(f"example {raw.id}: article has no usable sentence")
    return EncodedExample(
        id=raw.id,
        sentences=[vocab.encode(s) for s in sentences],
        question=vocab.encode(question),
        options=[vocab.encode(o) for o in options],
        gold=raw.gold,
        subset=raw.subset,
        question_tokens=tuple(tokenize(raw.question)),
    )


@dataclass
class Batch:
    """Padded index arrays plus boolean masks marking real tokens.

    Shapes: sentences (B, N_max, S_max), question (B, Q_max), options
    (B, K_max, A_max); masks match.  Padded cells hold PAD_INDEX.
    """

    sentence_tokens: np.ndarray
    sentence_mask: np.ndarray
    sentence_counts: np.ndarray
    question_tokens: np.ndarray
    question_mask: np.ndarray
    option_tokens: np.ndarray
    option_mask: np.ndarray
    option_counts: np.ndarray
    gold: np.ndarray
    ids: list[str] = field(default_factory=list)
    subsets: list[str | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def examples(self) -> list[EncodedExample]:
        """Rebuild exact-length examples from the padded arrays and masks."""
        out = []
        for b in range(len(self.ids)):
            sentences = [
                self.sentence_tokens[b, n, self.sentence_mask[b, n]].tolist()
                for n in range(int(self.sentence_counts[b]))
            ]
            question = self.question_tokens[b, self.question_mask[b]].tolist()
            options = [
                self.option_tokens[b, k, self.option_mask[b, k]].tolist()
                for k in range(int(self.option_counts[b]))
            ]
            gold = int(self.gold[b])
            out.append(
                EncodedExample(
                    id=self.ids[b],
                    sentences=sentences,
                    question=question,
                    options=options,
                    gold=gold if gold >= 0 else None,
                    subset=self.subsets[b],
                )
            )
        return out


def _pad_2d(rows: list[list[int]], width: int) -> tuple[np.ndarray, np.ndarray]:
    tokens = np.full((len(rows), width), PAD_INDEX, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for r, seq in enumerate(rows):
        tokens[r, : len(seq)] = seq
        mask[r, : len(seq)] = True
    return tokens, mask


def make_batch(examples: Sequence[EncodedExample]) -> Batch:
    """Pad a group of examples to their per-batch maxima."""
    if not examples:
        raise DataError("cannot build an empty batch")
    n_max = max(len(ex.sentences) for ex in examples)
    s_max = max(max(len(s) for s in ex.sentences) for ex in examples)
    q_max = max(max(len(ex.question), 1) for ex in examples)
    k_max = max(len(ex.options) for ex in examples)
    a_max = max(max((len(o) for o in ex.options), default=0) for ex in examples)
    a_max = max(a_max, 1)
    B = len(examples)

    sent_tokens = np.full((B, n_max, s_max), PAD_INDEX, dtype=np.int64)
    sent_mask = np.zeros((B, n_max, s_max), dtype=bool)
    opt_tokens = np.full((B, k_max, a_max), PAD_INDEX, dtype=np.int64)
    opt_mask = np.zeros((B, k_max, a_max), dtype=bool)
    q_rows = []
    for b, ex in enumerate(examples):
        for n, sent in enumerate(ex.sentences):
            sent_tokens[b, n, : len(sent)] = sent
            sent_mask[b, n, : len(sent)] = True
        for k, opt in enumerate(ex.options):
            opt_tokens[b, k, : len(opt)] = opt
            opt_mask[b, k, : len(opt)] = True
        q_rows.append(ex.question)
    q_tokens, q_mask = _pad_2d(q_rows, q_max)

    return Batch(
        sentence_tokens=sent_tokens,
        sentence_mask=sent_mask,
        sentence_counts=np.array([len(ex.sentences) for ex in examples]),
        question_tokens=q_tokens,
        question_mask=q_mask,
        option_tokens=opt_tokens,
        option_mask=opt_mask,
        option_counts=np.array([len(ex.options) for ex in examples]),
        gold=np.array([-1 if ex.gold is None else ex.gold for ex in examples]),
        ids=[ex.id for ex in examples],
        subsets=[ex.subset for ex in examples],
    )


def make_batches(
    examples: Sequence[EncodedExample], batch_size: int, seed: int, epoch: int = 0
) -> list[Batch]:
    """Shuffle with the seeded stream and pad each chunk to its maxima."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = substream(seed, "shuffle", epoch).permutation(len(examples))
    shuffled = [examples[i] for i in order]
    return [
        make_batch(shuffled[i : i + batch_size])
        for i in range(0, len(shuffled), batch_size)
    ]

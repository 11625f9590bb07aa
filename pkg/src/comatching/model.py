"""The co-matching architecture.

A candidate answer is scored by matching the passage simultaneously against
the question and against that candidate: each passage position attends over
the other sequence's encoder states, the aligned summaries are compared to
the passage states (difference and product features through a shared linear
map with ReLU), and the per-position matching states are aggregated by a
sentence-level BiLSTM + max-pool followed by a document-level BiLSTM +
max-pool.  A dot product with a scoring vector yields one logit per
candidate, trained with a softmax cross-entropy over the candidates.

Two reduced variants are provided for ablation: matching against the
concatenated question+answer with a single matching branch, and a flat
(sentence-structure-free) aggregation over the whole passage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .data import EncodedExample
from .errors import ConfigError, ShapeError
from .lstm import BiLstmWeights, bilstm_encode
from .rng import substream
from .tensor import (
    Tensor,
    add_bias_broadcast,
    concat_cols,
    concat_rows,
    elementwise_mul,
    elementwise_sub,
    gather_cols,
    log_sum_exp,
    matmul,
    relu,
    row_max_pool,
    slice_rows,
    softmax_columns,
    transpose,
)

VARIANTS = ("full", "single-match", "flat")

QUESTION_TYPE_KEYWORDS = (
    "why", "what", "when", "where", "who", "how", "true", "not", "title",
)


@dataclass
class ModelParams:
    """All learnable weights; shapes are a pure function of (d, l, variant)."""

    d: int
    l: int
    variant: str
    encoder: BiLstmWeights        # d -> l, shared by passage, question, answers
    w_g: Tensor                   # (l, l)   attention projection
    b_g: Tensor                   # (l, 1)   attention bias, broadcast over positions
    w_m: Tensor                   # (l, 2l)  matching map, shared by both branches
    b_m: Tensor                   # (l, 1)
    sentence: BiLstmWeights       # 2l -> l (full/flat) or l -> l (single-match)
    document: BiLstmWeights       # l -> l
    w_score: Tensor               # (l, 1)   candidate scoring vector
    embeddings: Tensor | None = field(default=None, repr=False)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """Stable (name, tensor) list of the learnable weights."""
        return [
            *self.encoder.named("encoder"),
            ("attention.w_g", self.w_g),
            ("attention.b_g", self.b_g),
            ("match.w_m", self.w_m),
            ("match.b_m", self.b_m),
            *self.sentence.named("sentence"),
            *self.document.named("document"),
            ("score.w", self.w_score),
        ]

    def parameter_count(self) -> int:
        return sum(t.data.size for _, t in self.named_tensors())

    def copy(self) -> "ModelParams":
        fresh = init_params(self.d, self.l, seed=0, variant=self.variant)
        for (_, dst), (_, src) in zip(fresh.named_tensors(), self.named_tensors()):
            dst.data = src.data.copy()
        if self.embeddings is not None:
            fresh.embeddings = self.embeddings.copy()
        return fresh


def sentence_input_width(l: int, variant: str) -> int:
    """Width of the matching states fed to the sentence-level encoder."""
    return l if variant == "single-match" else 2 * l


def init_params(d: int, l: int, seed: int, variant: str = "full") -> ModelParams:
    """Seeded uniform[-0.05, 0.05] weights, zero biases, forget bias 1.0."""
    if l % 2 != 0 or l < 2:
        raise ConfigError(f"hidden size l must be even and >= 2, got {l}")
    if d < 1:
        raise ConfigError(f"embedding dimensionality must be >= 1, got {d}")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    rng = substream(seed, "init")
    scale = 0.05
    return ModelParams(
        d=d,
        l=l,
        variant=variant,
        encoder=BiLstmWeights.create(d, l, rng, scale),
        w_g=Tensor(rng.uniform(-scale, scale, size=(l, l)), requires_grad=True),
        b_g=Tensor(np.zeros((l, 1)), requires_grad=True),
        w_m=Tensor(rng.uniform(-scale, scale, size=(l, 2 * l)), requires_grad=True),
        b_m=Tensor(np.zeros((l, 1)), requires_grad=True),
        sentence=BiLstmWeights.create(sentence_input_width(l, variant), l, rng, scale),
        document=BiLstmWeights.create(l, l, rng, scale),
        w_score=Tensor(rng.uniform(-scale, scale, size=(l, 1)), requires_grad=True),
    )


@dataclass
class CoMatchResult:
    """Matching state of one sentence against question and candidate."""

    c: Tensor                     # (2l, P) stacked matching states
    m_q: Tensor                   # (l, P)
    m_a: Tensor                   # (l, P)
    g_q: Tensor | None = None     # (Q, P) attention over question states
    g_a: Tensor | None = None     # (A, P) attention over answer states
    hbar_q: Tensor | None = None  # (l, P) aligned question summary
    hbar_a: Tensor | None = None  # (l, P) aligned answer summary


def embed_tokens(emb: Tensor, indices: list[int]) -> Tensor:
    """Look token columns up in the (d, |V|) embedding tensor."""
    return gather_cols(emb, indices)


def encode_sequence(x: Tensor, params: ModelParams) -> Tensor:
    """Shared bidirectional encoding of an embedded (d, T) sequence."""
    return bilstm_encode(x, params.encoder.fwd, params.encoder.bwd)


def attention_match(
    h_p: Tensor,
    h_other: Tensor,
    params: ModelParams,
    mask_other: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Attend each passage position over the other sequence's states.

    Returns (G, H_bar): G is (S, P) with each column a distribution over the
    other sequence's S positions, and H_bar = H_other @ G is the per-position
    expected summary of the other sequence.
    """
    if h_p.rows != params.l or h_other.rows != params.l:
        raise ShapeError(
            f"attention expects {params.l}-row states, got {h_p.shape} and {h_other.shape}"
        )
    projected = add_bias_broadcast(matmul(params.w_g, h_other), params.b_g)
    logits = matmul(transpose(projected), h_p)  # (S, P)
    mask = None
    if mask_other is not None:
        mask_other = np.asarray(mask_other, dtype=bool)
        if mask_other.shape != (h_other.cols,):
            raise ShapeError(
                f"attention mask of shape {mask_other.shape} does not cover {h_other.cols} states"
            )
        mask = np.repeat(mask_other[:, None], h_p.cols, axis=1)
    g = softmax_columns(logits, mask)
    h_bar = matmul(h_other, g)
    return g, h_bar


def _match_branch(h_p: Tensor, h_bar: Tensor, params: ModelParams) -> Tensor:
    """ReLU(W_m [h_bar - h_p ; h_bar * h_p] + b_m), one matching branch."""
    feats = concat_rows(elementwise_sub(h_bar, h_p), elementwise_mul(h_bar, h_p))
    return relu(add_bias_broadcast(matmul(params.w_m, feats), params.b_m))


def co_match(
    h_p: Tensor,
    hbar_q: Tensor,
    hbar_a: Tensor,
    params: ModelParams,
    g_q: Tensor | None = None,
    g_a: Tensor | None = None,
) -> CoMatchResult:
    """Match passage states with both aligned summaries through the shared map."""
    m_q = _match_branch(h_p, hbar_q, params)
    m_a = _match_branch(h_p, hbar_a, params)
    return CoMatchResult(
        c=concat_rows(m_q, m_a),
        m_q=m_q,
        m_a=m_a,
        g_q=g_q,
        g_a=g_a,
        hbar_q=hbar_q,
        hbar_a=hbar_a,
    )


def sentence_aggregate(
    c: Tensor, params: ModelParams, mask: np.ndarray | None = None
) -> Tensor:
    """Sentence-level BiLSTM over matching states, then row-wise max pool.

    An optional column mask marks the real positions; masked columns are cut
    before encoding so a padded run is bit-identical to a truncated one.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (c.cols,):
            raise ShapeError(f"mask of shape {mask.shape} does not fit {c.shape}")
        keep = np.flatnonzero(mask)
        if keep.size != c.cols:
            c = gather_cols(c, keep)
    states = bilstm_encode(c, params.sentence.fwd, params.sentence.bwd)
    return row_max_pool(states)


def document_aggregate(sentence_vectors: list[Tensor], params: ModelParams) -> Tensor:
    """Document-level BiLSTM over the (l, N) stack of sentence vectors."""
    h_s = concat_cols(sentence_vectors)
    states = bilstm_encode(h_s, params.document.fwd, params.document.bwd)
    return row_max_pool(states)


def _encode_passage(ex: EncodedExample, emb: Tensor, params: ModelParams) -> list[Tensor]:
    return [
        encode_sequence(embed_tokens(emb, sent), params) for sent in ex.sentences
    ]


def _stack_scores(per_candidate: list[Tensor]) -> Tensor:
    return reduce(concat_rows, per_candidate)  # (K, 1)


def score_candidates(
    ex: EncodedExample,
    emb: Tensor,
    params: ModelParams,
    collect: list[list[CoMatchResult]] | None = None,
) -> Tensor:
    """Score every candidate of an example with the full co-matching model.

    Passage and question encodings (and the question-side matching branch)
    are computed once and shared across candidates.  Returns a (K, 1) score
    tensor.  When ``collect`` is given, it receives, per candidate, the
    per-sentence CoMatchResult records.
    """
    if len(ex.options) < 1:
        raise ShapeError(f"example {ex.id} has no candidate answers")
    h_p = _encode_passage(ex, emb, params)
    h_q = encode_sequence(embed_tokens(emb, ex.question), params)
    q_side = []
    for h_pn in h_p:
        g_q, hbar_q = attention_match(h_pn, h_q, params)
        q_side.append((g_q, hbar_q, _match_branch(h_pn, hbar_q, params)))

    scores = []
    for k, option in enumerate(ex.options):
        h_a = encode_sequence(embed_tokens(emb, option), params)
        records: list[CoMatchResult] = []
        sent_vectors = []
        for h_pn, (g_q, hbar_q, m_q) in zip(h_p, q_side):
            g_a, hbar_a = attention_match(h_pn, h_a, params)
            m_a = _match_branch(h_pn, hbar_a, params)
            c = concat_rows(m_q, m_a)
            sent_vectors.append(sentence_aggregate(c, params))
            if collect is not None:
                records.append(
                    CoMatchResult(c=c, m_q=m_q, m_a=m_a, g_q=g_q, g_a=g_a,
                                  hbar_q=hbar_q, hbar_a=hbar_a)
                )
        h_t = document_aggregate(sent_vectors, params)
        scores.append(matmul(transpose(params.w_score), h_t))
        if collect is not None:
            collect.append(records)
    return _stack_scores(scores)


def single_match_forward(ex: EncodedExample, emb: Tensor, params: ModelParams) -> Tensor:
    """Ablation A: match against the token-concatenation question+answer.

    Only the answer-side matching branch is kept, so the per-position state
    is l wide and the sentence encoder takes width l.
    """
    if params.variant != "single-match":
        raise ConfigError(f"params were built for variant {params.variant!r}")
    h_p = _encode_passage(ex, emb, params)
    scores = []
    for option in ex.options:
        h_qa = encode_sequence(embed_tokens(emb, list(ex.question) + list(option)), params)
        sent_vectors = []
        for h_pn in h_p:
            _, hbar = attention_match(h_pn, h_qa, params)
            m_a = _match_branch(h_pn, hbar, params)
            sent_vectors.append(sentence_aggregate(m_a, params))
        h_t = document_aggregate(sent_vectors, params)
        scores.append(matmul(transpose(params.w_score), h_t))
    return _stack_scores(scores)


def flat_aggregate_forward(ex: EncodedExample, emb: Tensor, params: ModelParams) -> Tensor:
    """Ablation B: no sentence hierarchy.

    The passage is one plain sequence; its matching states run through two
    stacked BiLSTMs (2l -> l, then l -> l) and a single max pool.  The two
    layers reuse the sentence/document weight shapes, which keeps the
    parameter count identical to the hierarchical model.
    """
    if params.variant != "flat":
        raise ConfigError(f"params were built for variant {params.variant!r}")
    flat_tokens = [tok for sent in ex.sentences for tok in sent]
    h_p = encode_sequence(embed_tokens(emb, flat_tokens), params)
    h_q = encode_sequence(embed_tokens(emb, ex.question), params)
    _, hbar_q = attention_match(h_p, h_q, params)
    m_q = _match_branch(h_p, hbar_q, params)
    scores = []
    for option in ex.options:
        h_a = encode_sequence(embed_tokens(emb, option), params)
        _, hbar_a = attention_match(h_p, h_a, params)
        m_a = _match_branch(h_p, hbar_a, params)
        c = concat_rows(m_q, m_a)
        layer1 = bilstm_encode(c, params.sentence.fwd, params.sentence.bwd)
        layer2 = bilstm_encode(layer1, params.document.fwd, params.document.bwd)
        h_t = row_max_pool(layer2)
        scores.append(matmul(transpose(params.w_score), h_t))
    return _stack_scores(scores)


def forward_scores(ex: EncodedExample, emb: Tensor, params: ModelParams) -> Tensor:
    """Dispatch to the scoring path matching ``params.variant``."""
    if params.variant == "full":
        return score_candidates(ex, emb, params)
    if params.variant == "single-match":
        return single_match_forward(ex, emb, params)
    return flat_aggregate_forward(ex, emb, params)


def candidate_loss(scores: Tensor, gold: int) -> Tensor:
    """Cross-entropy of the gold candidate under a softmax over the scores."""
    k = scores.rows
    if scores.cols != 1:
        raise ShapeError(f"scores must be a (K, 1) column, got {scores.shape}")
    if not (0 <= gold < k):
        raise ShapeError(f"gold index {gold} out of range for {k} candidates")
    return elementwise_sub(log_sum_exp(scores), slice_rows(scores, gold, gold + 1))


def predict(scores: Tensor | np.ndarray) -> int:
    """Index of the maximum score; ties go to the lowest index."""
    arr = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    if arr.size == 0:
        raise ShapeError("cannot predict from an empty score vector")
    return int(arr.reshape(-1).argmax())


def bucket_by_question_type(question_tokens) -> frozenset[str]:
    """Keyword tags of a tokenized question; 'other' when nothing matches."""
    toks = set(question_tokens)
    tags = frozenset(k for k in QUESTION_TYPE_KEYWORDS if k in toks)
    return tags if tags else frozenset(("other",))

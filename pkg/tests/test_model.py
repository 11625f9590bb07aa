"""Model tests: attention, co-matching, aggregation, scoring, loss, ablations."""

import numpy as np
import pytest

from comatching.data import EncodedExample
from comatching.errors import ConfigError, ShapeError
from comatching.gradcheck import tiny_instance
from comatching.model import (
    CoMatchResult,
    ModelParams,
    attention_match,
    bucket_by_question_type,
    candidate_loss,
    co_match,
    document_aggregate,
    embed_tokens,
    encode_sequence,
    flat_aggregate_forward,
    init_params,
    predict,
    score_candidates,
    sentence_aggregate,
    single_match_forward,
)
from comatching.rng import substream
from comatching.tensor import Tape, Tensor


def lively_params(seed, d=3, l=4, variant="full"):
    """Params with healthy activations (production init is nearly flat)."""
    params = init_params(d, l, seed, variant)
    rng = substream(seed, "test")
    for _, t in params.named_tensors():
        t.data = rng.uniform(-0.8, 0.8, size=t.data.shape)
    params.b_m.data = rng.uniform(0.1, 0.6, size=params.b_m.data.shape)
    return params


def naive_attention(h_p, h_other, w_g, b_g):
    """Triple-loop reference for the attention stage."""
    l, P = h_p.shape
    S = h_other.shape[1]
    proj = np.zeros((l, S))
    for s in range(S):
        for i in range(l):
            proj[i, s] = sum(w_g[i, k] * h_other[k, s] for k in range(l)) + b_g[i, 0]
    logits = np.zeros((S, P))
    for s in range(S):
        for p in range(P):
            logits[s, p] = sum(proj[i, s] * h_p[i, p] for i in range(l))
    g = np.zeros((S, P))
    for p in range(P):
        e = np.exp(logits[:, p] - logits[:, p].max())
        g[:, p] = e / e.sum()
    h_bar = np.zeros((l, P))
    for i in range(l):
        for p in range(P):
            h_bar[i, p] = sum(h_other[i, s] * g[s, p] for s in range(S))
    return g, h_bar


class TestInitParams:
    def test_same_seed_bit_identical(self):
        p1, p2 = init_params(4, 4, seed=3), init_params(4, 4, seed=3)
        for (n1, t1), (n2, t2) in zip(p1.named_tensors(), p2.named_tensors()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_parameter_count_matches_hand_shape_sum(self):
        # d=4, l=4: per LSTM direction with input m and hidden h=2:
        # 8*m + 8*2 + 8 entries; encoder m=4, sentence m=8, document m=4.
        def bilstm(m):
            return 2 * (8 * m + 16 + 8)

        expected = bilstm(4) + (16 + 4) + (32 + 4) + bilstm(8) + bilstm(4) + 4
        assert init_params(4, 4, seed=0).parameter_count() == expected == 460

    def test_single_match_has_fewer_parameters(self):
        full = init_params(4, 4, seed=0).parameter_count()
        single = init_params(4, 4, seed=0, variant="single-match").parameter_count()
        assert single < full

    def test_flat_variant_parameter_parity(self):
        full = init_params(6, 6, seed=0).parameter_count()
        flat = init_params(6, 6, seed=0, variant="flat").parameter_count()
        assert flat == full

    def test_odd_hidden_size_rejected(self):
        with pytest.raises(ConfigError):
            init_params(4, 5, seed=0)

    def test_grads_absent_after_init(self):
        assert all(t.grad is None for _, t in init_params(4, 4, 0).named_tensors())

    def test_forget_bias_one_rest_zero(self):
        p = init_params(4, 4, seed=1)
        b = p.encoder.fwd.b.data
        np.testing.assert_array_equal(b[2:4], np.ones((2, 1)))
        np.testing.assert_array_equal(b[:2], np.zeros((2, 1)))


class TestEncodeSequence:
    def test_output_shape(self):
        params = lively_params(1)
        emb = Tensor(substream(1, "test").uniform(-1, 1, (3, 10)))
        for T in (1, 3, 6):
            out = encode_sequence(embed_tokens(emb, list(range(T))), params)
            assert out.shape == (4, T)

    def test_recomputation_is_bit_identical(self):
        params = lively_params(2)
        emb = Tensor(substream(2, "test").uniform(-1, 1, (3, 10)))
        x = embed_tokens(emb, [1, 2, 3])
        a = encode_sequence(x, params).data
        b = encode_sequence(embed_tokens(emb, [1, 2, 3]), params).data
        np.testing.assert_array_equal(a, b)

    def test_embedding_gradient_only_when_trainable(self):
        ex, emb, params = tiny_instance(0)
        frozen = Tensor(emb.data.copy(), requires_grad=False)
        with Tape() as tape:
            tape.backward(candidate_loss(score_candidates(ex, frozen, params), ex.gold))
        assert frozen.grad is None
        with Tape() as tape:
            tape.backward(candidate_loss(score_candidates(ex, emb, params), ex.gold))
        assert emb.grad is not None


class TestAttentionMatch:
    def test_hand_instance(self):
        # l=1: unit projection and zero bias; passage states [0, 1] attend
        # over question states [1, 2]
        params = init_params(3, 4, seed=0)
        params.w_g = Tensor(np.array([[1.0]]), requires_grad=True)
        params.b_g = Tensor(np.array([[0.0]]), requires_grad=True)
        params.l = 1
        g, h_bar = attention_match(Tensor([[0.0, 1.0]]), Tensor([[1.0, 2.0]]), params)
        np.testing.assert_allclose(g.data[:, 0], [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(g.data[:, 1], [0.26894142, 0.73105858], atol=1e-8)
        np.testing.assert_allclose(h_bar.data[0], [1.5, 1.73105858], atol=1e-8)

    def test_matches_naive_reference(self):
        for seed in range(30):
            rng = substream(seed, "test")
            l = int(rng.integers(1, 5))
            p_len = int(rng.integers(1, 7))
            s_len = int(rng.integers(1, 7))
            w_g = rng.uniform(-1, 1, (l, l))
            b_g = rng.uniform(-1, 1, (l, 1))
            params = init_params(3, 4, seed)
            params.w_g = Tensor(w_g, requires_grad=True)
            params.b_g = Tensor(b_g, requires_grad=True)
            params.l = l
            h_p = rng.uniform(-1, 1, (l, p_len))
            h_o = rng.uniform(-1, 1, (l, s_len))
            g, h_bar = attention_match(Tensor(h_p), Tensor(h_o), params)
            g_ref, h_bar_ref = naive_attention(h_p, h_o, w_g, b_g)
            np.testing.assert_allclose(g.data, g_ref, atol=1e-10)
            np.testing.assert_allclose(h_bar.data, h_bar_ref, atol=1e-10)
            np.testing.assert_allclose(g.data.sum(axis=0), 1.0, atol=1e-12)

    def test_zero_weights_give_uniform_attention(self):
        params = init_params(3, 4, seed=0)
        params.w_g = Tensor(np.zeros((4, 4)), requires_grad=True)
        params.b_g = Tensor(np.zeros((4, 1)), requires_grad=True)
        rng = substream(5, "test")
        h_p = Tensor(rng.uniform(-1, 1, (4, 3)))
        h_o = Tensor(rng.uniform(-1, 1, (4, 5)))
        g, h_bar = attention_match(h_p, h_o, params)
        np.testing.assert_allclose(g.data, np.full((5, 3), 0.2), atol=1e-12)
        np.testing.assert_allclose(
            h_bar.data, np.repeat(h_o.data.mean(axis=1, keepdims=True), 3, axis=1),
            atol=1e-12,
        )

    def test_bias_shift_cannot_change_attention(self):
        """The bias adds a per-column constant to the logits, which the
        column softmax cancels: attention is invariant to it (up to
        rounding), so its gradient is mathematically zero."""
        ex, emb, params = tiny_instance(0)
        base = candidate_loss(score_candidates(ex, emb, params), ex.gold).item()
        for shift in (0.5, -2.0, 10.0):
            params.b_g.data += shift
            moved = candidate_loss(score_candidates(ex, emb, params), ex.gold).item()
            params.b_g.data -= shift
            assert abs(moved - base) < 1e-9


class TestCoMatch:
    def test_self_match_zeroes_difference_branch(self):
        params = lively_params(3)
        rng = substream(3, "test")
        h_p = Tensor(rng.uniform(-1, 1, (4, 5)))
        result = co_match(h_p, h_p, h_p, params)
        # difference features vanish, so M = relu(W_m [0; h_p^2] + b_m)
        feats = np.vstack([np.zeros((4, 5)), h_p.data**2])
        expected = np.maximum(params.w_m.data @ feats + params.b_m.data, 0.0)
        np.testing.assert_allclose(result.m_q.data, expected, atol=1e-12)
        np.testing.assert_allclose(result.m_a.data, expected, atol=1e-12)

    def test_zero_map_gives_zero_state(self):
        params = lively_params(4)
        params.w_m = Tensor(np.zeros((4, 8)), requires_grad=True)
        params.b_m = Tensor(np.zeros((4, 1)), requires_grad=True)
        rng = substream(4, "test")
        h = [Tensor(rng.uniform(-1, 1, (4, 3))) for _ in range(3)]
        result = co_match(*h, params)
        np.testing.assert_array_equal(result.c.data, np.zeros((8, 3)))

    def test_state_shape(self):
        params = lively_params(5, d=3, l=6)
        rng = substream(5, "test")
        h = [Tensor(rng.uniform(-1, 1, (6, 9))) for _ in range(3)]
        assert co_match(*h, params).c.shape == (12, 9)


class TestAggregation:
    def test_sentence_single_token_pool_is_identity(self):
        params = lively_params(6)
        c = Tensor(substream(6, "test").uniform(-1, 1, (8, 1)))
        from comatching.lstm import bilstm_encode

        states = bilstm_encode(c, params.sentence.fwd, params.sentence.bwd)
        np.testing.assert_array_equal(sentence_aggregate(c, params).data, states.data)

    def test_masked_equals_truncated_bitwise(self):
        params = lively_params(7)
        rng = substream(7, "test")
        c = rng.uniform(-1, 1, (8, 4))
        padded = np.hstack([c, rng.uniform(-1, 1, (8, 2))])
        mask = np.array([True] * 4 + [False] * 2)
        got = sentence_aggregate(Tensor(padded), params, mask=mask).data
        want = sentence_aggregate(Tensor(c), params).data
        np.testing.assert_array_equal(got, want)

    def test_output_length(self):
        params = lively_params(8)
        c = Tensor(substream(8, "test").uniform(-1, 1, (8, 5)))
        assert sentence_aggregate(c, params).shape == (4, 1)

    def test_document_single_sentence(self):
        params = lively_params(9)
        h_s = [Tensor(substream(9, "test").uniform(-1, 1, (4, 1)))]
        assert document_aggregate(h_s, params).shape == (4, 1)

    def test_sentence_order_matters(self):
        params = lively_params(10)
        rng = substream(10, "test")
        h_s = [Tensor(rng.uniform(-1, 1, (4, 1))) for _ in range(3)]
        forward = document_aggregate(h_s, params).data
        swapped = document_aggregate([h_s[1], h_s[0], h_s[2]], params).data
        assert not np.array_equal(forward, swapped)


class TestScoring:
    def test_identical_options_get_identical_scores(self):
        ex, emb, params = tiny_instance(1)
        ex.options = [list(ex.options[0]), list(ex.options[0])]
        scores = score_candidates(ex, emb, params).data
        assert scores[0, 0] == scores[1, 0]

    def test_duplicated_gold_scores_equal(self):
        ex, emb, params = tiny_instance(2)
        ex.options = [ex.options[0], ex.options[1], list(ex.options[ex.gold])]
        scores = score_candidates(ex, emb, params).data
        assert scores[ex.gold, 0] == scores[2, 0]

    def test_changing_option_changes_its_score(self):
        ex, emb, params = tiny_instance(3)
        base = score_candidates(ex, emb, params).data.copy()
        ex.options[1] = [(t + 1) % 12 for t in ex.options[1]]
        moved = score_candidates(ex, emb, params).data
        assert base[1, 0] != moved[1, 0]

    def test_no_options_rejected(self):
        ex, emb, params = tiny_instance(4)
        ex.options = []
        with pytest.raises(ShapeError):
            score_candidates(ex, emb, params)

    def test_collect_returns_per_sentence_records(self):
        ex, emb, params = tiny_instance(5)
        collected = []
        score_candidates(ex, emb, params, collect=collected)
        assert len(collected) == len(ex.options)
        for records in collected:
            assert len(records) == len(ex.sentences)
            for n, rec in enumerate(records):
                assert isinstance(rec, CoMatchResult)
                assert rec.g_q.shape == (len(ex.question), len(ex.sentences[n]))


class TestCandidateLoss:
    def test_uniform_scores_give_log_k(self):
        loss = candidate_loss(Tensor(np.zeros((4, 1))), gold=1)
        assert abs(loss.item() - np.log(4.0)) < 1e-12

    def test_saturation_drives_loss_to_zero(self):
        scores = Tensor(np.array([[50.0], [0.0], [0.0], [0.0]]))
        assert candidate_loss(scores, gold=0).item() < 1e-20

    def test_gradient_is_softmax_minus_onehot(self):
        rng = substream(30, "test")
        raw = rng.uniform(-2, 2, (5, 1))
        scores = Tensor(raw, requires_grad=True)
        with Tape() as tape:
            tape.backward(candidate_loss(scores, gold=2))
        soft = np.exp(raw - raw.max())
        soft /= soft.sum()
        soft[2, 0] -= 1.0
        np.testing.assert_allclose(scores.grad, soft, atol=1e-10)

    def test_loss_nonnegative(self):
        rng = substream(31, "test")
        for _ in range(50):
            scores = Tensor(rng.uniform(-5, 5, (4, 1)))
            assert candidate_loss(scores, int(rng.integers(0, 4))).item() >= 0.0

    def test_gold_out_of_range(self):
        with pytest.raises(ShapeError):
            candidate_loss(Tensor(np.zeros((3, 1))), gold=3)


class TestPredict:
    def test_tie_takes_lowest_index(self):
        assert predict(np.array([0.1, 0.9, 0.9, 0.2])) == 1

    def test_single_candidate(self):
        assert predict(np.array([0.3])) == 0

    def test_strictly_increasing(self):
        assert predict(np.array([0.1, 0.2, 0.3, 0.4])) == 3


class TestAblations:
    def _example(self, seed):
        rng = substream(seed, "test")
        seq = lambda n: [int(i) for i in rng.integers(0, 12, size=n)]
        return (
            EncodedExample(
                id="a",
                sentences=[seq(3), seq(2)],
                question=seq(3),
                options=[seq(2), seq(3)],
                gold=0,
            ),
            Tensor(rng.uniform(-1, 1, (3, 12))),
        )

    def test_single_match_scores_shape(self):
        ex, emb = self._example(11)
        params = lively_params(11, variant="single-match")
        assert single_match_forward(ex, emb, params).shape == (2, 1)

    def test_single_match_empty_option_degenerates_to_question(self):
        """With an empty answer the matched sequence is the question alone;
        verify against a hand-assembled pipeline using just the question."""
        from comatching.lstm import bilstm_encode
        from comatching.model import _match_branch
        from comatching.tensor import matmul, transpose

        ex, emb = self._example(12)
        ex.options = [[], ex.options[1]]
        params = lively_params(12, variant="single-match")
        scores = single_match_forward(ex, emb, params)

        h_qa = encode_sequence(embed_tokens(emb, ex.question), params)
        sent_vecs = []
        for sent in ex.sentences:
            h_p = encode_sequence(embed_tokens(emb, sent), params)
            _, hbar = attention_match(h_p, h_qa, params)
            sent_vecs.append(sentence_aggregate(_match_branch(h_p, hbar, params), params))
        h_t = document_aggregate(sent_vecs, params)
        want = matmul(transpose(params.w_score), h_t).item()
        assert scores.data[0, 0] == want

    def test_flat_scores_shape(self):
        ex, emb = self._example(13)
        params = lively_params(13, variant="flat")
        assert flat_aggregate_forward(ex, emb, params).shape == (2, 1)

    def test_variant_mismatch_rejected(self):
        ex, emb = self._example(14)
        params = lively_params(14, variant="full")
        with pytest.raises(ConfigError):
            single_match_forward(ex, emb, params)
        with pytest.raises(ConfigError):
            flat_aggregate_forward(ex, emb, params)


class TestQuestionTypeBuckets:
    def test_statement_justification(self):
        toks = "which statement of the following is true ?".split()
        assert bucket_by_question_type(toks) == frozenset({"true"})

    def test_how_question(self):
        toks = "how did the author get the tower ?".split()
        assert bucket_by_question_type(toks) == frozenset({"how"})

    def test_negated_justification_carries_both_tags(self):
        toks = "which of the following is not true".split()
        assert bucket_by_question_type(toks) == frozenset({"true", "not"})

    def test_no_keyword_is_other(self):
        assert bucket_by_question_type(["pick", "an", "option"]) == frozenset({"other"})

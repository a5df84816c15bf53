"""Pointer decoder: span selection, step formulas, loss, generation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import jere.ndcore as nd
from jere.data import Instance, Sentence, build_vocab, make_tuple
from jere.encoder import encode_sentence, tiny_config
from jere.pointer_decoder import (
    PNDecModel,
    PointerStepOutput,
    ptr_loss,
    select_spans,
    select_spans_exhaustive,
)
from oracles import two_pass_spans


def dirichlet_quads(rng, n):
    return [rng.dirichlet(np.ones(n)) for _ in range(4)]


@pytest.fixture(scope="module")
def toy_instance():
    tokens = ("aa", "bb", "cc", "dd")
    tup = make_tuple(tokens, (0, 0), (2, 3), "r0")
    return Instance(Sentence(tokens), frozenset([tup]))


@pytest.fixture(scope="module")
def toy_vocab(toy_instance):
    return build_vocab([toy_instance])


def make_model(vocab, **overrides):
    cfg = tiny_config(**overrides)
    return PNDecModel(cfg, vocab, rng=np.random.default_rng(0), dtype=np.float64)


class TestSelectSpans:
    def test_two_tokens_peaked(self):
        one = np.array([0.9, 0.1])
        two = np.array([0.1, 0.9])
        assert select_spans(one, one, two, two) == ((0, 0), (1, 1))

    def test_one_hot_news_fixture_indexes(self):
        n = 12
        s1 = np.eye(n)[9]
        e1 = np.eye(n)[9]
        s2 = np.eye(n)[4]
        e2 = np.eye(n)[4]
        assert select_spans(s1, e1, s2, e2) == ((9, 9), (4, 4))

    def test_short_sentence_rejected(self):
        one = np.array([1.0])
        with pytest.raises(ValueError, match="no disjoint span pair"):
            select_spans(one, one, one, one)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 10_000_000))
    def test_matches_exhaustive_two_pass_oracle(self, n, seed):
        rng = np.random.default_rng(seed)
        s1, e1, s2, e2 = dirichlet_quads(rng, n)
        assert select_spans(s1, e1, s2, e2) == two_pass_spans(s1, e1, s2, e2)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 10_000_000))
    def test_output_always_valid_and_disjoint(self, n, seed):
        rng = np.random.default_rng(seed)
        (b1, f1), (b2, f2) = select_spans(*dirichlet_quads(rng, n))
        assert 0 <= b1 <= f1 < n and 0 <= b2 <= f2 < n
        assert f2 < b1 or b2 > f1

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 10_000_000))
    def test_exhaustive_variant_never_worse(self, n, seed):
        rng = np.random.default_rng(seed)
        s1, e1, s2, e2 = dirichlet_quads(rng, n)

        def product(pair):
            (b1, f1), (b2, f2) = pair
            return s1[b1] * e1[f1] * s2[b2] * e2[f2]

        greedy = product(select_spans(s1, e1, s2, e2))
        best = product(select_spans_exhaustive(s1, e1, s2, e2))
        assert best >= greedy - 1e-15


class TestPointEntities:
    def test_single_position_distributions_are_one(self, toy_vocab):
        model = make_model(toy_vocab)
        enc = encode_sentence(("aa",), model.enc, toy_vocab, model.cfg)
        step = model.point_entities(nd.Tensor(np.zeros(model.cfg.d_h)), enc)
        for dist in (step.s1, step.e1, step.s2, step.e2):
            np.testing.assert_allclose(dist.data, [1.0])

    def test_zero_span_heads_give_uniform(self, toy_vocab, toy_instance):
        model = make_model(toy_vocab)
        for name in ("s1", "e1", "s2", "e2"):
            model.params[f"pndec.{name}_w"].data[:] = 0.0
            model.params[f"pndec.{name}_b"].data = np.float64(0.0)
        enc = encode_sentence(toy_instance.sentence.tokens, model.enc, toy_vocab,
                              model.cfg)
        step = model.point_entities(nd.Tensor(np.zeros(model.cfg.d_h)), enc)
        for dist in (step.s1, step.e1, step.s2, step.e2):
            np.testing.assert_allclose(dist.data, np.full(4, 0.25), atol=1e-12)

    def test_formulas_match_direct_evaluation(self, toy_vocab, toy_instance):
        model = make_model(toy_vocab)
        rng = np.random.default_rng(3)
        h_dec = rng.normal(size=model.cfg.d_h)
        enc = encode_sentence(toy_instance.sentence.tokens, model.enc, toy_vocab,
                              model.cfg)
        step = model.point_entities(nd.Tensor(h_dec), enc)

        def head(name, hidden):
            w = model.params[f"pndec.{name}_w"].data
            b = model.params[f"pndec.{name}_b"].data
            scores = hidden @ w + b
            z = np.exp(scores - scores.max())
            return z / z.sum()

        np.testing.assert_allclose(step.s1.data, head("s1", step.hk.data), atol=1e-6)
        np.testing.assert_allclose(step.e2.data, head("e2", step.hl.data), atol=1e-6)
        a1 = np.concatenate([step.s1.data @ step.hk.data, step.e1.data @ step.hk.data])
        a2 = np.concatenate([step.s2.data @ step.hl.data, step.e2.data @ step.hl.data])
        np.testing.assert_allclose(step.a1.data, a1, atol=1e-6)
        np.testing.assert_allclose(step.a2.data, a2, atol=1e-6)


class TestClassifyRelation:
    def test_relation_namespace_size(self, toy_instance):
        # 23 inventory relations plus the instance's own "r0" = 24 real ones
        rels = [f"/r/{i}" for i in range(23)]
        vocab = build_vocab([toy_instance], relations=rels)
        model = make_model(vocab)
        assert model.rel_w.data.shape[0] == 25
        enc = encode_sentence(toy_instance.sentence.tokens, model.enc, vocab, model.cfg)
        step = model.point_entities(nd.Tensor(np.zeros(model.cfg.d_h)), enc)
        r, _, _ = model.classify_relation(step, nd.Tensor(np.zeros(model.cfg.d_h)))
        assert r.data.shape == (25,)

    def test_training_uses_gold_embedding_regardless_of_prediction(self, toy_vocab,
                                                                   toy_instance):
        model = make_model(toy_vocab)
        enc = encode_sentence(toy_instance.sentence.tokens, model.enc, toy_vocab,
                              model.cfg)
        step = model.point_entities(nd.Tensor(np.zeros(model.cfg.d_h)), enc)
        gold = 0
        r, z, y = model.classify_relation(step, nd.Tensor(np.zeros(model.cfg.d_h)),
                                          gold_rel=gold)
        np.testing.assert_array_equal(z.data, model.rel_emb.data[gold])
        assert y.data.shape == (model.tuple_dim,)
        np.testing.assert_array_equal(y.data[-model.cfg.d_r:], z.data)

    def test_zero_weights_give_uniform_relations(self, toy_vocab, toy_instance):
        model = make_model(toy_vocab)
        model.rel_w.data[:] = 0.0
        model.rel_b.data[:] = 0.0
        enc = encode_sentence(toy_instance.sentence.tokens, model.enc, toy_vocab,
                              model.cfg)
        step = model.point_entities(nd.Tensor(np.zeros(model.cfg.d_h)), enc)
        r, _, _ = model.classify_relation(step, nd.Tensor(np.zeros(model.cfg.d_h)))
        np.testing.assert_allclose(r.data, np.full(toy_vocab.n_rels,
                                                   1.0 / toy_vocab.n_rels), atol=1e-12)


class TestPtrLoss:
    def test_fixed_half_probabilities_give_five_log2(self, toy_vocab, toy_instance,
                                                     monkeypatch):
        model = make_model(toy_vocab)
        n = len(toy_instance.sentence.tokens)
        half_dist = nd.Tensor(np.full(n, 0.5))

        def fake_point(h_dec, enc):
            z = nd.Tensor(np.zeros(2 * model.cfg.d_p * 2))
            return PointerStepOutput(s1=half_dist, e1=half_dist, s2=half_dist,
                                     e2=half_dist, hk=None, hl=None, a1=z, a2=z)

        def fake_classify(step, h_dec, gold_rel=None):
            r = nd.Tensor(np.full(toy_vocab.n_rels, 0.5))
            z = nd.Tensor(np.zeros(model.cfg.d_r))
            y = nd.Tensor(np.zeros(model.tuple_dim))
            return r, z, y

        monkeypatch.setattr(model, "point_entities", fake_point)
        monkeypatch.setattr(model, "classify_relation", fake_classify)
        loss = float(model.loss([toy_instance], training=False).data)
        # two steps: tuple step = 5*ln2, EOS step = ln2; mean over T=2
        assert abs(loss - (5 * math.log(2) + math.log(2)) / 2) < 1e-9

    def test_eos_only_sequence_has_single_relation_term(self, toy_vocab, monkeypatch):
        model = make_model(toy_vocab)
        inst = Instance(Sentence(("aa", "bb")), frozenset())
        half = nd.Tensor(np.full(toy_vocab.n_rels, 0.25))

        def fake_classify(step, h_dec, gold_rel=None):
            return half, nd.Tensor(np.zeros(model.cfg.d_r)), \
                nd.Tensor(np.zeros(model.tuple_dim))

        monkeypatch.setattr(model, "classify_relation", fake_classify)
        loss = float(model.loss([inst], training=False).data)
        assert abs(loss - math.log(4)) < 1e-9

    def test_gold_span_out_of_range_is_an_error(self, toy_vocab):
        model = make_model(toy_vocab)
        from jere.data import RelationTuple
        bad = RelationTuple((0, 0), (2, 5), "aa", "cc dd", "r0")
        inst = Instance(Sentence(("aa", "bb", "cc")), frozenset([bad]))
        with pytest.raises(ValueError, match="out of range"):
            model.loss([inst], training=False)

    def test_gradient_passes_finite_differences(self, toy_vocab):
        tokens = ("aa", "bb")
        inst = Instance(Sentence(tokens),
                        frozenset([make_tuple(tokens, (0, 0), (1, 1), "r0")]))
        model = PNDecModel(tiny_config(d_w=4, d_c=3, d_f=3, d_h=4, d_p=2, d_r=3,
                                       max_word_len=4),
                           toy_vocab, rng=np.random.default_rng(1), dtype=np.float64)

        def fn(params):
            return ptr_loss(model, [inst], training=True, rng=None)

        assert nd.finite_diff_check(fn, model.params, epsilon=1e-5) < 1e-5


class TestGenerate:
    def force_relation(self, model, rel_id):
        model.rel_w.data[:] = 0.0
        model.rel_b.data[:] = 0.0
        model.rel_b.data[rel_id] = 50.0

    def test_immediate_eos_gives_empty_set(self, toy_vocab, toy_instance):
        model = make_model(toy_vocab)
        self.force_relation(model, toy_vocab.eos_rel_id)
        tuples, diag = model.predict(toy_instance.sentence.tokens)
        assert tuples == frozenset() and not diag.truncated

    def test_cap_reached_flags_truncation_and_dedups(self, toy_vocab, toy_instance):
        model = make_model(toy_vocab)
        self.force_relation(model, 0)
        tuples, diag = model.predict(toy_instance.sentence.tokens, max_tuples=6)
        assert diag.truncated
        assert len(tuples) >= 1
        assert diag.duplicate_tuples == 6 - len(tuples)

    def test_single_token_sentence_yields_empty(self, toy_vocab):
        model = make_model(toy_vocab)
        tuples, diag = model.predict(("aa",))
        assert tuples == frozenset()

    def test_predictions_are_valid_tuples(self, toy_vocab, toy_instance):
        model = make_model(toy_vocab)
        tuples, _ = model.predict(toy_instance.sentence.tokens, max_tuples=4)
        toks = toy_instance.sentence.tokens
        for t in tuples:
            assert 0 <= t.e1_span[0] <= t.e1_span[1] < len(toks)
            assert t.e1_text == " ".join(toks[t.e1_span[0]:t.e1_span[1] + 1])
            assert t.relation in toy_vocab.rel_to_id

"""Synthetic corpus generator: determinism, class purity, mix fidelity."""

import json

import numpy as np
import pytest

from jere.data import EPO, NEO, SEO, classify_overlap, dataset_stats
from jere.synth import SynthConfig, generate_synthetic, stratified_split


def as_json(instances):
    return json.dumps([
        [list(i.sentence.tokens), sorted((t.e1_span, t.e2_span, t.relation)
                                         for t in i.tuples)]
        for i in instances])


class TestGenerator:
    def test_requested_epo_sentences_all_classify_epo(self):
        cfg = SynthConfig(n_neo=0, n_epo=10, n_seo=0)
        for inst in generate_synthetic(cfg, seed=1):
            assert EPO in classify_overlap(inst.tuples)

    def test_same_seed_gives_identical_datasets(self):
        cfg = SynthConfig(n_neo=20, n_epo=10, n_seo=10)
        assert as_json(generate_synthetic(cfg, 5)) == as_json(generate_synthetic(cfg, 5))

    def test_different_seeds_differ(self):
        cfg = SynthConfig(n_neo=20, n_epo=10, n_seo=10)
        assert as_json(generate_synthetic(cfg, 5)) != as_json(generate_synthetic(cfg, 6))

    def test_epo_with_one_relation_is_infeasible(self):
        with pytest.raises(ValueError, match="two relations"):
            SynthConfig(n_neo=0, n_epo=5, n_seo=0, n_relations=1)

    def test_all_classes_present_and_counts_exact(self):
        cfg = SynthConfig(n_neo=12, n_epo=7, n_seo=9)
        stats = dataset_stats(generate_synthetic(cfg, 3))
        assert stats["overlap"] == {NEO: 12, EPO: 7, SEO: 9}
        assert stats["sentences"] == 28

    def test_spans_reconstruct_entity_text(self):
        cfg = SynthConfig(n_neo=10, n_epo=5, n_seo=5, entity_len=(1, 2))
        for inst in generate_synthetic(cfg, 11):
            toks = inst.sentence.tokens
            for t in inst.tuples:
                assert " ".join(toks[t.e1_span[0]:t.e1_span[1] + 1]) == t.e1_text
                assert " ".join(toks[t.e2_span[0]:t.e2_span[1] + 1]) == t.e2_text

    def test_tuple_count_histogram_tracks_requested_mix(self):
        # per-class counts and per-sentence tuple mix shaped like a large
        # news corpus at roughly 1% scale
        mix = (0.655, 0.215, 0.065, 0.047, 0.018)
        cfg = SynthConfig(n_neo=374, n_epo=80, n_seo=108, n_relations=4,
                          tuple_mix=mix)
        instances = generate_synthetic(cfg, 17)
        counts = np.zeros(6)
        for inst in instances:
            counts[min(len(inst.tuples), 5)] += 1
        empirical = counts[1:] / counts[1:].sum()

        # oracle: NEO draws the mix as-is; EPO/SEO redraw until k >= 2,
        # and EPO clamps k at the relation count
        mix_arr = np.asarray(mix)
        cond = mix_arr.copy()
        cond[0] = 0.0
        cond = cond / cond.sum()
        epo = cond.copy()
        epo[cfg.n_relations - 1] += epo[cfg.n_relations:].sum()
        epo[cfg.n_relations:] = 0.0
        total = cfg.n_neo + cfg.n_epo + cfg.n_seo
        expected = (cfg.n_neo * mix_arr + cfg.n_epo * epo + cfg.n_seo * cond) / total
        assert np.abs(empirical - expected).max() < 0.10


class TestStratifiedSplit:
    def test_every_class_lands_in_both_parts(self):
        cfg = SynthConfig(n_neo=60, n_epo=30, n_seo=30)
        train, valid = stratified_split(generate_synthetic(cfg, 2), 0.2)
        assert len(valid) == pytest.approx(24, abs=3)
        for part in (train, valid):
            classes = set()
            for inst in part:
                classes |= classify_overlap(inst.tuples)
            assert classes == {NEO, EPO, SEO}

    def test_zero_fraction_keeps_everything_in_train(self):
        cfg = SynthConfig(n_neo=5, n_epo=0, n_seo=0)
        insts = generate_synthetic(cfg, 0)
        train, valid = stratified_split(insts, 0.0)
        assert train == insts and valid == []

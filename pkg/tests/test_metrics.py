"""Metric oracles: analytic R-squared cases, entropy simulation for
completion perplexity, and synthetic co-occurrence corpora for NPMI."""

import math

import numpy as np
import pytest

from dtam.corpus import BagOfWords, Document
from dtam.errors import DataError, DomainError
from dtam.metrics import (
    EvalReport,
    OracleScorer,
    UniformScorer,
    per_slice_r2_series,
    ppl_dc,
    r2,
    topic_coherence,
)
from dtam.synthgen import ScenarioConfig, sample_timeline


def make_doc(token_ids, doc_id="d0", time_index=0):
    ids = np.asarray(token_ids, dtype=np.int64)
    return Document(doc_id=doc_id, timestamp=1.0, raw_label=0.0,
                    lm_token_ids=ids + 1, tm_token_ids=ids,
                    bow=BagOfWords.from_token_ids(ids), time_index=time_index)


class TestR2:
    def test_perfect_prediction_is_one(self):
        y = [0.1, 0.4, 0.9]
        assert r2(y, y) == 1.0

    def test_mean_prediction_is_zero(self):
        y = np.array([1.0, 2.0, 3.0])
        assert r2(np.full(3, y.mean()), y) == pytest.approx(0.0, abs=1e-15)

    def test_reversed_unit_pair_is_minus_three(self):
        # SS_res = 2, SS_tot = 0.5
        assert r2([1.0, 0.0], [0.0, 1.0]) == pytest.approx(-3.0)

    def test_needs_two_observations(self):
        with pytest.raises(DomainError):
            r2([1.0], [1.0])

    def test_zero_target_variance_is_an_error(self):
        with pytest.raises(DomainError):
            r2([0.2, 0.4], [0.7, 0.7])

    def test_length_mismatch_rejected(self):
        with pytest.raises(DomainError):
            r2([0.2, 0.4, 0.6], [0.7, 0.8])

    def test_affine_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            y = rng.normal(size=15)
            p = y + 0.3 * rng.normal(size=15)
            a = rng.uniform(0.5, 3.0) * rng.choice([-1.0, 1.0])
            b = rng.normal()
            assert r2(a * p + b, a * y + b) == pytest.approx(r2(p, y))


class TestPerSliceSeries:
    def test_rows_are_grouped_and_cumulative(self):
        t = [0, 0, 0, 1, 1, 1]
        y = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        p = [0.1, 1.0, 1.9, 3.2, 4.0, 4.8]
        rows = per_slice_r2_series(p, y, t)
        assert [row[0] for row in rows] == [0, 1]
        assert rows[0][1] == pytest.approx(r2(p[:3], y[:3]))
        assert rows[1][1] == pytest.approx(r2(p[3:], y[3:]))
        assert rows[0][2] == pytest.approx(rows[0][1])
        assert rows[1][2] == pytest.approx(r2(p, y))

    def test_degenerate_slices_yield_none(self):
        rows = per_slice_r2_series([0.5, 0.1, 0.9], [0.5, 0.3, 0.3], [0, 1, 1])
        assert rows[0][1] is None          # single doc in slice 0
        assert rows[1][1] is None          # zero variance within slice 1
        assert rows[1][2] is not None      # pooled targets do vary

    def test_empty_input_gives_empty_series(self):
        assert per_slice_r2_series([], [], []) == []


class TestPplDc:
    def test_uniform_beta_gives_vocab_size(self):
        V = 37
        docs = [make_doc([0, 3, 5, 5, 11, 2]), make_doc([1, 1, 4, 9])]
        val = ppl_dc(UniformScorer(4, V), docs)
        assert val == pytest.approx(V, rel=1e-12)

    def test_single_token_docs_are_excluded(self):
        V = 10
        docs = [make_doc([3]), make_doc([1, 2, 1, 5])]
        assert ppl_dc(UniformScorer(2, V), docs) == pytest.approx(V, rel=1e-12)

    def test_no_eligible_docs_is_an_error(self):
        with pytest.raises(DataError):
            ppl_dc(UniformScorer(2, 10), [make_doc([3]), make_doc([7])])

    def test_peaked_model_beats_uniform(self):
        # scoring with the generator's own parameters must not be worse
        # than the uniform baseline
        cfg = ScenarioConfig(n_topics=3, vocab_size=40, embed_dim=10,
                             n_slices=3, docs_per_slice=30, tokens_per_doc=24,
                             dynamics=("stationary",) * 3,
                             rating_link=(0.0,) * 3, seed=21)
        timeline, latents = sample_timeline(cfg)
        docs = timeline.all_documents()
        oracle = ppl_dc(OracleScorer(latents), docs)
        uniform = ppl_dc(UniformScorer(cfg.n_topics, cfg.vocab_size), docs)
        assert oracle <= uniform
        assert uniform == pytest.approx(cfg.vocab_size, rel=1e-12)

    def test_self_evaluation_matches_simulated_exp_entropy(self):
        # second-half tokens are iid draws from the per-doc mixture, so the
        # corpus PPL-DC must approach exp of the token-weighted mean entropy
        cfg = ScenarioConfig(n_topics=2, vocab_size=30, embed_dim=8,
                             n_slices=4, docs_per_slice=100,
                             tokens_per_doc=60,
                             dynamics=("stationary", "stationary"),
                             rating_link=(0.0, 0.0), seed=23)
        timeline, latents = sample_timeline(cfg)
        docs = timeline.all_documents()
        measured = ppl_dc(OracleScorer(latents), docs)
        weighted_h = 0.0
        tokens = 0
        for d in docs:
            mix = latents.theta[d.doc_id] @ latents.beta
            n2 = len(d.tm_token_ids) - (len(d.tm_token_ids) + 1) // 2
            weighted_h += n2 * float(-(mix * np.log(mix)).sum())
            tokens += n2
        expected = math.exp(weighted_h / tokens)
        assert abs(measured - expected) / expected < 0.05


def presence_docs(pattern_rows):
    """Build docs from 0/1 presence rows over a tiny vocabulary."""
    docs = []
    for i, row in enumerate(pattern_rows):
        ids = [w for w, flag in enumerate(row) if flag]
        docs.append(make_doc(ids or [len(row)], doc_id=f"p{i}"))
    return docs


class TestTopicCoherence:
    def test_perfect_co_occurrence_scores_one(self):
        # words 0 and 1 together in half the docs, never apart
        docs = presence_docs([[1, 1, 0]] * 5 + [[0, 0, 1]] * 5)
        beta = np.array([[0.5, 0.4, 0.1]])
        assert topic_coherence(beta, docs, top_n=2) == 1.0

    def test_words_in_every_document_score_one_by_limit(self):
        docs = presence_docs([[1, 1, 0]] * 8)
        beta = np.array([[0.5, 0.4, 0.1]])
        assert topic_coherence(beta, docs, top_n=2) == 1.0

    def test_never_co_occurring_words_score_near_minus_one(self):
        docs = presence_docs([[1, 0, 0]] * 5 + [[0, 1, 0]] * 5)
        beta = np.array([[0.5, 0.4, 0.1]])
        assert topic_coherence(beta, docs, top_n=2) < -0.9

    def test_independent_words_score_near_zero(self):
        rng = np.random.default_rng(29)
        rows = rng.integers(0, 2, size=(20000, 2))
        rows = np.concatenate([rows, np.ones((20000, 1), dtype=rows.dtype)],
                              axis=1)
        docs = presence_docs(rows.tolist())
        beta = np.array([[0.5, 0.4, 0.1]])
        assert abs(topic_coherence(beta, docs, top_n=2)) < 0.02

    def test_analytic_three_word_case(self):
        # doc presence: {0,1} x4, {0} x2, {1} x2, {2} x8 over 16 docs
        docs = presence_docs(
            [[1, 1, 0]] * 4 + [[1, 0, 0]] * 2 + [[0, 1, 0]] * 2
            + [[0, 0, 1]] * 8)
        beta = np.array([[0.6, 0.3, 0.1]])
        p_i = p_j = 6 / 16
        p_ij = 4 / 16 + 1e-12
        want = math.log(p_ij / (p_i * p_j)) / (-math.log(p_ij))
        got = topic_coherence(beta, docs, top_n=2)
        assert got == pytest.approx(want, abs=1e-12)

    def test_absent_word_pairs_skipped(self):
        # word 5 never occurs; pairs touching it drop, the {0,1} pair stays
        docs = presence_docs([[1, 1, 0]] * 6)
        beta = np.array([[0.4, 0.3, 0.0, 0.0, 0.0, 0.3]])
        assert topic_coherence(beta, docs, top_n=3) == 1.0

    def test_all_pairs_skipped_is_an_error(self):
        docs = presence_docs([[0, 0, 1]] * 4)
        beta = np.array([[0.6, 0.4, 0.0]])
        with pytest.raises(DataError):
            topic_coherence(beta, docs, top_n=2)

    def test_empty_reference_is_an_error(self):
        with pytest.raises(DataError):
            topic_coherence(np.array([[0.6, 0.4]]), [], top_n=2)

    def test_permutation_invariance_docs_and_topics(self):
        cfg = ScenarioConfig(n_topics=3, vocab_size=25, embed_dim=8,
                             n_slices=3, docs_per_slice=20, tokens_per_doc=15,
                             dynamics=("stationary",) * 3,
                             rating_link=(0.0,) * 3, seed=31)
        timeline, latents = sample_timeline(cfg)
        docs = timeline.all_documents()
        base = topic_coherence(latents.beta, docs, top_n=5)
        rng = np.random.default_rng(0)
        shuffled = [docs[i] for i in rng.permutation(len(docs))]
        assert topic_coherence(latents.beta, shuffled, top_n=5) == base
        assert topic_coherence(latents.beta[::-1], docs, top_n=5) == \
            pytest.approx(base, abs=1e-12)

    def test_range_covers_reported_scale(self):
        # coherence always lands in [-1, 1]; published dynamic-topic numbers
        # (roughly -0.63 to 0.17) sit inside that range
        cfg = ScenarioConfig(n_topics=3, vocab_size=30, embed_dim=8,
                             n_slices=3, docs_per_slice=25, tokens_per_doc=20,
                             dynamics=("stationary",) * 3,
                             rating_link=(0.0,) * 3, seed=37)
        timeline, latents = sample_timeline(cfg)
        tc = topic_coherence(latents.beta, timeline.all_documents())
        assert -1.0 <= tc <= 1.0
        assert -1.0 <= -0.63 and 0.17 <= 1.0


class TestEvalReport:
    def test_validate_rejects_out_of_range_tc(self):
        rep = EvalReport(r2=0.5, ppl_dc=10.0, ppl_p=12.0, tc=1.5)
        with pytest.raises(DomainError):
            rep.validate()

    def test_save_writes_text_and_csv(self, tmp_path):
        rep = EvalReport(r2=0.25, ppl_dc=30.0, ppl_p=42.5, tc=0.05,
                         per_slice=[(0, 0.1, 0.1), (1, None, 0.2)],
                         fingerprint="abc123")
        rep.save(tmp_path / "eval")
        text = (tmp_path / "eval.report.txt").read_text()
        assert "r2 = 0.25" in text and "fingerprint = abc123" in text
        csv = (tmp_path / "eval.r2.csv").read_text().splitlines()
        assert csv[0] == "time_index,r2,cumulative_r2"
        assert csv[1] == "0,0.1,0.1"
        assert csv[2] == "1,,0.2"

    def test_save_is_deterministic(self, tmp_path):
        rep = EvalReport(r2=1 / 3, ppl_dc=11.0, ppl_p=13.0, tc=-0.2,
                         per_slice=[(0, 1 / 7, 1 / 7)], fingerprint="x")
        rep.save(tmp_path / "a")
        rep.save(tmp_path / "b")
        assert (tmp_path / "a.report.txt").read_bytes() == \
            (tmp_path / "b.report.txt").read_bytes()
        assert (tmp_path / "a.r2.csv").read_bytes() == \
            (tmp_path / "b.r2.csv").read_bytes()

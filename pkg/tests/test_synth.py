from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatefuse import (
    InvalidInputError,
    S_STAR,
    SynthSpec,
    UnsupportedModeError,
    VoteRecord,
    bayes_accuracy,
    bayes_posterior,
    evaluate,
    generate,
)
from gatefuse.synth import VOTE_SMOOTHING, draw, empirical_reliability, vote_records


def brute_posterior(votes, r, C):
    """Enumerate classes with exact rationals."""
    like = []
    for c in range(C):
        p = Fraction(1)
        for v, rm in zip(votes, r):
            rm = Fraction(rm)
            p *= rm if v == c else (1 - rm) / (C - 1)
        like.append(p)
    total = sum(like)
    return [float(x / total) for x in like]


class TestSynthSpec:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"class_count": 1},
            {"reliability": ((1.0,),)},
            {"reliability": ((0.0, 0.5),)},
            {"reliability": ((0.5,), (0.5, 0.5))},
            {"reliability": ()},
            {"sample_count": 0},
            {"mode": "hard"},
            {"noise": -1.0},
            {"seed": -3},
            {"modality_names": ("a", "b")},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        base = {"class_count": 3, "reliability": ((0.6,),), "sample_count": 10}
        with pytest.raises(InvalidInputError):
            SynthSpec(**{**base, **kwargs})

    def test_reference_spec(self):
        assert (S_STAR.class_count, S_STAR.modality_count, S_STAR.context_count) == (10, 2, 2)
        assert S_STAR.sample_count == 8000 and S_STAR.seed == 7 and S_STAR.mode == "vote"
        assert S_STAR.modality_names == ("m0", "m1")


class TestGenerate:
    def test_near_perfect_expert(self):
        spec = SynthSpec(class_count=5, reliability=((0.999,),), sample_count=10000, seed=5)
        d = draw(spec)
        assert np.mean(d.votes[:, 0] == d.labels) > 0.99

    def test_coin_flip_expert(self):
        ds = generate(SynthSpec(class_count=2, reliability=((0.5,),), sample_count=5000, seed=0))
        assert evaluate(ds, "average").accuracy == pytest.approx(0.5, abs=0.03)

    def test_deterministic(self):
        spec = SynthSpec(class_count=4, reliability=((0.7, 0.4), (0.3, 0.9)), sample_count=300, seed=11)
        assert generate(spec).identical_to(generate(spec))

    def test_seed_changes_data(self):
        a = generate(SynthSpec(class_count=4, reliability=((0.7,),), sample_count=100, seed=1))
        b = generate(SynthSpec(class_count=4, reliability=((0.7,),), sample_count=100, seed=2))
        assert not a.identical_to(b)

    def test_vote_scores_have_one_peak(self, s_star):
        C = s_star.class_count
        peak = s_star.scores == 1.0 - VOTE_SMOOTHING
        np.testing.assert_array_equal(peak.sum(axis=2), 1)
        assert np.all(s_star.scores[~peak] == VOTE_SMOOTHING / (C - 1))

    def test_context_is_one_hot(self, s_star):
        np.testing.assert_array_equal(s_star.context.sum(axis=1), 1.0)
        assert set(np.unique(s_star.context)) == {0.0, 1.0}

    def test_votes_recoverable(self):
        spec = SynthSpec(class_count=6, reliability=((0.5, 0.6), (0.4, 0.8)), sample_count=200, seed=4)
        d = draw(spec)
        recs = vote_records(generate(spec))
        assert [r.votes for r in recs] == [tuple(v) for v in d.votes.tolist()]
        assert [r.context for r in recs] == d.contexts.tolist()

    def test_reliability_within_three_standard_errors(self):
        spec = SynthSpec(class_count=6, reliability=((0.9, 0.3), (0.5, 0.7)), sample_count=10000, seed=21)
        ds = generate(spec)
        emp = empirical_reliability(ds, spec)
        counts = np.bincount(np.argmax(ds.context, axis=1), minlength=2)
        se = np.sqrt(spec.r * (1 - spec.r) / counts[None, :])
        assert np.all(np.abs(emp - spec.r) < 3 * se)

    def test_soft_mode_is_probability(self):
        spec = SynthSpec(class_count=5, reliability=((0.8,), (0.6,)), sample_count=50, seed=2, mode="soft")
        ds = generate(spec)
        np.testing.assert_allclose(ds.scores.sum(axis=2), 1.0, rtol=0, atol=1e-12)
        assert generate(spec).identical_to(ds)

    def test_soft_mode_shares_votes_with_vote_mode(self):
        kw = dict(class_count=5, reliability=((0.8,), (0.6,)), sample_count=200, seed=2)
        vote = generate(SynthSpec(**kw))
        soft = generate(SynthSpec(**kw, mode="soft", noise=0.0))
        np.testing.assert_array_equal(np.argmax(soft.scores, axis=2), np.argmax(vote.scores, axis=2))
        np.testing.assert_array_equal(soft.labels, vote.labels)


class TestBayesPosterior:
    def test_agreeing_experts(self):
        spec = SynthSpec(class_count=2, reliability=((0.9,), (0.6,)), sample_count=1)
        # 0.54 / (0.54 + 0.04)
        np.testing.assert_allclose(
            bayes_posterior([0, 0], spec, 0), [0.9310344827586207, 0.06896551724137931], rtol=1e-14
        )

    def test_symmetric_disagreement(self):
        spec = SynthSpec(class_count=2, reliability=((0.7,), (0.7,)), sample_count=1)
        np.testing.assert_allclose(bayes_posterior(VoteRecord((0, 1), 0), spec), [0.5, 0.5], rtol=1e-15)

    def test_single_expert(self):
        spec = SynthSpec(class_count=3, reliability=((0.9,),), sample_count=1)
        np.testing.assert_allclose(bayes_posterior([2], spec, 0), [0.05, 0.05, 0.9], rtol=1e-14)

    def test_soft_mode_unsupported(self):
        spec = SynthSpec(class_count=3, reliability=((0.9,),), sample_count=1, mode="soft")
        with pytest.raises(UnsupportedModeError):
            bayes_posterior([2], spec, 0)
        with pytest.raises(UnsupportedModeError):
            bayes_accuracy(generate(spec), spec)

    @pytest.mark.parametrize("votes, context", [([3], 0), ([0, 1], 0), ([0], 1), ([0], None)])
    def test_rejects_bad_votes(self, votes, context):
        spec = SynthSpec(class_count=3, reliability=((0.9,),), sample_count=1)
        with pytest.raises(InvalidInputError):
            bayes_posterior(votes, spec, context)

    @settings(max_examples=50)
    @given(st.data())
    def test_matches_exact_enumeration(self, data):
        C = data.draw(st.integers(2, 6))
        n = data.draw(st.integers(1, 4))
        r = [data.draw(st.floats(0.01, 0.99)) for _ in range(n)]
        votes = [data.draw(st.integers(0, C - 1)) for _ in range(n)]
        spec = SynthSpec(class_count=C, reliability=tuple((v,) for v in r), sample_count=1)
        np.testing.assert_allclose(bayes_posterior(votes, spec, 0), brute_posterior(votes, r, C), rtol=0, atol=1e-12)

    @given(st.data())
    def test_modality_order_invariant(self, data):
        n = data.draw(st.integers(2, 4))
        C = data.draw(st.integers(2, 5))
        r = [data.draw(st.floats(0.05, 0.95)) for _ in range(n)]
        votes = [data.draw(st.integers(0, C - 1)) for _ in range(n)]
        perm = data.draw(st.permutations(range(n)))
        a = SynthSpec(class_count=C, reliability=tuple((v,) for v in r), sample_count=1)
        b = SynthSpec(class_count=C, reliability=tuple((r[p],) for p in perm), sample_count=1)
        pa = bayes_posterior(votes, a, 0)
        pb = bayes_posterior([votes[p] for p in perm], b, 0)
        np.testing.assert_allclose(pa, pb, rtol=0, atol=1e-15)
        assert abs(pa.sum() - 1.0) <= 1e-12


class TestBayesAccuracy:
    def test_near_deterministic(self):
        spec = SynthSpec(class_count=4, reliability=((0.999, 0.999), (0.999, 0.999)), sample_count=3000, seed=8)
        assert bayes_accuracy(generate(spec), spec) > 0.99

    def test_no_information(self):
        spec = SynthSpec(class_count=4, reliability=((0.25,), (0.25,)), sample_count=4000, seed=8)
        assert bayes_accuracy(generate(spec), spec) == pytest.approx(0.25, abs=0.03)

    def test_shape_mismatch(self, s_star):
        spec = SynthSpec(class_count=5, reliability=((0.6, 0.6), (0.6, 0.6)), sample_count=10)
        with pytest.raises(InvalidInputError):
            bayes_accuracy(s_star, spec)

    def test_reference_spec_contexts_favour_different_modalities(self, s_star):
        emp = empirical_reliability(s_star, S_STAR)
        assert emp[0, 0] > emp[1, 0] and emp[1, 1] > emp[0, 1]

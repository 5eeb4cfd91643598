import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatcap.metrics import bleu, cider, document_frequency, format_table, lcs_length, ngrams, report_json, \
    rouge_l, score_all


def s(text):
    return text.split()


def rouge_f(p, r, beta=1.2):
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


class TestNgrams:
    def test_counts(self):
        assert ngrams(s("a b a b"), 2) == {("a", "b"): 2, ("b", "a"): 1}

    @pytest.mark.parametrize("length,n", [(0, 1), (3, 4), (5, 2), (4, 4)])
    def test_total(self, length, n):
        assert sum(ngrams(list(range(length)), n).values()) == max(0, length - n + 1)


class TestBLEU:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_identity_is_exactly_one(self, n):
        cand = s("a red cup left_of a blue box")
        assert bleu([cand], [[cand]], n).corpus == 1.0

    def test_clipped_unigrams(self):
        assert abs(bleu([s("a a a")], [[s("a b c")]], 1).corpus - 1 / 3) <= 1e-9

    def test_brevity_penalty(self):
        assert abs(bleu([s("a")], [[s("a b c d")]], 1).corpus - math.exp(-3)) <= 1e-9

    def test_bigram_sentence(self):
        # unigrams 5/6 (the x2, cat, on, mat); bigrams 3/5 (the cat, on the, the mat)
        got = bleu([s("the cat sat on the mat")], [[s("the cat is on the mat")]], 2).corpus
        assert abs(got - math.sqrt(5 / 6 * 3 / 5)) <= 1e-9

    def test_closest_reference_tie_goes_shorter(self):
        # |3-2| == |3-4|: r = 2, so no penalty
        assert abs(bleu([s("a b c")], [[s("a b"), s("a b c d")]], 1).corpus - 1.0) <= 1e-9

    def test_corpus_pools_counts(self):
        cands = [s("a b c"), s("x y")]
        refs = [[s("a b d")], [s("x y")]]
        out = bleu(cands, refs, 2)
        assert abs(out.corpus - math.sqrt(4 / 5 * 2 / 3)) <= 1e-9
        assert abs(out.per_instance[0] - math.sqrt(2 / 3 * 1 / 2)) <= 1e-9
        assert out.per_instance[1] == 1.0

    def test_zero_precision_no_smoothing(self):
        assert bleu([s("a b")], [[s("b a")]], 2).corpus == 0.0

    def test_empty_candidate_contributes_zero(self):
        out = bleu([[], s("a b")], [[s("a")], [s("a b")]], 1)
        assert out.per_instance[0] == 0.0
        # pooled: c = 2, r = 1 + 2, matches 2/2
        assert abs(out.corpus - math.exp(1 - 3 / 2)) <= 1e-9

    def test_higher_order_can_exceed_lower(self):
        # unigrams clip to 3/5; bigrams 01, 10, 00 all match: 3/4
        out = [bleu([s("0 1 0 0 0")], [[s("1 0 0 1")]], n).corpus for n in (1, 2)]
        assert abs(out[0] - 0.6) <= 1e-9
        assert abs(out[1] - math.sqrt(0.6 * 0.75)) <= 1e-9

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 9), unique=True, max_size=8),
           st.lists(st.lists(st.integers(0, 9), min_size=1, max_size=8), min_size=1, max_size=3))
    def test_non_increasing_in_n_for_distinct_tokens(self, cand, refs):
        scores = [bleu([cand], [refs], n).corpus for n in range(1, 5)]
        assert all(b <= a + 1e-12 for a, b in zip(scores, scores[1:]))

    def test_invalid(self):
        with pytest.raises(ValueError):
            bleu([s("a")], [[s("a")]], 5)
        with pytest.raises(ValueError):
            bleu([s("a")], [[]], 1)


class TestRougeL:
    def test_lcs(self):
        assert lcs_length(s("a b c d"), s("a c b d")) == 3
        assert lcs_length([], s("a")) == 0

    def test_identity(self):
        assert rouge_l([s("a b c")], [[s("a b c")]]).corpus == 1.0

    def test_disjoint(self):
        assert rouge_l([s("a b")], [[s("c d")]]).corpus == 0.0

    def test_swapped_middle(self):
        got = rouge_l([s("a b c d")], [[s("a c b d")]]).corpus
        assert abs(got - rouge_f(3 / 4, 3 / 4)) <= 1e-9
        assert abs(got - 0.75) <= 1e-9

    def test_short_candidate(self):
        # LCS 2: P = 1, R = 2/5
        got = rouge_l([s("a b")], [[s("a x b y z")]]).corpus
        assert abs(got - 2.44 * 0.4 / (0.4 + 1.44)) <= 1e-9

    def test_best_reference(self):
        got = rouge_l([s("a b c")], [[s("c b a"), s("a b")]]).corpus
        assert abs(got - 2.44 * (2 / 3) / (1 + 1.44 * 2 / 3)) <= 1e-9

    def test_corpus_mean(self):
        out = rouge_l([s("a b c d"), s("a b")], [[s("a c b d")], [s("c d")]])
        assert out.per_instance == [pytest.approx(0.75, abs=1e-12), 0.0]
        assert abs(out.corpus - 0.375) <= 1e-9


class TestCIDEr:
    def test_identity_with_unique_ngrams(self):
        out = cider([s("a b c d"), s("e f g h")], [[s("a b c d")], [s("e f g h")]])
        assert abs(out.corpus - 10.0) <= 1e-9

    def test_no_shared_ngrams(self):
        out = cider([s("x y"), s("e f")], [[s("a b")], [s("e f")]])
        assert out.per_instance[0] == 0.0

    def test_short_captions_miss_high_orders(self):
        # orders 3 and 4 have no n-grams, so only 2 of 4 orders reach cosine 1
        out = cider([s("a b"), s("c d")], [[s("a b")], [s("c d")]])
        assert abs(out.corpus - 5.0) <= 1e-9

    def test_reference_average(self):
        out = cider([s("a b"), s("d")], [[s("a b"), s("a c")], [s("d")]])
        # unigrams: (1 + 1/2) / 2; bigrams: (1 + 0) / 2
        assert abs(out.per_instance[0] - 10 * (0.75 + 0.5) / 4) <= 1e-9
        assert abs(out.per_instance[1] - 2.5) <= 1e-9
        assert abs(out.corpus - 2.8125) <= 1e-9

    def test_zero_idf_token(self):
        # "a" occurs in every reference set, so it carries no weight
        out = cider([s("a z"), s("a y")], [[s("a x")], [s("a y")]])
        assert out.per_instance == [0.0, pytest.approx(5.0, abs=1e-12)]

    def test_length_penalty(self):
        out = cider([s("a a a"), s("b")], [[s("a")], [s("b")]])
        assert abs(out.per_instance[0] - 2.5 * math.exp(-4 / 72)) <= 1e-9

    def test_three_instance_corpus(self):
        refs = [[s("a b c")], [s("a b d"), s("e")], [s("f c")]]
        cands = [s("a b c"), s("a b"), s("c")]
        A, B = math.log(3), math.log(3) - math.log(2)  # idf for df = 1 and df = 2
        pen = math.exp(-1 / 72)
        e0 = 10 * 3 / 4
        uni = math.sqrt(2) * B / math.sqrt(2 * B ** 2 + A ** 2)
        bi = B / math.sqrt(B ** 2 + A ** 2)
        e1 = 10 / 4 * 0.5 * pen * (uni + bi)
        e2 = 10 / 4 * pen * B / math.sqrt(A ** 2 + B ** 2)
        out = cider(cands, refs)
        np.testing.assert_allclose(out.per_instance, [e0, e1, e2], rtol=0, atol=1e-9)
        assert abs(out.corpus - (e0 + e1 + e2) / 3) <= 1e-9

    def test_document_frequency(self):
        df = document_frequency([[s("a b"), s("a")], [s("a c")]], n_max=2)
        assert df[("a",)] == 2 and df[("b",)] == 1 and df[("a", "b")] == 1

    def test_needs_two_instances(self):
        with pytest.raises(ValueError):
            cider([s("a")], [[s("a")]])


words = st.lists(st.sampled_from("abcdef"), max_size=6)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(words, st.lists(words.filter(bool), min_size=1, max_size=3)), min_size=2, max_size=5),
           st.permutations(list("abcdef")))
    def test_relabel_invariance(self, corpus, perm):
        relabel = dict(zip("abcdef", perm))
        cands = [c for c, _ in corpus]
        refs = [r for _, r in corpus]
        cands2 = [[relabel[t] for t in c] for c in cands]
        refs2 = [[[relabel[t] for t in r] for r in rs] for rs in refs]
        a, b = score_all(cands, refs), score_all(cands2, refs2)
        for k in a:
            assert abs(a[k].corpus - b[k].corpus) <= 1e-12
            np.testing.assert_allclose(a[k].per_instance, b[k].per_instance, rtol=0, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(words, st.lists(words.filter(bool), min_size=1, max_size=3)), min_size=2, max_size=5))
    def test_ranges(self, corpus):
        out = score_all([c for c, _ in corpus], [r for _, r in corpus])
        for k, v in out.items():
            assert v.corpus >= 0
            if k != "CIDEr":
                assert v.corpus <= 1 + 1e-12


class TestReport:
    def test_json_schema(self):

        scores = score_all([s("a b"), s("c")], [[s("a b")], [s("c d")]])
        data = json.loads(report_json(scores))
        assert set(data) == {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L", "CIDEr"}
        assert set(data["CIDEr"]) == {"corpus", "per_instance"}
        assert len(data["ROUGE-L"]["per_instance"]) == 2

    def test_table(self):
        table = format_table(score_all([s("a b"), s("c")], [[s("a b")], [s("c d")]]), {"spatial_accuracy": 0.5})
        assert "BLEU-4" in table and "spatial_accuracy  0.5000" in table

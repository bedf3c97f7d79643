"""BLEU / ROUGE-L / CIDEr-D against hand counts and from-scratch oracles."""

import math
from collections import Counter

import numpy as np
import pytest

from i2ce.baselines import (DfTable, bleu, build_df_table, cider, corpus_bleu,
                            load_df_table, ngram_counts, rouge_l, save_df_table)

T = lambda s: s.split()


class TestNgramCounts:
    def test_counts_and_total(self):
        counts = ngram_counts(T("a b a b c"), 2)
        assert counts[("a", "b")] == 2 and counts[("b", "a")] == 1
        assert sum(counts.values()) == 4  # len - n + 1

    def test_short_sentence_empty(self):
        assert ngram_counts(T("a b"), 3) == Counter()


class TestBleu:
    def test_perfect_match_all_ones(self):
        scores = bleu(T("a cat sits on the mat"), [T("a cat sits on the mat")])
        assert scores == [1.0, 1.0, 1.0, 1.0]

    def test_classic_clipped_precision(self):
        # seven candidate unigrams, only two creditable 'the'
        scores = bleu(T("the the the the the the the"), [T("the cat is on the mat")])
        assert scores[0] == pytest.approx(2.0 / 7.0, abs=1e-15)

    def test_zero_fourgram_matches_zero_bleu4(self):
        scores = bleu(T("a cat sits on the mat"), [T("the mat sits under a cat")])
        assert scores[3] == 0.0

    def test_nonincreasing_in_k(self):
        rng = np.random.default_rng(120)
        words = "a b c d e f".split()
        for _ in range(30):
            cand = [words[i] for i in rng.integers(0, 6, size=8)]
            ref = [words[i] for i in rng.integers(0, 6, size=9)]
            scores = bleu(cand, [ref])
            assert all(x >= y - 1e-15 for x, y in zip(scores, scores[1:]))

    def test_reference_permutation_invariance(self):
        cand = T("a dog runs across the field")
        refs = [T("a dog runs"), T("the dog runs across a field"), T("dogs run")]
        assert bleu(cand, refs) == bleu(cand, refs[::-1])

    def test_brevity_penalty_applied(self):
        cand, ref = T("a cat sits"), T("a cat sits on the mat")
        scores = bleu(cand, [ref])
        assert scores[0] == pytest.approx(math.exp(1 - 6 / 3) * 1.0, abs=1e-12)

    def test_brevity_tie_prefers_shorter_reference(self):
        cand = T("a b c")  # distance 1 to both; shorter ref (len 2) wins, so no penalty
        scores = bleu(cand, [T("a b"), T("a b c d")])
        assert scores[0] == 1.0

    def test_smoothing_only_for_higher_orders(self):
        cand, ref = T("a x c"), T("a b c")
        plain = bleu(cand, [ref])
        smoothed = bleu(cand, [ref], smooth=True)
        assert smoothed[0] == plain[0] == pytest.approx(2.0 / 3.0)
        assert plain[1] == 0.0
        assert smoothed[1] == pytest.approx(math.sqrt((2 / 3) * (1 / 3)), abs=1e-12)

    def test_empty_candidate_scores_zero(self):
        assert bleu([], [T("a b")]) == [0.0, 0.0, 0.0, 0.0]

    def test_scores_within_unit_interval(self):
        rng = np.random.default_rng(121)
        words = "a b c d".split()
        for _ in range(50):
            cand = [words[i] for i in rng.integers(0, 4, size=rng.integers(1, 10))]
            ref = [words[i] for i in rng.integers(0, 4, size=rng.integers(1, 10))]
            assert all(0.0 <= s <= 1.0 for s in bleu(cand, [ref], smooth=True))

    def test_corpus_bleu_pools_counts(self):
        cands = [T("a cat"), T("the dog runs")]
        refs = [[T("a cat")], [T("the dog runs fast")]]
        got = corpus_bleu(cands, refs)
        # pooled unigrams: (2 + 3) matched / (2 + 3) total; closest ref lengths 2 and 4
        assert got[0] == pytest.approx(math.exp(1 - 6 / 5) * 1.0, abs=1e-12)


def _lcs_full_table(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[-1][-1]


class TestRougeL:
    def test_identical_sentences(self):
        assert rouge_l(T("a cat on the mat"), [T("a cat on the mat")]) == 1.0

    def test_disjoint_vocabulary(self):
        assert rouge_l(T("x y z"), [T("a b c")]) == 0.0

    def test_reordered_lcs_against_dp_oracle(self):
        cand, ref = T("a b c d"), T("a c b d")
        assert _lcs_full_table(cand, ref) == 3
        recall = precision = 3 / 4
        b2 = 1.2 ** 2
        expected = (1 + b2) * recall * precision / (recall + b2 * precision)
        assert rouge_l(cand, [ref]) == pytest.approx(expected, abs=1e-15)

    def test_f_measure_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(130)
        words = "a b c d e".split()
        for _ in range(40):
            cand = [words[i] for i in rng.integers(0, 5, size=rng.integers(1, 9))]
            ref = [words[i] for i in rng.integers(0, 5, size=rng.integers(1, 9))]
            lcs = _lcs_full_table(cand, ref)
            if lcs == 0:
                assert rouge_l(cand, [ref]) == 0.0
                continue
            r, p = lcs / len(ref), lcs / len(cand)
            b2 = 1.44
            assert rouge_l(cand, [ref]) == pytest.approx(
                (1 + b2) * r * p / (r + b2 * p), abs=1e-12)

    def test_multiple_references_take_best(self):
        cand = T("a b c")
        refs = [T("z z z"), T("a b c")]
        assert rouge_l(cand, refs) == 1.0

    def test_empty_candidate(self):
        assert rouge_l([], [T("a b")]) == 0.0

    def test_permutation_invariance(self):
        cand = T("a b c d")
        refs = [T("a b"), T("b c d"), T("d c b a")]
        assert rouge_l(cand, refs) == rouge_l(cand, refs[::-1])


REF_GROUPS = [
    [T("a black cat sits on the mat"), T("a cat rests on a mat")],
    [T("a brown dog runs in the park"), T("the dog plays in a park")],
    [T("a red bus waits at the station"), T("the bus stops at a station")],
]


def _cider_oracle(cand, refs, groups, sigma=6.0):
    """Independent tf-idf/cosine recomputation over the 3-image corpus."""
    n_images = len(groups)

    def doc_freq(gram):
        return sum(any(gram in ngram_counts(r, len(gram)) for r in image) for image in groups)

    def weights(tokens, n):
        counts = ngram_counts(tokens, n)
        return {g: c * math.log(n_images / max(1, doc_freq(g))) for g, c in counts.items()}

    total = 0.0
    for n in range(1, 5):
        wc = weights(cand, n)
        norm_c = math.sqrt(sum(v * v for v in wc.values()))
        acc = 0.0
        for ref in refs:
            wr = weights(ref, n)
            norm_r = math.sqrt(sum(v * v for v in wr.values()))
            dot = sum(min(wc[g], wr.get(g, 0.0)) * wr.get(g, 0.0) for g in wc)
            if norm_c > 0 and norm_r > 0:
                acc += (dot / (norm_c * norm_r)) * math.exp(
                    -((len(cand) - len(ref)) ** 2) / (2 * sigma * sigma))
        total += acc / len(refs)
    return total / 4.0


class TestCider:
    def test_identical_single_reference_maximal(self):
        groups = [[T("a cat sits on mats")], [T("a dog runs in parks")], [T("a bus waits at stops")]]
        table = build_df_table(groups)
        assert cider(T("a cat sits on mats"), groups[0], table) == pytest.approx(1.0, abs=1e-12)
        for other in (T("a dog runs in parks"), T("a bus waits at stops")):
            assert cider(other, groups[0], table) < 1.0

    def test_no_shared_ngrams_scores_zero(self):
        table = build_df_table(REF_GROUPS)
        assert cider(T("purple elephants fly quickly"), REF_GROUPS[0], table) == 0.0

    def test_matches_from_scratch_tfidf_oracle(self):
        table = build_df_table(REF_GROUPS)
        cand = T("a black cat rests on the mat")
        got = cider(cand, REF_GROUPS[0], table)
        assert got == pytest.approx(_cider_oracle(cand, REF_GROUPS[0], REF_GROUPS), abs=1e-12)

    def test_raw_scores_within_unit_interval(self):
        table = build_df_table(REF_GROUPS)
        rng = np.random.default_rng(140)
        vocab = sorted({t for image in REF_GROUPS for r in image for t in r})
        for _ in range(30):
            cand = [vocab[i] for i in rng.integers(0, len(vocab), size=rng.integers(1, 9))]
            assert 0.0 <= cider(cand, REF_GROUPS[1], table) <= 1.0

    def test_scale_convention(self):
        table = build_df_table(REF_GROUPS)
        cand = T("a cat rests on a mat")
        raw = cider(cand, REF_GROUPS[0], table)
        assert cider(cand, REF_GROUPS[0], table, scale=10.0) == pytest.approx(10 * raw)

    def test_reference_permutation_invariance(self):
        table = build_df_table(REF_GROUPS)
        cand = T("the dog plays in the park")
        assert cider(cand, REF_GROUPS[1], table) == \
            pytest.approx(cider(cand, REF_GROUPS[1][::-1], table), abs=1e-15)

    def test_empty_df_table_rejected(self):
        with pytest.raises(ValueError, match="document-frequency"):
            cider(T("a cat"), [T("a cat")], DfTable({}, 0))

    def test_df_cache_round_trip(self, tmp_path):
        table = build_df_table(REF_GROUPS, corpus_hash="abc123")
        path = tmp_path / "df.bin"
        save_df_table(table, path)
        again = load_df_table(path, expect_hash="abc123")
        assert again.df == table.df and again.n_images == 3
        with pytest.raises(ValueError, match="different corpus"):
            load_df_table(path, expect_hash="zzz")

"""Tokenizer, vocabulary, ingestion and sampler behavior."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from i2ce.text import (BOS, EOS, PAD, UNK, CaptionGroup, IngestionError,
                       SamplingError, TokenSeq, Vocab, build_vocab, load_groups,
                       load_token_groups, read_corpus_sentences,
                       sample_dual_batch, sample_triplets, tokenize)

from helpers import encode_corpus, toy_corpus


class TestTokenize:
    def test_basic_sentence(self):
        assert tokenize("A man riding a horse.") == ["a", "man", "riding", "a", "horse"]

    def test_empty(self):
        assert tokenize("") == []

    def test_case_and_punctuation_folding(self):
        assert tokenize("Dog,  dog DOG!") == ["dog", "dog", "dog"]

    def test_punctuation_deleted_not_split(self):
        assert tokenize("it's a semi-truck") == ["its", "a", "semitruck"]


class TestVocab:
    def test_specials_occupy_first_four_ids(self):
        v = build_vocab(["a b", "a c"], min_freq=1)
        assert v.id_to_token[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]
        assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)

    def test_frequency_order(self):
        v = build_vocab(["a b", "a c"], min_freq=1)
        assert set(v.id_to_token[4:]) == {"a", "b", "c"}
        assert v.token_to_id["a"] == 4  # most frequent gets the smallest non-special id

    def test_min_freq_threshold(self):
        v = build_vocab(["a b", "a c"], min_freq=2)
        assert v.id_to_token[4:] == ["a"]
        seq = v.encode(["a", "b"])
        assert seq.ids == [BOS, v.token_to_id["a"], UNK, EOS]

    def test_ties_broken_lexicographically_vs_sort_oracle(self):
        sentences = ["zebra apple", "mango apple zebra", "mango"]
        v = build_vocab(sentences, min_freq=1)
        counts = {}
        for s in sentences:
            for t in s.split():
                counts[t] = counts.get(t, 0) + 1
        oracle = sorted(counts, key=lambda t: (-counts[t], t))
        assert v.id_to_token[4:] == oracle

    def test_bijection_over_non_special_ids(self):
        v = build_vocab(["x y z y z z"], min_freq=1)
        for i, tok in enumerate(v.id_to_token):
            assert v.token_to_id[tok] == i

    def test_empty_corpus_rejected(self):
        with pytest.raises(IngestionError, match="empty corpus"):
            build_vocab([], min_freq=1)

    def test_save_load_round_trip(self, tmp_path):
        v = build_vocab(["a b c", "a b", "a"], min_freq=1)
        path = tmp_path / "vocab.json"
        v.save(path)
        again = Vocab.load(path)
        assert again.id_to_token == v.id_to_token
        assert again.min_freq == v.min_freq


WORDS = "cat dog bird tree house river red blue one two".split()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=20))
def test_encode_decode_round_trip(tokens):
    v = build_vocab([" ".join(WORDS)], min_freq=1)
    seq = v.encode(tokens, max_tokens=20)
    assert v.decode(seq) == tokens
    assert seq.ids[0] == BOS and seq.ids[seq.length - 1] == EOS


def test_truncation_preserves_eos():
    v = build_vocab(["w"], min_freq=1)
    seq = v.encode(["w"] * 50, max_tokens=20)
    assert seq.length == 22  # BOS + 20 tokens + EOS
    assert seq.ids[-1] == EOS


def test_out_of_vocab_encodes_to_unk():
    v = build_vocab(["known words only"], min_freq=1)
    seq = v.encode(["mystery", "known"])
    assert seq.ids[1] == UNK and seq.ids[2] == v.token_to_id["known"]


class TestTokenSeq:
    def test_padding_round_trip(self):
        seq = TokenSeq([BOS, 5, 6, EOS], 4)
        assert seq.padded(7) == [BOS, 5, 6, EOS, PAD, PAD, PAD]
        assert TokenSeq(seq.padded(7), 4) == seq

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            TokenSeq([5, 6, EOS], 3)  # missing BOS
        with pytest.raises(ValueError):
            TokenSeq([BOS, 5, 6], 3)  # missing EOS
        with pytest.raises(ValueError):
            TokenSeq([BOS, EOS, 9], 2)  # non-PAD after length


class TestCorpusFiles:
    def test_json_corpus(self, tmp_path):
        corpus = toy_corpus(4, seed=1)
        path = tmp_path / "corpus.json"
        path.write_text(json.dumps(corpus))
        vocab = build_vocab(read_corpus_sentences(path), min_freq=1)
        groups = load_groups(path, vocab)
        assert [g.image_id for g in groups] == [c["image_id"] for c in corpus]
        assert all(1 <= len(g.references) <= 5 for g in groups)

    def test_plain_text_lines_become_singleton_groups(self, tmp_path):
        path = tmp_path / "lines.txt"
        path.write_text("a cat sits\n\na dog runs\n")
        sentences = read_corpus_sentences(path)
        assert sentences == ["a cat sits", "a dog runs"]
        vocab = build_vocab(sentences, min_freq=1)
        groups = load_groups(path, vocab)
        assert len(groups) == 2 and all(len(g.references) == 1 for g in groups)

    def test_corrupt_json_reports_line_and_column(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('[{"image_id": 1, "captions": ["x"]},\n  {"oops"]')
        with pytest.raises(IngestionError, match=r"line 2, column"):
            load_groups(path, Vocab([]))

    def test_more_than_five_references_truncated(self, tmp_path):
        path = tmp_path / "six.json"
        path.write_text(json.dumps([{"image_id": "a", "captions": [f"cat {i}" for i in range(6)]}]))
        vocab = build_vocab(read_corpus_sentences(path), min_freq=1)
        groups = load_groups(path, vocab)
        assert len(groups[0].references) == 5

    def test_empty_captions_dropped(self, tmp_path):
        path = tmp_path / "mixed.json"
        path.write_text(json.dumps([
            {"image_id": "a", "captions": ["...", "a real caption"]},
            {"image_id": "b", "captions": ["!!!"]},
        ]))
        vocab = build_vocab(read_corpus_sentences(path), min_freq=1)
        groups = load_groups(path, vocab)
        assert [g.image_id for g in groups] == ["a"]
        assert len(groups[0].references) == 1

    def test_token_groups_for_baselines(self, tmp_path):
        path = tmp_path / "corpus.json"
        path.write_text(json.dumps(toy_corpus(3, seed=2)))
        token_groups = load_token_groups(path)
        assert len(token_groups) == 3
        for _, refs in token_groups:
            assert all(isinstance(t, str) for ref in refs for t in ref)


class TestDualSampling:
    def test_two_groups_forced_pairing(self):
        _, groups = encode_corpus(toy_corpus(2, seed=3))
        batch = sample_dual_batch(groups, 2, np.random.default_rng(0))
        assert sorted(batch.groups) == sorted(g.image_id for g in groups)

    def test_anchors_from_distinct_groups(self):
        _, groups = encode_corpus(toy_corpus(50, seed=4))
        batch = sample_dual_batch(groups, 50, np.random.default_rng(0))
        assert len(set(batch.groups)) == 50

    def test_seeded_runs_identical(self):
        _, groups = encode_corpus(toy_corpus(10, seed=5))
        b1 = sample_dual_batch(groups, 6, np.random.default_rng(9))
        b2 = sample_dual_batch(groups, 6, np.random.default_rng(9))
        assert b1.groups == b2.groups and b1.anchors == b2.anchors

    def test_too_few_groups_rejected(self):
        _, groups = encode_corpus(toy_corpus(1, seed=6))
        with pytest.raises(SamplingError):
            sample_dual_batch(groups, 2, np.random.default_rng(0))

    def test_batch_larger_than_corpus_rejected(self):
        _, groups = encode_corpus(toy_corpus(3, seed=7))
        with pytest.raises(SamplingError):
            sample_dual_batch(groups, 4, np.random.default_rng(0))


class TestTripletSampling:
    def test_invariants_hold_on_thousand_samples(self):
        vocab, groups = encode_corpus(toy_corpus(8, seed=8))
        ref_sets = {g.image_id: set(g.references) for g in groups}
        batch = sample_triplets(groups, 1000, np.random.default_rng(1))
        for i in range(len(batch)):
            ag, ng = batch.anchor_groups[i], batch.negative_groups[i]
            assert ag != ng
            assert batch.anchors[i] in ref_sets[ag]
            assert batch.similars[i] in ref_sets[ag]
            assert batch.anchors[i] != batch.similars[i]
            assert batch.negatives[i] in ref_sets[ng]

    def test_forced_structure_with_one_eligible_group(self):
        vocab, groups = encode_corpus(toy_corpus(2, seed=9))
        groups[1].references = groups[1].references[:1]  # make group 1 a singleton
        batch = sample_triplets(groups, 5, np.random.default_rng(2))
        assert set(batch.anchor_groups) == {groups[0].image_id}
        assert set(batch.negative_groups) == {groups[1].image_id}

    def test_negative_group_distribution_uniform(self):
        vocab, groups = encode_corpus(toy_corpus(5, seed=10))
        for g in groups[1:]:
            g.references = g.references[:1]  # only group 0 can anchor
        batch = sample_triplets(groups, 10_000, np.random.default_rng(3))
        counts = {g.image_id: 0 for g in groups[1:]}
        for ng in batch.negative_groups:
            counts[ng] += 1
        expected = 10_000 / 4
        chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
        assert chi2 < 16.27  # chi-square critical value, 3 dof, alpha = 0.001

    def test_all_singleton_groups_rejected(self):
        vocab, groups = encode_corpus(toy_corpus(3, seed=11), t_max=20)
        for g in groups:
            g.references = g.references[:1]
        with pytest.raises(SamplingError):
            sample_triplets(groups, 2, np.random.default_rng(0))

    def test_seeded_runs_identical(self):
        _, groups = encode_corpus(toy_corpus(6, seed=12))
        b1 = sample_triplets(groups, 20, np.random.default_rng(4))
        b2 = sample_triplets(groups, 20, np.random.default_rng(4))
        assert b1.anchors == b2.anchors and b1.negatives == b2.negatives

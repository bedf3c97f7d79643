"""Tokenization, vocabulary, corpus ingestion and batch sampling.

The corpus model is COCO-style: each image contributes a group of up to
five reference captions.  Sentences are lowercased, punctuation is deleted
outright, and tokens are whitespace-split; there is no subword handling.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

MAX_REFERENCES = 5

_PUNCT = re.compile(r"[^\w\s]|_")


class IngestionError(ValueError):
    """Raised when a corpus file cannot be read or is malformed."""


class SamplingError(ValueError):
    """Raised when a batch request cannot be satisfied by the corpus."""


def tokenize(sentence: str) -> list[str]:
    """Lowercase, delete punctuation characters, split on whitespace."""
    return _PUNCT.sub("", sentence.lower()).split()


@dataclass
class TokenSeq:
    """Encoded sentence: BOS + token ids + EOS, optionally PAD-extended.

    ``length`` counts real positions (BOS and EOS included); every position
    at or beyond it is PAD.
    """

    ids: list[int]
    length: int

    def __post_init__(self):
        if self.length < 2 or len(self.ids) < self.length:
            raise ValueError(f"invalid TokenSeq: length={self.length}, ids={self.ids}")
        if self.ids[0] != BOS or self.ids[self.length - 1] != EOS:
            raise ValueError("TokenSeq must start with BOS and end with EOS")
        if any(t != PAD for t in self.ids[self.length:]):
            raise ValueError("positions past length must be PAD")

    def padded(self, total_len: int) -> list[int]:
        if total_len < self.length:
            raise ValueError(f"cannot pad to {total_len} < length {self.length}")
        return self.ids[: self.length] + [PAD] * (total_len - self.length)

    def core_ids(self) -> list[int]:
        """Token ids without BOS/EOS/PAD."""
        return self.ids[1: self.length - 1]

    def __eq__(self, other):
        return isinstance(other, TokenSeq) and self.ids[: self.length] == other.ids[: other.length]

    def __hash__(self):
        return hash(tuple(self.ids[: self.length]))


@dataclass
class CaptionGroup:
    """Reference captions annotated for one image."""

    image_id: str
    references: list[TokenSeq]


@dataclass
class TripletBatch:
    """Aligned (anchor, similar, negative) sentences for triplet training."""

    anchors: list[TokenSeq]
    similars: list[TokenSeq]
    negatives: list[TokenSeq]
    anchor_groups: list[str] = field(default_factory=list)
    negative_groups: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.anchors)


@dataclass
class DualBatch:
    """Anchors from distinct groups; every other anchor is a negative."""

    anchors: list[TokenSeq]
    groups: list[str]

    def __len__(self):
        return len(self.anchors)


class Vocab:
    """Token <-> id mapping with PAD/BOS/EOS/UNK pinned to ids 0-3.

    Immutable after construction; share freely.
    """

    def __init__(self, tokens: Sequence[str], min_freq: int = 1):
        self.min_freq = min_freq
        self.id_to_token: list[str] = list(SPECIAL_TOKENS) + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: Sequence[str], max_tokens: int = 20) -> TokenSeq:
        """BOS + ids + EOS; sentences longer than max_tokens are truncated
        (EOS preserved), unknown tokens map to UNK."""
        kept = list(tokens)[:max_tokens]
        ids = [BOS] + [self.token_to_id.get(t, UNK) for t in kept] + [EOS]
        return TokenSeq(ids, len(ids))

    def decode(self, seq: TokenSeq | Sequence[int]) -> list[str]:
        ids = seq.core_ids() if isinstance(seq, TokenSeq) else list(ids_strip_specials(seq))
        return [self.id_to_token[i] for i in ids]

    def save(self, path: str | Path) -> None:
        payload = {"min_freq": self.min_freq, "tokens": self.id_to_token[len(SPECIAL_TOKENS):]}
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=0) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(payload["tokens"], min_freq=int(payload["min_freq"]))


def ids_strip_specials(ids: Iterable[int]) -> Iterator[int]:
    for i in ids:
        if i == EOS:
            return
        if i not in (PAD, BOS):
            yield i


def build_vocab(corpus: Iterable[str], min_freq: int = 5) -> Vocab:
    """Vocabulary over tokenized sentences.

    Tokens seen at least min_freq times get ids in descending-frequency
    order, ties broken lexicographically; everything else encodes as UNK.
    """
    counts: Counter[str] = Counter()
    n_sentences = 0
    for sentence in corpus:
        n_sentences += 1
        counts.update(tokenize(sentence))
    if n_sentences == 0:
        raise IngestionError("empty corpus: no sentences to build a vocabulary from")
    kept = [t for t, c in counts.items() if c >= min_freq]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab(kept, min_freq=min_freq)


# corpus files ------------------------------------------------------

def _parse_json_corpus(raw: str, path: str) -> list[dict]:
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise IngestionError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, list):
        raise IngestionError(f"{path}: expected a JSON array of caption groups")
    return data


def read_corpus_sentences(path: str | Path) -> list[str]:
    """Raw sentences from a corpus file.

    JSON arrays of {"image_id", "captions"} yield every caption; any other
    file is treated as plain text, one sentence per line.
    """
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    if raw.lstrip().startswith("["):
        sentences = []
        for entry in _parse_json_corpus(raw, str(path)):
            sentences.extend(_entry_captions(entry, str(path)))
        return sentences
    return [line for line in raw.splitlines() if line.strip()]


def _entry_captions(entry: dict, path: str) -> list[str]:
    if not isinstance(entry, dict) or "captions" not in entry:
        raise IngestionError(f"{path}: each group needs an object with a 'captions' list")
    captions = entry["captions"]
    if not isinstance(captions, list) or not all(isinstance(c, str) for c in captions):
        raise IngestionError(f"{path}: 'captions' must be a list of strings")
    return captions


def load_groups(path: str | Path, vocab: Vocab, max_tokens: int = 20) -> list[CaptionGroup]:
    """Encode a corpus file into caption groups.

    Captions that tokenize to nothing are dropped; groups with more than
    five captions keep the first five; groups left empty are skipped.
    Plain-text files become one single-reference group per line.
    """
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    if raw.lstrip().startswith("["):
        entries = _parse_json_corpus(raw, str(path))
        pairs = [(str(e.get("image_id", i)), _entry_captions(e, str(path))) for i, e in enumerate(entries)]
    else:
        pairs = [(f"line-{i}", [line]) for i, line in enumerate(raw.splitlines()) if line.strip()]

    groups = []
    for image_id, captions in pairs:
        refs = []
        for caption in captions[:MAX_REFERENCES]:
            tokens = tokenize(caption)
            if tokens:
                refs.append(vocab.encode(tokens, max_tokens=max_tokens))
        if refs:
            groups.append(CaptionGroup(image_id, refs))
    if not groups:
        raise IngestionError(f"{path}: no usable caption groups")
    return groups


def load_token_groups(path: str | Path) -> list[tuple[str, list[list[str]]]]:
    """Reference groups as raw token lists (for the rule-based metrics,
    which must not depend on a trained vocabulary)."""
    path = Path(path)
    raw = path.read_text(encoding="utf-8")
    if raw.lstrip().startswith("["):
        entries = _parse_json_corpus(raw, str(path))
        pairs = [(str(e.get("image_id", i)), _entry_captions(e, str(path))) for i, e in enumerate(entries)]
    else:
        pairs = [(f"line-{i}", [line]) for i, line in enumerate(raw.splitlines()) if line.strip()]
    groups = []
    for image_id, captions in pairs:
        refs = [tokens for c in captions[:MAX_REFERENCES] if (tokens := tokenize(c))]
        if refs:
            groups.append((image_id, refs))
    if not groups:
        raise IngestionError(f"{path}: no usable caption groups")
    return groups


# sampling ----------------------------------------------------------

def sample_dual_batch(groups: Sequence[CaptionGroup], n: int, rng: np.random.Generator) -> DualBatch:
    """n anchors from n distinct groups; in-batch, all other anchors act as
    negatives for each anchor."""
    if len(groups) < 2:
        raise SamplingError(f"need at least 2 caption groups, have {len(groups)}")
    if n < 2 or n > len(groups):
        raise SamplingError(f"batch size {n} not in [2, {len(groups)}] for distinct-group sampling")
    chosen = rng.permutation(len(groups))[:n]
    anchors, names = [], []
    for gi in chosen:
        group = groups[gi]
        anchors.append(group.references[int(rng.integers(len(group.references)))])
        names.append(group.image_id)
    return DualBatch(anchors, names)


def sample_triplets(groups: Sequence[CaptionGroup], n: int, rng: np.random.Generator) -> TripletBatch:
    """n (anchor, similar, negative) triplets.

    Anchor and similar are distinct sentences from one group with >= 2
    references; the negative comes uniformly from a different group.
    """
    if len(groups) < 2:
        raise SamplingError(f"need at least 2 caption groups, have {len(groups)}")
    eligible = [i for i, g in enumerate(groups) if len(g.references) >= 2]
    if not eligible:
        raise SamplingError("no caption group has two references to form an anchor/similar pair")
    batch = TripletBatch([], [], [])
    for _ in range(n):
        gi = eligible[int(rng.integers(len(eligible)))]
        group = groups[gi]
        a_idx, s_idx = rng.choice(len(group.references), size=2, replace=False)
        gj = int(rng.integers(len(groups) - 1))
        if gj >= gi:
            gj += 1
        other = groups[gj]
        batch.anchors.append(group.references[int(a_idx)])
        batch.similars.append(group.references[int(s_idx)])
        batch.negatives.append(other.references[int(rng.integers(len(other.references)))])
        batch.anchor_groups.append(group.image_id)
        batch.negative_groups.append(other.image_id)
    return batch

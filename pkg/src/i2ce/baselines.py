"""Rule-based caption metrics: BLEU-1..4, ROUGE-L and CIDEr-D.

All three operate on token sequences (any hashable tokens; in this package,
the lowercased word strings produced by text.tokenize).  Raw scores live in
[0, 1]; presentation scaling (x100, x10) is left to callers.
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Sequence

Token = Hashable
DF_MAGIC = b"I2DF"
DF_VERSION = 1


def ngram_counts(tokens: Sequence[Token], n: int) -> Counter:
    """Multiset of the n-grams of a sentence (empty when len < n)."""
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


# BLEU ---------------------------------------------------------------

def _closest_ref_length(cand_len: int, references: Sequence[Sequence[Token]]) -> int:
    # nearest reference length; ties prefer the shorter reference
    return min((abs(len(r) - cand_len), len(r)) for r in references)[1]


def bleu(candidate: Sequence[Token], references: Sequence[Sequence[Token]],
         max_n: int = 4, smooth: bool = False) -> list[float]:
    """BLEU-1..BLEU-max_n of one candidate against its references.

    Per n, the clipped precision counts each candidate n-gram at most as
    often as its best reference does; BLEU-k is the geometric mean of
    precisions 1..k times the brevity penalty exp(1 - r/c) for c < r, with
    r the closest reference length (ties broken toward the shorter one).

    With smooth=True (sentence-level use), precisions for n >= 2 become
    (matches + 1) / (total + 1); candidates with no n-grams at all still
    score 0 for that n.
    """
    if not references:
        raise ValueError("bleu needs at least one reference")
    if not candidate:
        return [0.0] * max_n
    c = len(candidate)
    r = _closest_ref_length(c, references)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)

    precisions = []
    for n in range(1, max_n + 1):
        cand_counts = ngram_counts(candidate, n)
        total = max(0, c - n + 1)
        if total == 0:
            precisions.append(0.0)
            continue
        max_ref = Counter()
        for ref in references:
            for gram, cnt in ngram_counts(ref, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        matched = sum(min(cnt, max_ref[gram]) for gram, cnt in cand_counts.items())
        if smooth and n >= 2:
            precisions.append((matched + 1.0) / (total + 1.0))
        else:
            precisions.append(matched / total)

    scores = []
    for k in range(1, max_n + 1):
        if any(p == 0.0 for p in precisions[:k]):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in precisions[:k]) / k))
    return scores


def corpus_bleu(candidates: Sequence[Sequence[Token]],
                references: Sequence[Sequence[Sequence[Token]]],
                max_n: int = 4) -> list[float]:
    """Corpus-level BLEU: matched/total counts and lengths are pooled over
    all candidates before the geometric mean.  No smoothing."""
    if len(candidates) != len(references):
        raise ValueError("one reference list per candidate required")
    matched = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("bleu needs at least one reference")
        if not cand:
            continue
        c_len += len(cand)
        r_len += _closest_ref_length(len(cand), refs)
        for n in range(1, max_n + 1):
            cand_counts = ngram_counts(cand, n)
            max_ref = Counter()
            for ref in refs:
                for gram, cnt in ngram_counts(ref, n).items():
                    if cnt > max_ref[gram]:
                        max_ref[gram] = cnt
            matched[n - 1] += sum(min(cnt, max_ref[g]) for g, cnt in cand_counts.items())
            totals[n - 1] += max(0, len(cand) - n + 1)
    if c_len == 0:
        return [0.0] * max_n
    bp = 1.0 if c_len >= r_len else math.exp(1.0 - r_len / c_len)
    precisions = [m / t if t else 0.0 for m, t in zip(matched, totals)]
    scores = []
    for k in range(1, max_n + 1):
        if any(p == 0.0 for p in precisions[:k]):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in precisions[:k]) / k))
    return scores


# ROUGE-L ------------------------------------------------------------

def _lcs_length(a: Sequence[Token], b: Sequence[Token]) -> int:
    # rolling single-row DP
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[Token], references: Sequence[Sequence[Token]],
            beta: float = 1.2) -> float:
    """Longest-common-subsequence F-measure, recall-weighted with beta=1.2;
    multi-reference scores take the best reference."""
    if not references:
        raise ValueError("rouge_l needs at least one reference")
    if not candidate:
        return 0.0
    best = 0.0
    b2 = beta * beta
    for ref in references:
        if not ref:
            continue
        lcs = _lcs_length(candidate, ref)
        if lcs == 0:
            continue
        recall = lcs / len(ref)
        precision = lcs / len(candidate)
        best = max(best, (1 + b2) * recall * precision / (recall + b2 * precision))
    return best


# CIDEr-D ------------------------------------------------------------

@dataclass
class DfTable:
    """Document frequencies of reference n-grams; one 'document' per image
    (the union of that image's reference captions)."""

    df: dict[tuple, int]
    n_images: int
    max_n: int = 4
    corpus_hash: str = ""

    def idf(self, gram: tuple) -> float:
        return math.log(self.n_images) - math.log(max(1.0, self.df.get(gram, 0)))


def build_df_table(reference_groups: Sequence[Sequence[Sequence[Token]]],
                   max_n: int = 4, corpus_hash: str = "") -> DfTable:
    df: Counter = Counter()
    for refs in reference_groups:
        seen: set[tuple] = set()
        for ref in refs:
            for n in range(1, max_n + 1):
                seen.update(ngram_counts(ref, n))
        df.update(seen)
    return DfTable(dict(df), n_images=len(reference_groups), max_n=max_n,
                   corpus_hash=corpus_hash)


def save_df_table(table: DfTable, path: str | Path) -> None:
    payload = {
        "corpus_hash": table.corpus_hash,
        "n_images": table.n_images,
        "max_n": table.max_n,
        "df": {" ".join(map(str, gram)): cnt for gram, cnt in table.df.items()},
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(DF_MAGIC)
        f.write(struct.pack("<I", DF_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def load_df_table(path: str | Path, expect_hash: str | None = None) -> DfTable:
    raw = Path(path).read_bytes()
    if raw[:4] != DF_MAGIC:
        raise ValueError(f"{path}: not a document-frequency cache (bad magic)")
    version, = struct.unpack_from("<I", raw, 4)
    if version != DF_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    hlen, = struct.unpack_from("<I", raw, 8)
    payload = json.loads(raw[12: 12 + hlen].decode("utf-8"))
    if expect_hash is not None and payload["corpus_hash"] != expect_hash:
        raise ValueError(f"{path}: cache was built for a different corpus")
    df = {tuple(k.split(" ")): v for k, v in payload["df"].items()}
    return DfTable(df, payload["n_images"], payload["max_n"], payload["corpus_hash"])


def _tfidf_vectors(tokens: Sequence[Token], table: DfTable):
    vecs, norms = [], []
    for n in range(1, table.max_n + 1):
        counts = ngram_counts(tokens, n)
        vec = {gram: cnt * table.idf(gram) for gram, cnt in counts.items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(w * w for w in vec.values())))
    return vecs, norms


def cider(candidate: Sequence[Token], references: Sequence[Sequence[Token]],
          table: DfTable, sigma: float = 6.0, scale: float = 1.0) -> float:
    """Consensus score: per n, the average over references of the clipped
    tf-idf cosine between candidate and reference n-gram vectors, damped by
    a gaussian penalty on the length difference; the final value is the
    mean over n (optionally scaled, e.g. x10)."""
    if not references:
        raise ValueError("cider needs at least one reference")
    if table.n_images == 0 or not table.df:
        raise ValueError("empty document-frequency table")
    cand_vecs, cand_norms = _tfidf_vectors(candidate, table)
    per_n = [0.0] * table.max_n
    for ref in references:
        ref_vecs, ref_norms = _tfidf_vectors(ref, table)
        penalty = math.exp(-((len(candidate) - len(ref)) ** 2) / (2.0 * sigma * sigma))
        for n in range(table.max_n):
            dot = sum(min(w, ref_vecs[n].get(gram, 0.0)) * ref_vecs[n].get(gram, 0.0)
                      for gram, w in cand_vecs[n].items())
            if cand_norms[n] > 0 and ref_norms[n] > 0:
                per_n[n] += penalty * dot / (cand_norms[n] * ref_norms[n])
    return scale * sum(per_n) / (table.max_n * len(references))

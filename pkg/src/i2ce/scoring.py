"""Similarity scoring of candidate captions against reference groups.

A candidate's similarity to one reference is the cosine of their intrinsic
vectors; against a group of up to five references the per-reference scores
are pooled by averaging the k largest ("max1" .. "max5", default "max3").
Raw cosines are kept alongside the x100 presentation scale.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .model import Model
from .text import CaptionGroup, IngestionError, TokenSeq, Vocab, tokenize


@dataclass
class ScoreReport:
    image_id: str
    sims: list[tuple[int, float]]  # (reference index, raw cosine)
    pooled: float                  # raw cosine scale
    pooling: str

    @property
    def pooled_x100(self) -> float:
        return self.pooled * 100.0


@dataclass
class ScoreRun:
    reports: list[ScoreReport] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (image_id, reason)
    pooling: str = "max3"

    @property
    def corpus_mean(self) -> float:
        if not self.reports:
            raise ValueError("no candidates were scored")
        return float(np.mean([r.pooled for r in self.reports]))

    @property
    def corpus_mean_x100(self) -> float:
        return self.corpus_mean * 100.0


def _intrinsic(model: Model, seq: TokenSeq) -> np.ndarray:
    with ad.no_grad():
        return model.encode(seq).data


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def sim(candidate: TokenSeq, reference: TokenSeq, model: Model) -> float:
    """Cosine similarity of the two sentences' intrinsic vectors."""
    if not candidate.core_ids():
        raise ValueError("cannot score an empty candidate caption")
    return _cos(_intrinsic(model, candidate), _intrinsic(model, reference))


def parse_pooling(mode: str | int) -> int:
    if isinstance(mode, int):
        k = mode
    else:
        text = mode.strip().lower()
        if not text.startswith("max"):
            raise ValueError(f"unknown pooling mode {mode!r} (expected max1..max5)")
        k = int(text[3:])
    if not 1 <= k <= 5:
        raise ValueError(f"pooling k must be in 1..5, got {k}")
    return k


def pool(sims: Sequence[float], mode: str | int = "max3") -> float:
    """Mean of the k largest similarities; k clamps to the list length."""
    if not sims:
        raise ValueError("cannot pool an empty similarity list")
    k = min(parse_pooling(mode), len(sims))
    top = sorted(sims, reverse=True)[:k]
    return float(sum(top) / k)


def load_candidates(path: str | Path) -> list[tuple[str, str]]:
    """Candidates file: JSON array of {"image_id", "caption"}."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise IngestionError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(data, list):
        raise IngestionError(f"{path}: expected a JSON array of candidates")
    out = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or "image_id" not in entry or "caption" not in entry:
            raise IngestionError(f"{path}: candidate {i} needs 'image_id' and 'caption'")
        out.append((str(entry["image_id"]), str(entry["caption"])))
    return out


def score_candidates(candidates: Sequence[tuple[str, str]], groups: Sequence[CaptionGroup],
                     model: Model, vocab: Vocab, pooling: str | int = "max3",
                     threads: int = 1) -> ScoreRun:
    """Score every candidate against its image's reference group.

    Candidates with no reference group or with no tokens are recorded as
    skipped rather than aborting the run.
    """
    by_id = {g.image_id: g for g in groups}
    pooling_name = f"max{parse_pooling(pooling)}"
    run = ScoreRun(pooling=pooling_name)
    ref_cache: dict[str, list[np.ndarray]] = {}

    def encode_refs(group: CaptionGroup) -> list[np.ndarray]:
        if group.image_id not in ref_cache:
            ref_cache[group.image_id] = [_intrinsic(model, r) for r in group.references]
        return ref_cache[group.image_id]

    def score_one(item: tuple[str, str]):
        image_id, caption = item
        group = by_id.get(image_id)
        if group is None:
            return image_id, None, "no reference group for this image_id"
        tokens = tokenize(caption)
        if not tokens:
            return image_id, None, "candidate caption has no tokens"
        z = _intrinsic(model, vocab.encode(tokens, max_tokens=model.config.t_max))
        sims = [(i, _cos(z, zr)) for i, zr in enumerate(encode_refs(group))]
        return image_id, sims, None

    if threads > 1:
        for group in {c[0] for c in candidates}:
            if group in by_id:
                encode_refs(by_id[group])  # warm cache before parallel section
        with ThreadPoolExecutor(max_workers=threads) as pool_:
            results = list(pool_.map(score_one, candidates))
    else:
        results = [score_one(c) for c in candidates]

    for image_id, sims, reason in results:
        if reason is not None:
            run.skipped.append((image_id, reason))
        else:
            run.reports.append(ScoreReport(
                image_id, sims, pool([s for _, s in sims], pooling_name), pooling_name))
    return run


# output formats ----------------------------------------------------

def write_reports_jsonl(run: ScoreRun, path: str | Path) -> None:
    """One JSON record per candidate (errors included), then a summary."""
    lines = []
    for r in run.reports:
        lines.append(json.dumps({
            "image_id": r.image_id, "pooling": r.pooling,
            "sims": [[i, s] for i, s in r.sims],
            "pooled": r.pooled, "pooled_x100": r.pooled_x100,
        }, sort_keys=True))
    for image_id, reason in run.skipped:
        lines.append(json.dumps({"image_id": image_id, "error": reason}, sort_keys=True))
    summary = {"summary": True, "scored": len(run.reports), "skipped": len(run.skipped)}
    if run.reports:
        summary["corpus_mean"] = run.corpus_mean
        summary["corpus_mean_x100"] = run.corpus_mean_x100
    lines.append(json.dumps(summary, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_reports_tsv(run: ScoreRun, path: str | Path) -> None:
    """image_id, pooled, then the per-reference similarities s1..s5."""
    lines = ["image_id\tpooled\ts1\ts2\ts3\ts4\ts5"]
    for r in run.reports:
        sims = [repr(s) for _, s in r.sims]
        sims += [""] * (5 - len(sims))
        lines.append("\t".join([r.image_id, repr(r.pooled)] + sims))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

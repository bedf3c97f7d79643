"""Training objectives: reconstruction NLL, in-batch margin loss, triplet
loss, their weighted combination, and the cosine distance primitives they
are built on.

All losses are differentiable graph nodes; hinge kinks use subgradient 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LossConfig:
    margin: float = 0.2           # hinge margin for in-batch negatives
    alpha: float = 0.2            # triplet margin
    beta: float = 0.0             # negative-pair cosine threshold
    lambda_semantic: float = 1.0  # weight of the contrastive term
    lambda_rec: float = 1.0       # weight of the reconstruction term
    aggregation: str = "mean"     # "mean" over in-batch pairs, or "max" (hardest pair)

    def __post_init__(self):
        if self.margin <= 0 or self.alpha <= 0:
            raise ValueError("margins must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.lambda_semantic < 0 or self.lambda_rec < 0 or (
                self.lambda_semantic == 0 and self.lambda_rec == 0):
            raise ValueError("loss weights must be >= 0 and not both zero")
        if self.aggregation not in ("mean", "max"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


@dataclass
class ReconTargets:
    """Gold token ids per decoder step plus a 0/1 mask (0 = PAD, no loss)."""

    y: list[int]
    mask: list[float]

    def __post_init__(self):
        if len(self.y) != len(self.mask):
            raise ValueError("targets and mask must have equal length")


def _check_nonzero(v: np.ndarray, what: str) -> None:
    if not np.any(v):
        raise ValueError(f"cosine undefined: {what} is the zero vector")


def cosine_similarity(z_a: Tensor, z_b: Tensor) -> Tensor:
    """cos(z_a, z_b) as a scalar graph node; zero vectors are an error."""
    _check_nonzero(z_a.data, "first argument")
    _check_nonzero(z_b.data, "second argument")
    dot = ad.sum_all(z_a * z_b)
    na = ad.sum_all(z_a * z_a) ** 0.5
    nb = ad.sum_all(z_b * z_b) ** 0.5
    return dot / (na * nb)


def cosine_distance(z_a: Tensor, z_b: Tensor, y: int, beta: float = 0.0) -> Tensor:
    """Pairwise embedding distance with a pair label.

    y = +1 (similar pair):   1 - cos(z_a, z_b)
    y = -1 (negative pair):  max(0, cos(z_a, z_b) - beta)
    """
    cos = cosine_similarity(z_a, z_b)
    if y == 1:
        return 1.0 - cos
    if y == -1:
        return ad.relu(cos - beta)
    raise ValueError(f"pair label y must be +1 or -1, got {y}")


def reconstruction_loss(logits: Tensor, targets: ReconTargets) -> Tensor:
    """Mean negative log-likelihood of the gold tokens over unmasked steps.

    logits is (steps, vocab); masked (PAD) steps contribute nothing and the
    sum is divided by the number of real tokens, so the value is comparable
    across batch sizes and lengths.
    """
    if logits.ndim != 2 or logits.shape[0] != len(targets.y):
        raise ValueError(f"logits {logits.shape} do not match {len(targets.y)} target steps")
    mask = np.asarray(targets.mask, dtype=np.float64)
    count = float(mask.sum())
    if count == 0:
        raise ValueError("all target positions are masked")
    picked = ad.take_per_row(ad.log_softmax(logits), targets.y)
    return -(ad.sum_all(picked * Tensor(mask))) / count


def masked_nll_sum(logits: Tensor, gold: np.ndarray, mask: np.ndarray) -> tuple[Tensor, float]:
    """Summed NLL of one decoding step over a batch: logits (B, vocab),
    gold ids (B,), mask (B,).  Returns (sum node, number of real tokens)."""
    picked = ad.take_per_row(ad.log_softmax(logits), gold)
    return -(ad.sum_all(picked * Tensor(mask))), float(mask.sum())


def _as_matrix(embeddings) -> Tensor:
    if isinstance(embeddings, Tensor):
        if embeddings.ndim != 2:
            raise ValueError(f"expected an (N, dim) embedding matrix, got {embeddings.shape}")
        return embeddings
    return ad.stack_rows(list(embeddings))


def _row_normalize(z: Tensor, what: str) -> Tensor:
    sq = ad.sum_rows(z * z)
    if np.any(sq.data == 0.0):
        raise ValueError(f"cosine undefined: {what} contains a zero vector")
    return ad.scale_rows(z, sq ** -0.5)


def margin_loss(anchors, cfg: LossConfig) -> Tensor:
    """In-batch contrastive hinge over anchors drawn from distinct groups.

    Every ordered pair (i, j != i) is a negative pair; each contributes
    [margin - d(z_i, z_j)]+ with d the cosine distance 1 - cos, so pairs
    closer than the margin are pushed apart.  Aggregation is the mean over
    all ordered pairs, or the hardest pair under "max".
    """
    z = _as_matrix(anchors)
    n = z.shape[0]
    if n < 2:
        raise ValueError("margin loss needs at least two anchors")
    zn = _row_normalize(z, "anchor batch")
    cos = zn @ ad.transpose(zn)
    hinge = ad.relu(cfg.margin - (1.0 - cos))
    off_diag = Tensor(1.0 - np.eye(n))
    terms = hinge * off_diag
    if cfg.aggregation == "max":
        return ad.max_all(terms)
    return ad.sum_all(terms) / float(n * (n - 1))


def _row_cosine(a: Tensor, b: Tensor) -> Tensor:
    return ad.sum_rows(_row_normalize(a, "left embeddings") * _row_normalize(b, "right embeddings"))


def triplet_loss(anchors, similars, negatives, cfg: LossConfig) -> Tensor:
    """Mean over triplets of [alpha + d(a, s) - d(a, n)]+ with d = 1 - cos:
    the anchor must sit closer to its similar sentence than to the negative
    by at least alpha."""
    za, zs, zn = _as_matrix(anchors), _as_matrix(similars), _as_matrix(negatives)
    if not (za.shape == zs.shape == zn.shape):
        raise ValueError(f"triplet embeddings misaligned: {za.shape}, {zs.shape}, {zn.shape}")
    d_as = 1.0 - _row_cosine(za, zs)
    d_an = 1.0 - _row_cosine(za, zn)
    terms = ad.relu(cfg.alpha + d_as - d_an)
    return ad.sum_all(terms) / float(za.shape[0])


def overall_loss(semantic: Tensor, rec: Tensor, cfg: LossConfig) -> Tensor:
    """Weighted sum of the contrastive and reconstruction terms."""
    return cfg.lambda_semantic * semantic + cfg.lambda_rec * rec

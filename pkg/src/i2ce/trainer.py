"""Adam training of the auto-encoder in its three branch configurations,
plus checkpoint serialization.

Branches: "single" optimizes reconstruction only; "dual" adds the in-batch
margin loss over anchors from distinct caption groups; "triple" adds the
triplet loss over (anchor, similar, negative) samples.  Everything is
deterministic given (seed, corpus, configs).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import objectives as obj
from .autodiff import Tensor
from .model import Model, ModelConfig
from .text import CaptionGroup, SamplingError, TokenSeq, TripletBatch, Vocab, sample_dual_batch

CHECKPOINT_MAGIC = b"I2CE"
CHECKPOINT_VERSION = 1

BRANCHES = ("single", "dual", "triple")


class OptimizerError(RuntimeError):
    """Raised when a gradient goes non-finite."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries a checkpoint of the last good epoch."""

    def __init__(self, message: str, checkpoint: "Checkpoint"):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig:
    branch: str = "dual"
    lr: float = 5e-4
    batch_size: int = 128
    epochs: int = 30
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got {self.branch!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        min_batch = 2 if self.branch in ("dual", "triple") else 1
        if self.batch_size < min_batch:
            raise ValueError(f"batch_size must be >= {min_batch} for branch {self.branch!r}")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Named, independent generators all derived from one seed."""
    names = ("init", "shuffle", "sample")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


# Adam --------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; mutates state moments, returns the
    updated parameter arrays."""
    state.t += 1
    updated = {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient in parameter group {name!r}")
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = state.m[name] / (1.0 - beta1 ** state.t)
        v_hat = state.v[name] / (1.0 - beta2 ** state.t)
        updated[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return updated


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm;
    returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


class Adam:
    """Adam over a model's named parameter tensors, with global-norm
    gradient clipping folded into each step."""

    def __init__(self, params: Sequence[tuple[str, Tensor]], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float = 0.0):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.grad_clip = grad_clip
        self.state = AdamState.like({n: t.data for n, t in self.params})

    def step(self) -> None:
        grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for n, t in self.params}
        if self.grad_clip > 0:
            clip_gradients(grads, self.grad_clip)
        updated = adam_step({n: t.data for n, t in self.params}, grads, self.state,
                            self.lr, self.beta1, self.beta2, self.eps)
        for name, t in self.params:
            t.data = updated[name]
            if not np.all(np.isfinite(t.data)):
                raise OptimizerError(f"non-finite values in parameter group {name!r} after update")

    def zero_grad(self) -> None:
        for _, t in self.params:
            t.zero_grad()


# checkpoints -------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab: Vocab
    params: dict[str, np.ndarray]  # insertion order == on-disk block order
    train_config: TrainConfig
    loss_config: obj.LossConfig
    epoch: int
    rng_state: dict
    version: int = CHECKPOINT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    header = {
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config),
        "loss_config": asdict(ckpt.loss_config),
        "vocab": {"min_freq": ckpt.vocab.min_freq,
                  "tokens": ckpt.vocab.id_to_token[4:]},
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "params": [{"name": n, "shape": list(a.shape)} for n, a in ckpt.params.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", ckpt.version))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for arr in ckpt.params.values():
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hlen, = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12: 12 + hlen].decode("utf-8"))
    offset = 12 + hlen
    params: dict[str, np.ndarray] = {}
    for meta in header["params"]:
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[meta["name"]] = arr.astype(np.float64)
        offset += count * 8
    return Checkpoint(
        model_config=ModelConfig(**header["model_config"]),
        vocab=Vocab(header["vocab"]["tokens"], min_freq=header["vocab"]["min_freq"]),
        params=params,
        train_config=TrainConfig(**header["train_config"]),
        loss_config=obj.LossConfig(**header["loss_config"]),
        epoch=header["epoch"],
        rng_state=header["rng_state"],
        version=version,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    model = Model.init(ckpt.model_config, np.random.default_rng(0))
    model.load_state(ckpt.params)
    return model


# training loop -----------------------------------------------------

@dataclass
class LossLogRow:
    epoch: int
    step: int
    rec_loss: float
    semantic_loss: float
    total: float


def write_loss_log(rows: Sequence[LossLogRow], path: str | Path) -> None:
    lines = ["epoch,step,rec_loss,semantic_loss,total"]
    lines += [f"{r.epoch},{r.step},{r.rec_loss:.17g},{r.semantic_loss:.17g},{r.total:.17g}"
              for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _batch_reconstruction(model: Model, z: Tensor, seqs: Sequence[TokenSeq]
                          ) -> tuple[Tensor, float]:
    total, count = None, 0.0
    for logits, gold, mask in model.teacher_forced_steps(z, seqs):
        part, n = obj.masked_nll_sum(logits, gold, mask)
        total = part if total is None else total + part
        count += n
    return total, count


def _forward_single(model: Model, seqs, cfg: obj.LossConfig):
    z = model.encode_batch(seqs)
    rec_sum, count = _batch_reconstruction(model, z, seqs)
    return rec_sum / count, Tensor(0.0)


def _forward_dual(model: Model, batch, cfg: obj.LossConfig):
    z = model.encode_batch(batch.anchors)
    rec_sum, count = _batch_reconstruction(model, z, batch.anchors)
    return rec_sum / count, obj.margin_loss(z, cfg)


def _forward_triple(model: Model, batch, cfg: obj.LossConfig):
    za = model.encode_batch(batch.anchors)
    zs = model.encode_batch(batch.similars)
    zn = model.encode_batch(batch.negatives)
    rec_sum, count = None, 0.0
    for z, seqs in ((za, batch.anchors), (zs, batch.similars), (zn, batch.negatives)):
        part, n = _batch_reconstruction(model, z, seqs)
        rec_sum = part if rec_sum is None else rec_sum + part
        count += n
    return rec_sum / count, obj.triplet_loss(za, zs, zn, cfg)


def _triplet_chunk(groups, chunk_idx, rng) -> TripletBatch:
    batch = TripletBatch([], [], [])
    for gi in chunk_idx:
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


def train(groups: Sequence[CaptionGroup], vocab: Vocab, model_cfg: ModelConfig,
          train_cfg: TrainConfig, loss_cfg: obj.LossConfig,
          ) -> tuple[Checkpoint, list[LossLogRow]]:
    """Train a model, returning the final checkpoint and the loss log.

    Epochs walk a fresh whole-corpus permutation in batch_size chunks.  If
    the loss ever goes non-finite, training aborts with TrainingDiverged
    carrying a checkpoint of the last completed epoch.
    """
    streams = rng_streams(train_cfg.seed)
    model = Model.init(model_cfg, streams["init"])
    optimizer = Adam(model.parameters(), train_cfg.lr, train_cfg.beta1,
                     train_cfg.beta2, train_cfg.eps, grad_clip=train_cfg.grad_clip)

    if train_cfg.branch == "single":
        units: list = [ref for g in groups for ref in g.references]
    elif train_cfg.branch == "dual":
        if len(groups) < 2:
            raise SamplingError("dual branch needs captions from at least 2 distinct groups")
        units = list(groups)
    else:
        eligible = [g for g in groups if len(g.references) >= 2]
        if len(groups) < 2 or not eligible:
            raise SamplingError("triple branch needs >= 2 groups and a group with 2 references")
        units = [i for i, g in enumerate(groups) if len(g.references) >= 2]

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint(model_cfg, vocab, model.state_arrays(), train_cfg, loss_cfg,
                          epoch=epoch,
                          rng_state={name: gen.bit_generator.state
                                     for name, gen in streams.items()})

    last_good = snapshot(0)
    rows: list[LossLogRow] = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = streams["shuffle"].permutation(len(units))
        step = 0
        for start in range(0, len(order), train_cfg.batch_size):
            chunk = order[start: start + train_cfg.batch_size]
            if train_cfg.branch == "single":
                seqs = [units[i] for i in chunk]
                rec, sem = _forward_single(model, seqs, loss_cfg)
            elif train_cfg.branch == "dual":
                if len(chunk) < 2:
                    continue
                batch = sample_dual_batch([units[i] for i in chunk], len(chunk), streams["sample"])
                rec, sem = _forward_dual(model, batch, loss_cfg)
            else:
                batch = _triplet_chunk(groups, [units[i] for i in chunk], streams["sample"])
                rec, sem = _forward_triple(model, batch, loss_cfg)

            total = obj.overall_loss(sem, rec, loss_cfg)
            if not np.isfinite(total.item()):
                raise TrainingDiverged(
                    f"loss went non-finite at epoch {epoch}, step {step}", last_good)
            ad.backward(total)
            model.embedding.mask_pad_grad()
            optimizer.step()
            optimizer.zero_grad()
            step += 1
            rows.append(LossLogRow(epoch, step, rec.item(), sem.item(), total.item()))
        last_good = snapshot(epoch)
    return last_good, rows


def reconstruction_accuracy(model: Model, seqs: Sequence[TokenSeq]) -> float:
    """Fraction of sentences the model reproduces exactly under greedy
    decoding of their own encodings."""
    hits = 0
    for seq in seqs:
        with ad.no_grad():
            z = model.encode(seq)
        out = model.decode_greedy(z, max_len=model.config.t_max + 4)
        hits += out.core_ids() == seq.core_ids()
    return hits / len(seqs)

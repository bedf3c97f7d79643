"""GRU sentence auto-encoder.

The encoder reads word embeddings token by token and its hidden state at the
last real token is the sentence's intrinsic vector.  The decoder starts from
that vector and, under teacher forcing, produces one vocabulary logit row per
target position.  Encoder and decoder have separate recurrent weights but
share the embedding table.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .text import BOS, EOS, PAD, TokenSeq

# the encoder's final hidden state, used as the sentence representation
IntrinsicVector = Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 256
    hidden_dim: int = 512
    t_max: int = 20  # maximum content tokens per sentence (BOS/EOS extra)

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "t_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ModelConfig.{name} must be positive")


@dataclass
class GruParams:
    """The nine weight groups of one GRU: reset gate r, refresh gate z and
    candidate state, each with input weights (hidden x input), recurrent
    weights (hidden x hidden) and a bias."""

    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    def groups(self) -> Iterator[tuple[str, Tensor]]:
        for name in ("w_r", "u_r", "b_r", "w_z", "u_z", "b_z", "w_h", "u_h", "b_h"):
            yield name, getattr(self, name)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GruParams":
        k = 1.0 / np.sqrt(hidden_dim)

        def u(*shape):
            return Tensor(rng.uniform(-k, k, size=shape), requires_grad=True)

        return cls(
            w_r=u(hidden_dim, input_dim), u_r=u(hidden_dim, hidden_dim), b_r=u(hidden_dim),
            w_z=u(hidden_dim, input_dim), u_z=u(hidden_dim, hidden_dim), b_z=u(hidden_dim),
            w_h=u(hidden_dim, input_dim), u_h=u(hidden_dim, hidden_dim), b_h=u(hidden_dim),
        )


class EmbeddingTable:
    """vocab_size x embed_dim lookup table shared by encoder and decoder.

    Row 0 (PAD) never receives gradient updates and PAD positions never
    contribute to the loss.
    """

    def __init__(self, matrix: Tensor):
        self.matrix = matrix

    @classmethod
    def init(cls, vocab_size: int, embed_dim: int, hidden_dim: int,
             rng: np.random.Generator) -> "EmbeddingTable":
        k = 1.0 / np.sqrt(hidden_dim)
        return cls(Tensor(rng.uniform(-k, k, size=(vocab_size, embed_dim)), requires_grad=True))

    def lookup(self, ids) -> Tensor:
        return ad.take_rows(self.matrix, np.asarray(ids, dtype=np.intp))

    def lookup_one(self, token_id: int) -> Tensor:
        return ad.reshape(self.lookup([token_id]), (self.matrix.shape[1],))

    def mask_pad_grad(self) -> None:
        if self.matrix.grad is not None:
            self.matrix.grad[PAD, :] = 0.0


def gru_step(x_t: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One GRU update:

        r = sigmoid(W_r x + U_r h + b_r)
        z = sigmoid(W_z x + U_z h + b_z)
        h* = tanh(W_h x + U_h (r * h) + b_h)
        h' = (1 - z) * h + z * h*

    so a closed refresh gate (z -> 0) keeps the previous state.  Accepts a
    single step (x (embed,), h (hidden,)) or a batch (x (B, embed),
    h (B, hidden)).
    """
    if x_t.ndim == 1 and h_prev.ndim == 1:
        r = ad.sigmoid(p.w_r @ x_t + p.u_r @ h_prev + p.b_r)
        z = ad.sigmoid(p.w_z @ x_t + p.u_z @ h_prev + p.b_z)
        h_star = ad.tanh(p.w_h @ x_t + p.u_h @ (r * h_prev) + p.b_h)
    elif x_t.ndim == 2 and h_prev.ndim == 2:
        r = ad.sigmoid(ad.add_bias(x_t @ ad.transpose(p.w_r) + h_prev @ ad.transpose(p.u_r), p.b_r))
        z = ad.sigmoid(ad.add_bias(x_t @ ad.transpose(p.w_z) + h_prev @ ad.transpose(p.u_z), p.b_z))
        h_star = ad.tanh(ad.add_bias(x_t @ ad.transpose(p.w_h) + (r * h_prev) @ ad.transpose(p.u_h), p.b_h))
    else:
        raise ValueError(f"gru_step: incompatible shapes x={x_t.shape}, h={h_prev.shape}")
    return (1.0 - z) * h_prev + z * h_star


class Model:
    """Embedding + encoder GRU + decoder GRU + output projection."""

    def __init__(self, config: ModelConfig, embedding: EmbeddingTable,
                 encoder: GruParams, decoder: GruParams, out_w: Tensor, out_b: Tensor):
        self.config = config
        self.embedding = embedding
        self.encoder = encoder
        self.decoder = decoder
        self.out_w = out_w  # (vocab, hidden)
        self.out_b = out_b  # (vocab,)

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "Model":
        k = 1.0 / np.sqrt(config.hidden_dim)
        return cls(
            config,
            EmbeddingTable.init(config.vocab_size, config.embed_dim, config.hidden_dim, rng),
            GruParams.init(config.embed_dim, config.hidden_dim, rng),
            GruParams.init(config.embed_dim, config.hidden_dim, rng),
            out_w=Tensor(rng.uniform(-k, k, size=(config.vocab_size, config.hidden_dim)), requires_grad=True),
            out_b=Tensor(rng.uniform(-k, k, size=config.vocab_size), requires_grad=True),
        )

    def parameters(self) -> list[tuple[str, Tensor]]:
        """All trainable tensors in the fixed checkpoint order."""
        params = [("embedding", self.embedding.matrix)]
        params += [(f"encoder.{n}", t) for n, t in self.encoder.groups()]
        params += [(f"decoder.{n}", t) for n, t in self.decoder.groups()]
        params += [("out_w", self.out_w), ("out_b", self.out_b)]
        return params

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.parameters():
            src = arrays[name]
            if src.shape != t.data.shape:
                raise ValueError(f"parameter {name}: shape {src.shape} != expected {t.data.shape}")
            t.data = np.asarray(src, dtype=np.float64).copy()

    # encoding -------------------------------------------------------

    def encode(self, seq: TokenSeq) -> IntrinsicVector:
        """Run the encoder over BOS..EOS; the hidden state after the last
        real token is the intrinsic vector.  PAD is never consumed."""
        if seq.length < 2:
            raise ValueError("cannot encode an empty sequence")
        h = Tensor(np.zeros(self.config.hidden_dim))
        for t in range(seq.length):
            x = self.embedding.lookup_one(seq.ids[t])
            h = gru_step(x, h, self.encoder)
        return h

    def encode_batch(self, seqs: Sequence[TokenSeq]) -> Tensor:
        """Encode many sentences at once; returns (B, hidden).

        The recurrence is masked: rows whose sentence has ended carry their
        hidden state forward unchanged, so results match one-by-one
        encoding and are exactly invariant to trailing PAD.
        """
        if not seqs:
            raise ValueError("cannot encode an empty batch")
        lengths = np.array([s.length for s in seqs])
        t_total = int(lengths.max())
        ids = np.stack([s.padded(t_total) for s in seqs])
        h = Tensor(np.zeros((len(seqs), self.config.hidden_dim)))
        for t in range(t_total):
            x = self.embedding.lookup(ids[:, t])
            h_new = gru_step(x, h, self.encoder)
            active = (lengths > t).astype(np.float64)
            if active.all():
                h = h_new
            else:
                h = ad.scale_rows(h_new, Tensor(active)) + ad.scale_rows(h, Tensor(1.0 - active))
        return h

    # decoding -------------------------------------------------------

    def _project(self, h: Tensor) -> Tensor:
        if h.ndim == 1:
            return self.out_w @ h + self.out_b
        return ad.add_bias(h @ ad.transpose(self.out_w), self.out_b)

    def decode_teacher_forced(self, z: IntrinsicVector, target: TokenSeq) -> Tensor:
        """Teacher-forced logits for one sentence: the decoder starts from z,
        consumes the gold token at each step, and predicts the next one.
        Returns (length - 1, vocab)."""
        h = z
        rows = []
        for t in range(1, target.length):
            x = self.embedding.lookup_one(target.ids[t - 1])
            h = gru_step(x, h, self.decoder)
            rows.append(self._project(h))
        return ad.stack_rows(rows)

    def teacher_forced_steps(self, z_batch: Tensor, seqs: Sequence[TokenSeq]
                             ) -> Iterator[tuple[Tensor, np.ndarray, np.ndarray]]:
        """Batched teacher forcing: yields (logits (B, vocab), gold ids (B,),
        mask (B,)) per step, mask 0 where the sentence has already ended."""
        lengths = np.array([s.length for s in seqs])
        t_total = int(lengths.max())
        ids = np.stack([s.padded(t_total) for s in seqs])
        h = z_batch
        for t in range(1, t_total):
            x = self.embedding.lookup(ids[:, t - 1])
            h = gru_step(x, h, self.decoder)
            mask = (lengths > t).astype(np.float64)
            yield self._project(h), ids[:, t], mask

    def decode_greedy(self, z: IntrinsicVector, max_len: int = 24) -> TokenSeq:
        """Autoregressive argmax decoding until EOS or max_len tokens; ties
        pick the lowest id.  If the budget runs out, EOS is appended so the
        result is a well-formed sequence."""
        with ad.no_grad():
            h = Tensor(z.data)
            prev = BOS
            out: list[int] = []
            for _ in range(max_len):
                x = self.embedding.lookup_one(prev)
                h = gru_step(x, h, self.decoder)
                tok = int(np.argmax(self._project(h).data))
                out.append(tok)
                prev = tok
                if tok == EOS:
                    break
        if not out or out[-1] != EOS:
            out.append(EOS)
        ids = [BOS] + out
        return TokenSeq(ids, len(ids))

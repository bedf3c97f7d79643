"""Intrinsic sentence-embedding caption evaluation."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_grad  # noqa: F401
from .model import Model, ModelConfig  # noqa: F401
from .objectives import LossConfig  # noqa: F401
from .text import Vocab, build_vocab, load_groups, tokenize  # noqa: F401
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train  # noqa: F401

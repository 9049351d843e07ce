"""PairConnect: an attention-free sequence model built from hashed pairwise embedding tables."""

from .layers import ModelConfig
from .models import forward, init_model

__all__ = ["ModelConfig", "forward", "init_model"]

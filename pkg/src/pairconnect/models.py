"""Dispatch between the two model kinds."""

from __future__ import annotations

from typing import Union

from . import numerics as nx
from .attention import TransformerModel, init_transformer, transformer_forward
from .layers import ModelConfig, bind
from .pairmodel import PairConnectModel, init_pairconnect, model_forward

Model = Union[PairConnectModel, TransformerModel]


def init_model(cfg: ModelConfig) -> Model:
    if cfg.kind == "pairconnect":
        return init_pairconnect(cfg)
    return init_transformer(cfg)


def forward(model: Model, tokens, training: bool = False, rng=None, tape: nx.Tape | None = None,
            P=None) -> nx.Var:
    if P is None:
        P = bind(model.params, tape)
    if isinstance(model, PairConnectModel):
        return model_forward(tokens, model, training, rng, P=P)
    return transformer_forward(tokens, model, training, rng, P=P)

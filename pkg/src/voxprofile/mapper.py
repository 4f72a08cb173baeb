"""Prefix mapper: one 1024-d speaker embedding -> 40 prefix vectors of width 768.

Two trainable variants share the output contract:

* transformer: FC 1024 -> 30720, ReLU, reshape to 40 x 768, learned positions,
  8 pre-LN self-attention layers. Attention probabilities are exportable.
* mlp: FC 1024 -> hidden, Tanh, FC hidden -> 30720, reshape to 40 x 768.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .blocks import TransformerBlock, seeded_init_
from .errors import ParameterError, ShapeError, UnsupportedVariantError

PREFIX_LEN = 40
PREFIX_WIDTH = 768
EXPANSION_WIDTH = PREFIX_LEN * PREFIX_WIDTH  # 30720


@dataclass
class MapperConfig:
    variant: str = "transformer"
    transformer_layers: int = 8
    heads: int = 8
    hidden_width: int = PREFIX_WIDTH
    prefix_len: int = PREFIX_LEN
    expansion_width: int = EXPANSION_WIDTH
    mlp_hidden: int = 15872  # midpoint of 1024 and 30720
    embedding_dim: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("transformer", "mlp"):
            raise ParameterError(f"unknown mapper variant '{self.variant}'")
        if self.expansion_width != self.prefix_len * self.hidden_width:
            raise ParameterError(
                f"expansion_width {self.expansion_width} != "
                f"{self.prefix_len} x {self.hidden_width}"
            )


class PrefixMapper(nn.Module):
    """Common checks and reshaping for both variants."""

    def __init__(self, cfg: MapperConfig):
        super().__init__()
        self.cfg = cfg

    def _check_input(self, emb: torch.Tensor):
        squeeze = emb.dim() == 1
        if squeeze:
            emb = emb.unsqueeze(0)
        if emb.dim() != 2 or emb.shape[-1] != self.cfg.embedding_dim:
            raise ShapeError(
                f"expected (*, {self.cfg.embedding_dim}) embedding, got {tuple(emb.shape)}"
            )
        return emb, squeeze


class TransformerMapper(PrefixMapper):
    def __init__(self, cfg: MapperConfig):
        super().__init__(cfg)
        self.expand = nn.Linear(cfg.embedding_dim, cfg.expansion_width)
        self.pos_embedding = nn.Parameter(torch.zeros(cfg.prefix_len, cfg.hidden_width))
        self.layers = nn.ModuleList(
            TransformerBlock(cfg.hidden_width, cfg.heads, 4 * cfg.hidden_width)
            for _ in range(cfg.transformer_layers)
        )
        self.ln_f = nn.LayerNorm(cfg.hidden_width)
        seeded_init_(self, cfg.seed)

    def forward(self, emb: torch.Tensor, return_attention: bool = False):
        emb, squeeze = self._check_input(emb)
        x = torch.relu(self.expand(emb))
        x = x.view(-1, self.cfg.prefix_len, self.cfg.hidden_width)
        x = x + self.pos_embedding
        attentions = []
        for layer in self.layers:
            x, attn = layer(x, return_attention=return_attention)
            if return_attention:
                attentions.append(attn)
        x = self.ln_f(x)
        if squeeze:
            x = x.squeeze(0)
            attentions = [a.squeeze(0) for a in attentions]
        return (x, attentions) if return_attention else x


class MlpMapper(PrefixMapper):
    def __init__(self, cfg: MapperConfig):
        super().__init__(cfg)
        self.net = nn.Sequential(
            nn.Linear(cfg.embedding_dim, cfg.mlp_hidden),
            nn.Tanh(),
            nn.Linear(cfg.mlp_hidden, cfg.expansion_width),
        )
        seeded_init_(self, cfg.seed)

    def forward(self, emb: torch.Tensor):
        emb, squeeze = self._check_input(emb)
        x = self.net(emb).view(-1, self.cfg.prefix_len, self.cfg.hidden_width)
        return x.squeeze(0) if squeeze else x


def build_mapper(cfg: MapperConfig) -> PrefixMapper:
    if cfg.variant == "transformer":
        return TransformerMapper(cfg)
    return MlpMapper(cfg)


def map_embedding(emb, mapper: PrefixMapper) -> torch.Tensor:
    """Map a numpy or torch embedding to the (40, 768) prefix sequence."""
    if isinstance(emb, np.ndarray):
        emb = torch.from_numpy(emb).to(next(mapper.parameters()).dtype)
    with torch.no_grad():
        return mapper(emb)


def attention_maps(emb, mapper: PrefixMapper, per_head: bool = False):
    """Row-stochastic attention matrices from the transformer variant.

    Returns one (prefix_len, prefix_len) matrix per layer, head-averaged by
    default, or (heads, prefix_len, prefix_len) when per_head is set.
    """
    if not isinstance(mapper, TransformerMapper):
        raise UnsupportedVariantError("attention maps require the transformer variant")
    if isinstance(emb, np.ndarray):
        emb = torch.from_numpy(emb).to(next(mapper.parameters()).dtype)
    if emb.dim() != 1:
        raise ShapeError(f"attention_maps expects a single embedding, got {tuple(emb.shape)}")
    with torch.no_grad():
        _, attentions = mapper(emb, return_attention=True)
    maps = []
    for attn in attentions:  # (heads, T, T) after squeeze
        maps.append(attn.numpy() if per_head else attn.mean(dim=0).numpy())
    return maps

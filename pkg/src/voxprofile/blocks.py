"""Transformer building blocks shared by the prefix mapper and the tiny LM.

Pre-layer-norm blocks with an explicit softmax so attention probabilities
can be captured without forward hooks.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int, causal: bool = False):
        super().__init__()
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.causal = causal
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        b, t, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (b, t, self.heads, self.width // self.heads)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(q.shape[-1])
        if self.causal:
            mask = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
            scores = scores.masked_fill(mask, float("-inf"))
        attn = F.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, self.width)
        out = self.proj(out)
        return (out, attn) if return_attention else (out, None)


class TransformerBlock(nn.Module):
    """Pre-LN block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, width: int, heads: int, ff_width: int, causal: bool = False):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = MultiHeadSelfAttention(width, heads, causal=causal)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, ff_width),
            nn.GELU(),
            nn.Linear(ff_width, width),
        )

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        attn_out, attn = self.attn(self.ln1(x), return_attention=return_attention)
        x = x + attn_out
        x = x + self.mlp(self.ln2(x))
        return x, attn


def seeded_init_(module: nn.Module, seed: int) -> None:
    """Re-initialize every parameter from one explicit generator.

    Linear weights and biases get scaled-uniform fan-in init; embeddings and
    positional tables get N(0, 0.02); LayerNorm stays at (1, 0).
    """
    gen = torch.Generator().manual_seed(seed)
    for mod in module.modules():
        if isinstance(mod, nn.Linear):
            bound = 1.0 / math.sqrt(mod.in_features)
            with torch.no_grad():
                mod.weight.uniform_(-bound, bound, generator=gen)
                if mod.bias is not None:
                    mod.bias.uniform_(-bound, bound, generator=gen)
        elif isinstance(mod, nn.Embedding):
            with torch.no_grad():
                mod.weight.normal_(0.0, 0.02, generator=gen)
        elif isinstance(mod, nn.LayerNorm):
            with torch.no_grad():
                mod.weight.fill_(1.0)
                mod.bias.zero_()
    for name, param in module.named_parameters(recurse=True):
        if "pos_embedding" in name:
            with torch.no_grad():
                param.normal_(0.0, 0.02, generator=gen)

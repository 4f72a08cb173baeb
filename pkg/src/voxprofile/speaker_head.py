"""Linear speaker classifier over the first audio prefix vector.

A single linear layer + softmax over the training-set speakers. Because the
classifier is linear, minimizing its cross-entropy forces the first prefix
vector to cluster by speaker. Train-time only; unseen speakers at inference
simply bypass it.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .blocks import seeded_init_
from .errors import ShapeError
from .mapper import PREFIX_WIDTH

LOG_CLAMP = 1e-12


class SpeakerHead(nn.Module):
    def __init__(self, num_speakers: int, width: int = PREFIX_WIDTH, seed: int = 0):
        super().__init__()
        if num_speakers < 2:
            raise ShapeError(f"need at least 2 speakers, got {num_speakers}")
        self.num_speakers = num_speakers
        self.linear = nn.Linear(width, num_speakers)
        seeded_init_(self, seed)

    def logits(self, first_prefix: torch.Tensor) -> torch.Tensor:
        if first_prefix.shape[-1] != self.linear.in_features:
            raise ShapeError(
                f"expected width {self.linear.in_features}, got {first_prefix.shape[-1]}"
            )
        return self.linear(first_prefix)

    def forward(self, first_prefix: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(first_prefix), dim=-1)


def classify_speaker(first_prefix, head: SpeakerHead) -> torch.Tensor:
    """Probability vector over the training speakers."""
    if not isinstance(first_prefix, torch.Tensor):
        first_prefix = torch.as_tensor(first_prefix, dtype=next(head.parameters()).dtype)
    with torch.no_grad():
        return head(first_prefix)


def fit_linear_probe(x_train, y_train, x_eval, y_eval, steps: int = 300,
                     lr: float = 0.05, seed: int = 0) -> float:
    """Fit a fresh softmax-linear probe on representation vectors and return
    held-out accuracy in [0, 1]. Full-batch Adam, deterministic under seed."""
    x_train = torch.as_tensor(np.asarray(x_train), dtype=torch.float32)
    x_eval = torch.as_tensor(np.asarray(x_eval), dtype=torch.float32)
    y_train = torch.as_tensor(np.asarray(y_train), dtype=torch.long)
    y_eval = torch.as_tensor(np.asarray(y_eval), dtype=torch.long)
    classes = int(max(int(y_train.max()), int(y_eval.max()))) + 1
    mean, std = x_train.mean(dim=0), x_train.std(dim=0).clamp(min=1e-6)
    x_train = (x_train - mean) / std
    x_eval = (x_eval - mean) / std
    probe = SpeakerHead(classes, width=x_train.shape[1], seed=seed)
    optimizer = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(steps):
        optimizer.zero_grad()
        loss = torch.nn.functional.cross_entropy(probe.logits(x_train), y_train)
        loss.backward()
        optimizer.step()
    with torch.no_grad():
        pred = probe.logits(x_eval).argmax(dim=1)
    return float((pred == y_eval).float().mean())


def ce_loss(y: torch.Tensor, y_hat: torch.Tensor) -> torch.Tensor:
    """Cross entropy -sum_i y_i log(y_hat_i) with a clamped log.

    y is one-hot (or a batch of one-hots); y_hat the predicted probabilities.
    """
    y = torch.as_tensor(y)
    y_hat = torch.as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeError(f"label shape {tuple(y.shape)} != prediction shape {tuple(y_hat.shape)}")
    per_example = -(y * torch.log(torch.clamp(y_hat, min=LOG_CLAMP))).sum(dim=-1)
    return per_example.mean() if per_example.dim() else per_example

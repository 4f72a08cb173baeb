"""Causal language model core.

The prefix (40 audio vectors + 10 embedded prompt tokens = 50 positions) is
injected directly as input embeddings; description tokens follow. Position
embeddings are added uniformly over the whole assembled sequence inside the
backbone, so prefix assembly itself stays backbone-agnostic.

Backbones register by name: ``tiny`` is a self-contained GPT-style model
(2 pre-LN layers, width 768) trained from scratch; ``hf:<model>`` adapts a
pretrained causal LM via ``transformers`` when its weights are available
locally.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import TransformerBlock, seeded_init_
from .errors import DataError, ParameterError, ShapeError
from .mapper import PREFIX_LEN, PREFIX_WIDTH

log = logging.getLogger(__name__)

PROMPT_LEN = 10
ASSEMBLED_LEN = PREFIX_LEN + PROMPT_LEN  # 50


@dataclass
class LMConfig:
    vocab_size: int = 1500
    width: int = PREFIX_WIDTH
    layers: int = 2
    heads: int = 8
    ff_width: int = 2 * PREFIX_WIDTH
    max_positions: int = 160
    seed: int = 0


class LMBackbone(nn.Module):
    """Interface every backbone satisfies; width must match the mapper."""

    width: int
    vocab_size: int
    pad_id: int
    eos_id: int

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def logits_from_embeds(self, embeds: torch.Tensor) -> torch.Tensor:
        """Full-sequence logits for a (B, T, width) embedding sequence."""
        raise NotImplementedError

    @property
    def trainable(self) -> bool:
        return any(p.requires_grad for p in self.parameters())


class TinyCausalLM(LMBackbone):
    def __init__(self, cfg: LMConfig, pad_id: int, eos_id: int):
        super().__init__()
        self.cfg = cfg
        self.width = cfg.width
        self.vocab_size = cfg.vocab_size
        self.pad_id = int(pad_id)
        self.eos_id = int(eos_id)
        self.tok_embedding = nn.Embedding(cfg.vocab_size, cfg.width)
        self.pos_embedding = nn.Parameter(torch.zeros(cfg.max_positions, cfg.width))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.width, cfg.heads, cfg.ff_width, causal=True)
            for _ in range(cfg.layers)
        )
        self.ln_f = nn.LayerNorm(cfg.width)
        seeded_init_(self, cfg.seed)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and int(ids.max()) >= self.vocab_size:
            raise DataError(f"token id {int(ids.max())} out of vocabulary ({self.vocab_size})")
        return self.tok_embedding(ids)

    def logits_from_embeds(self, embeds: torch.Tensor) -> torch.Tensor:
        b, t, w = embeds.shape
        if w != self.width:
            raise ShapeError(f"embedding width {w} != LM width {self.width}")
        if t > self.cfg.max_positions:
            raise ShapeError(f"sequence of {t} exceeds max_positions {self.cfg.max_positions}")
        x = embeds + self.pos_embedding[:t]
        for block in self.blocks:
            x, _ = block(x)
        x = self.ln_f(x)
        return x @ self.tok_embedding.weight.t()  # tied output head


class PretrainedBackbone(LMBackbone):
    """Adapter around a ``transformers`` causal LM (weights must be local)."""

    def __init__(self, model_name: str):
        super().__init__()
        try:
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as exc:
            raise DataError("backbone 'hf:*' needs the optional transformers extra") from exc
        try:
            self.model = AutoModelForCausalLM.from_pretrained(model_name)
            self.hf_tokenizer = AutoTokenizer.from_pretrained(model_name)
        except Exception as exc:
            raise DataError(
                f"cannot load pretrained backbone '{model_name}' "
                f"(weights must be available locally): {exc}"
            ) from exc
        self.width = int(self.model.config.hidden_size)
        if self.width != PREFIX_WIDTH:
            raise ShapeError(
                f"backbone width {self.width} incompatible with {PREFIX_WIDTH}-wide prefixes"
            )
        self.vocab_size = int(self.model.config.vocab_size)
        self.eos_id = int(self.hf_tokenizer.eos_token_id)
        self.pad_id = int(self.hf_tokenizer.pad_token_id or self.eos_id)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.model.get_input_embeddings()(ids)

    def logits_from_embeds(self, embeds: torch.Tensor) -> torch.Tensor:
        return self.model(inputs_embeds=embeds).logits


def build_backbone(name: str, cfg: LMConfig, pad_id: int, eos_id: int) -> LMBackbone:
    if name == "tiny":
        return TinyCausalLM(cfg, pad_id=pad_id, eos_id=eos_id)
    if name.startswith("hf:"):
        return PretrainedBackbone(name[3:])
    raise DataError(f"unknown LM backbone '{name}'")


def set_trainable(lm: LMBackbone, flag: bool) -> LMBackbone:
    """Freeze/unfreeze the backbone. Gradients still flow *through* a frozen
    LM to the mapper; only parameter updates stop."""
    for p in lm.parameters():
        p.requires_grad_(flag)
    return lm


def assemble_prefix(audio_prefix: torch.Tensor, prompt_ids, lm: LMBackbone) -> torch.Tensor:
    """[40 audio vectors | 10 embedded prompt tokens] -> (50, width).

    Prompts shorter than 10 tokens are left-padded with the pad-token
    embedding; longer prompts are truncated to their first 10 tokens with a
    logged warning.
    """
    squeeze = audio_prefix.dim() == 2
    if squeeze:
        audio_prefix = audio_prefix.unsqueeze(0)
    b = audio_prefix.shape[0]
    if audio_prefix.shape[1:] != (PREFIX_LEN, lm.width):
        raise ShapeError(
            f"expected (*, {PREFIX_LEN}, {lm.width}) audio prefix, "
            f"got {tuple(audio_prefix.shape)}"
        )
    ids = torch.as_tensor(prompt_ids, dtype=torch.long)
    if ids.dim() == 1:
        ids = ids.unsqueeze(0).expand(b, -1)
    if ids.shape[1] > PROMPT_LEN:
        log.warning(
            "prompt of %d tokens truncated to %d", ids.shape[1], PROMPT_LEN
        )
        ids = ids[:, :PROMPT_LEN]
    if ids.shape[1] < PROMPT_LEN:
        pad = torch.full(
            (b, PROMPT_LEN - ids.shape[1]), lm.pad_id, dtype=torch.long
        )
        ids = torch.cat([pad, ids], dim=1)
    prompt_embeds = lm.embed_tokens(ids).to(audio_prefix.dtype)
    out = torch.cat([audio_prefix, prompt_embeds], dim=1)
    return out.squeeze(0) if squeeze else out


def lm_logits(prefix: torch.Tensor, targets: torch.Tensor, lm: LMBackbone) -> torch.Tensor:
    """Teacher-forced logits: row j conditions on the prefix and targets < j.

    prefix: (B, 50, width) or (50, width); targets: (B, l) or (l,).
    Returns (B, l, vocab) (or (l, vocab) unbatched).
    """
    squeeze = prefix.dim() == 2
    if squeeze:
        prefix = prefix.unsqueeze(0)
    targets = torch.as_tensor(targets, dtype=torch.long)
    if targets.dim() == 1:
        targets = targets.unsqueeze(0)
    if targets.shape[1] == 0:
        raise ShapeError("targets must be non-empty")
    if prefix.shape[1] != ASSEMBLED_LEN:
        raise ShapeError(
            f"expected assembled prefix of length {ASSEMBLED_LEN}, got {prefix.shape[1]}"
        )
    target_embeds = lm.embed_tokens(targets).to(prefix.dtype)
    seq = torch.cat([prefix, target_embeds], dim=1)
    logits = lm.logits_from_embeds(seq)
    # hidden at position 49 predicts target 1, position 49+j-1 predicts target j
    out = logits[:, ASSEMBLED_LEN - 1 : ASSEMBLED_LEN - 1 + targets.shape[1], :]
    return out.squeeze(0) if squeeze else out


def generate(
    prefix: torch.Tensor,
    lm: LMBackbone,
    codec,
    max_len: int = 48,
    strategy: str = "greedy",
    top_k: int = 10,
    beam_size: int = 4,
    rng: torch.Generator | None = None,
) -> str:
    """Autoregressive decoding from an assembled (50, width) prefix.

    ``greedy`` is deterministic; ``top-k`` samples from the renormalized top
    k tokens; ``beam`` keeps beam_size hypotheses ranked by total logprob.
    """
    if max_len < 1:
        raise ParameterError(f"max_len must be >= 1, got {max_len}")
    if prefix.dim() != 2 or prefix.shape[0] != ASSEMBLED_LEN:
        raise ShapeError(
            f"expected ({ASSEMBLED_LEN}, width) prefix, got {tuple(prefix.shape)}"
        )
    with torch.no_grad():
        if strategy == "beam":
            ids = _beam_search(prefix, lm, max_len, beam_size)
        elif strategy in ("greedy", "top-k"):
            ids = _sample(prefix, lm, max_len, strategy, top_k, rng)
        else:
            raise ParameterError(f"unknown decoding strategy '{strategy}'")
    return codec.decode(ids)


def generate_batch(prefixes: torch.Tensor, lm: LMBackbone, codec, max_len: int = 48) -> list:
    """Greedy decoding for a batch of assembled (B, 50, width) prefixes.

    Equivalent to per-row greedy decoding; rows that emit end-of-sequence
    keep padding until the batch finishes.
    """
    if prefixes.dim() != 3 or prefixes.shape[1] != ASSEMBLED_LEN:
        raise ShapeError(
            f"expected (B, {ASSEMBLED_LEN}, width) prefixes, got {tuple(prefixes.shape)}"
        )
    b = prefixes.shape[0]
    ids = torch.empty((b, 0), dtype=torch.long)
    finished = torch.zeros(b, dtype=torch.bool)
    with torch.no_grad():
        for _ in range(max_len):
            seq = prefixes
            if ids.shape[1]:
                seq = torch.cat([prefixes, lm.embed_tokens(ids).to(prefixes.dtype)], dim=1)
            nxt = lm.logits_from_embeds(seq)[:, -1].argmax(dim=-1)
            nxt = torch.where(finished, torch.full_like(nxt, lm.pad_id), nxt)
            ids = torch.cat([ids, nxt.unsqueeze(1)], dim=1)
            finished |= nxt == lm.eos_id
            if bool(finished.all()):
                break
    texts = []
    for row in ids.tolist():
        if lm.eos_id in row:
            row = row[: row.index(lm.eos_id)]
        texts.append(codec.decode(row))
    return texts


def _next_logits(prefix: torch.Tensor, ids: list, lm: LMBackbone) -> torch.Tensor:
    seq = prefix.unsqueeze(0)
    if ids:
        tok = lm.embed_tokens(torch.tensor([ids], dtype=torch.long)).to(prefix.dtype)
        seq = torch.cat([seq, tok], dim=1)
    return lm.logits_from_embeds(seq)[0, -1]


def _sample(prefix, lm, max_len, strategy, top_k, rng) -> list:
    ids: list = []
    for _ in range(max_len):
        logits = _next_logits(prefix, ids, lm)
        if strategy == "greedy":
            nxt = int(logits.argmax())
        else:
            values, indices = logits.topk(top_k)
            probs = F.softmax(values, dim=-1)
            choice = torch.multinomial(probs, 1, generator=rng)
            nxt = int(indices[choice])
        ids.append(nxt)
        if nxt == lm.eos_id:
            break
    return ids


def _beam_search(prefix, lm, max_len, beam_size) -> list:
    beams = [(0.0, [], False)]  # (logprob, ids, finished)
    for _ in range(max_len):
        candidates = []
        for score, ids, finished in beams:
            if finished:
                candidates.append((score, ids, True))
                continue
            logprobs = F.log_softmax(_next_logits(prefix, ids, lm), dim=-1)
            values, indices = logprobs.topk(beam_size)
            for v, i in zip(values.tolist(), indices.tolist()):
                candidates.append((score + v, ids + [i], i == lm.eos_id))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = candidates[:beam_size]
        if all(f for _, _, f in beams):
            break
    return beams[0][1]

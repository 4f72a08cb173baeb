"""Joint captioning + speaker-classification training.

Loss: L = alpha * L1 + (1 - alpha) * L2, where L1 is the autoregressive
negative log-likelihood of the description given the assembled prefix
(summed over token positions, averaged over the batch) and L2 is the
cross-entropy of the linear speaker head on the first prefix vector.

Schedule: stage A trains mapper + head with the LM frozen, stage B
fine-tunes everything. Adam with linear warmup to a constant rate.
Every step appends {step, stage, epoch, L, L1, L2, lr} to a JSONL metrics
log; the final state is written as a versioned checkpoint.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .audio import AugmentationPolicy, apply_augmentations, load_and_resample, log_mel
from .corpus import read_manifest
from .encoder import SpeakerEncoder, make_encoder
from .errors import DataError, ShapeError, TrainingDivergedError
from .lm import (
    ASSEMBLED_LEN,
    PROMPT_LEN,
    LMConfig,
    assemble_prefix,
    build_backbone,
    lm_logits,
    set_trainable,
)
from .mapper import MapperConfig, build_mapper
from .speaker_head import SpeakerHead, ce_loss
from .tokenizer import TextCodec, train_codec

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    # loss and optimizer
    alpha: float = 0.3
    learning_rate: float = 1e-4
    warmup_steps: int = 500
    batch_size: int = 64
    grad_clip: float | None = None
    # schedule
    stage_a_epochs: int = 100   # LM frozen
    stage_b_epochs: int = 30    # full fine-tune
    # ablation flags
    mapper_variant: str = "transformer"
    speaker_loss_enabled: bool = True
    augmentations_enabled: bool = True
    # model dimensions (desk-scale overrides allowed for every field)
    backbone: str = "tiny"
    vocab_size: int = 1500
    lm_layers: int = 2
    lm_heads: int = 8
    lm_ff_width: int = 1536
    max_positions: int = 160
    transformer_layers: int = 8
    mapper_heads: int = 8
    mlp_hidden: int = 15872
    encoder: str = "reference-seed0"
    max_description_tokens: int = 64
    # reproducibility
    seed: int = 0
    augment_policy: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must be in [0, 1], got {self.alpha}")
        for name in ("learning_rate", "warmup_steps", "batch_size", "vocab_size"):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("stage_a_epochs", "stage_b_epochs"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise DataError(f"unknown config keys: {unknown}")
        return cls(**raw)

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        import yaml

        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise DataError(f"{path}: config must be a mapping")
        return cls.from_dict(raw)

    def mapper_config(self) -> MapperConfig:
        return MapperConfig(
            variant=self.mapper_variant,
            transformer_layers=self.transformer_layers,
            heads=self.mapper_heads,
            mlp_hidden=self.mlp_hidden,
            seed=self.seed,
        )

    def lm_config(self, vocab_size: int) -> LMConfig:
        return LMConfig(
            vocab_size=vocab_size,
            layers=self.lm_layers,
            heads=self.lm_heads,
            ff_width=self.lm_ff_width,
            max_positions=self.max_positions,
            seed=self.seed + 1,
        )

    def policy(self) -> AugmentationPolicy:
        raw = dict(self.augment_policy)
        raw.setdefault("seed", self.seed)
        return AugmentationPolicy.from_dict(raw)


def captioning_loss(logits: torch.Tensor, targets: torch.Tensor, lengths=None) -> torch.Tensor:
    """NLL summed over token positions, averaged over the batch.

    logits: (l, vocab) or (B, l, vocab); targets: matching (l,) or (B, l).
    lengths masks padded positions for batched input.
    """
    targets = torch.as_tensor(targets, dtype=torch.long)
    squeeze = logits.dim() == 2
    if squeeze:
        logits, targets = logits.unsqueeze(0), targets.unsqueeze(0)
    if logits.shape[:2] != targets.shape:
        raise ShapeError(
            f"logits rows {tuple(logits.shape[:2])} do not align with targets {tuple(targets.shape)}"
        )
    logprobs = torch.log_softmax(logits, dim=-1)
    picked = logprobs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if lengths is not None:
        lengths = torch.as_tensor(lengths, dtype=torch.long)
        mask = torch.arange(targets.shape[1]).unsqueeze(0) < lengths.unsqueeze(1)
        picked = picked * mask
    return -(picked.sum(dim=1)).mean()


def joint_loss(l1, l2, alpha: float, speaker_loss_enabled: bool = True):
    """alpha * l1 + (1 - alpha) * l2; collapses to l1 when the speaker loss
    is disabled."""
    if not speaker_loss_enabled or l2 is None:
        return l1
    return alpha * l1 + (1.0 - alpha) * l2


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear ramp over warmup_steps, then constant."""
    return base_lr * min(1.0, (step + 1) / max(1, warmup_steps))


@dataclass
class TrainedModel:
    """Everything train() produces, kept live for generation/evaluation."""

    config: TrainingConfig
    codec: TextCodec
    encoder: SpeakerEncoder
    mapper: torch.nn.Module
    head: SpeakerHead
    lm: torch.nn.Module
    speaker_table: dict
    step: int = 0

    def embed_utterance(self, wav) -> np.ndarray:
        return self.encoder.encode(log_mel(wav))

    def prefix_for(self, embedding: np.ndarray) -> torch.Tensor:
        emb = torch.from_numpy(np.asarray(embedding)).to(next(self.mapper.parameters()).dtype)
        with torch.no_grad():
            return self.mapper(emb)

    def describe(self, embedding: np.ndarray, prompt: str, max_len: int = 48,
                 strategy: str = "greedy") -> str:
        from .lm import generate

        prefix = self.prefix_for(embedding)
        prompt_ids = self.codec.encode(prompt)
        assembled = assemble_prefix(prefix, prompt_ids, self.lm)
        return generate(assembled, self.lm, self.codec, max_len=max_len, strategy=strategy)

    def describe_batch(self, embeddings, prompts, max_len: int = 48,
                       batch_size: int = 16) -> list:
        """Greedy descriptions for parallel lists of embeddings and prompts."""
        from .lm import PROMPT_LEN, generate_batch

        dtype = next(self.mapper.parameters()).dtype
        texts = []
        for start in range(0, len(prompts), batch_size):
            embs = torch.from_numpy(
                np.stack([np.asarray(e) for e in embeddings[start : start + batch_size]])
            ).to(dtype)
            chunk_prompts = prompts[start : start + batch_size]
            ids = torch.full((len(chunk_prompts), PROMPT_LEN), self.codec.pad_id, dtype=torch.long)
            for i, prompt in enumerate(chunk_prompts):
                enc = self.codec.encode(prompt)[:PROMPT_LEN]
                if enc:
                    ids[i, PROMPT_LEN - len(enc):] = torch.tensor(enc, dtype=torch.long)
            with torch.no_grad():
                prefix = self.mapper(embs)
                assembled = assemble_prefix(prefix, ids, self.lm)
            texts.extend(generate_batch(assembled, self.lm, self.codec, max_len=max_len))
        return texts

    def save(self, out_dir) -> Path:
        tensors = {}
        tensors.update(ckpt.state_dict_to_numpy(self.mapper, "mapper"))
        tensors.update(ckpt.state_dict_to_numpy(self.head, "speaker_head"))
        store_lm = self.config.backbone == "tiny" or any(
            p.requires_grad for p in self.lm.parameters()
        )
        if store_lm:
            tensors.update(ckpt.state_dict_to_numpy(self.lm, "lm"))
        meta = {
            "config": asdict(self.config),
            "step": self.step,
            "backbone": self.config.backbone,
            "lm_stored": store_lm,
            "vocab_size": self.codec.vocab_size,
            "encoder": self.encoder.handle.name,
        }
        return ckpt.write_checkpoint(
            out_dir, meta=meta, tensors=tensors, codec=self.codec, speakers=self.speaker_table
        )

    @classmethod
    def load(cls, ckpt_dir) -> "TrainedModel":
        from .errors import CheckpointFormatError

        ckpt_dir = Path(ckpt_dir)
        meta, tensors = ckpt.read_checkpoint(ckpt_dir)
        config = TrainingConfig.from_dict(meta["config"])
        codec = TextCodec.load(ckpt_dir / "tokenizer.json")
        speaker_table = json.loads((ckpt_dir / "speakers.json").read_text(encoding="utf-8"))
        encoder = make_encoder(meta["encoder"])
        mapper = build_mapper(config.mapper_config())
        head = SpeakerHead(max(2, len(speaker_table)), seed=config.seed + 2)
        lm = build_backbone(
            config.backbone, config.lm_config(codec.vocab_size),
            pad_id=codec.pad_id, eos_id=codec.eos_id,
        )
        try:
            mapper.load_state_dict(ckpt.numpy_to_state_dict(tensors, "mapper"))
            head.load_state_dict(ckpt.numpy_to_state_dict(tensors, "speaker_head"))
            if meta.get("lm_stored", True):
                lm.load_state_dict(ckpt.numpy_to_state_dict(tensors, "lm"))
        except RuntimeError as exc:
            raise CheckpointFormatError(f"{ckpt_dir}: weights do not match config: {exc}") from exc
        set_trainable(lm, False)
        return cls(
            config=config, codec=codec, encoder=encoder, mapper=mapper,
            head=head, lm=lm, speaker_table=speaker_table, step=int(meta["step"]),
        )


def build_speaker_table(triplets) -> dict:
    return {spk: i for i, spk in enumerate(sorted({t.speaker_id for t in triplets}))}


def _prepare_examples(triplets, codec: TextCodec, speaker_table: dict, max_desc: int):
    examples = []
    for t in triplets:
        target = codec.encode(t.description)[:max_desc] + [codec.eos_id]
        examples.append({
            "utterance_id": t.utterance_id,
            "audio_path": t.audio_path,
            "speaker": speaker_table[t.speaker_id],
            "prompt_ids": codec.encode(t.prompt),
            "target_ids": target,
        })
    return examples


def _epoch_embeddings(wav_cache: dict, encoder: SpeakerEncoder, augment: bool,
                      policy: AugmentationPolicy, epoch: int, seed: int) -> dict:
    table = {}
    for i, (utt_id, wav) in enumerate(sorted(wav_cache.items())):
        if augment:
            rng = np.random.default_rng([seed, epoch, i])
            wav = apply_augmentations(wav, policy, rng)
        table[utt_id] = encoder.encode(log_mel(wav))
    return table


def _collate(batch, pad_id: int):
    max_len = max(len(ex["target_ids"]) for ex in batch)
    targets = torch.full((len(batch), max_len), pad_id, dtype=torch.long)
    lengths = torch.zeros(len(batch), dtype=torch.long)
    for i, ex in enumerate(batch):
        ids = ex["target_ids"]
        targets[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        lengths[i] = len(ids)
    speakers = torch.tensor([ex["speaker"] for ex in batch], dtype=torch.long)
    return targets, lengths, speakers


def train(config: TrainingConfig, manifest, out_dir, encoder: SpeakerEncoder | None = None,
          embeddings: dict | None = None) -> TrainedModel:
    """Run the two-stage schedule and write checkpoint + metrics.

    manifest: path to a manifest file or an in-memory triplet list.
    embeddings: optional {utterance_id: 1024-d vector} table of precomputed
    external embeddings; bypasses audio loading (augmentations then have
    nothing to act on and are skipped).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    triplets = read_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    if not triplets:
        raise DataError("empty training manifest")
    torch.manual_seed(config.seed)

    codec = train_codec(
        [t.prompt for t in triplets] + [t.description for t in triplets],
        vocab_size=config.vocab_size,
    )
    speaker_table = build_speaker_table(triplets)
    encoder = encoder or make_encoder(config.encoder)
    encoder_state_before = encoder.state_bytes()

    mapper = build_mapper(config.mapper_config())
    if config.speaker_loss_enabled and len(speaker_table) < 2:
        raise DataError("speaker loss needs at least 2 training speakers")
    head = SpeakerHead(max(2, len(speaker_table)), seed=config.seed + 2)
    lm = build_backbone(
        config.backbone, config.lm_config(codec.vocab_size),
        pad_id=codec.pad_id, eos_id=codec.eos_id,
    )
    examples = _prepare_examples(triplets, codec, speaker_table, config.max_description_tokens)
    longest = max(len(ex["target_ids"]) for ex in examples)
    if ASSEMBLED_LEN + longest > config.max_positions:
        raise DataError(
            f"descriptions of {longest} tokens exceed max_positions "
            f"{config.max_positions}; raise max_positions or shorten captions"
        )

    if embeddings is None:
        wav_cache = {}
        for t in triplets:
            if t.utterance_id not in wav_cache:
                wav_cache[t.utterance_id] = load_and_resample(t.audio_path)
        if not config.augmentations_enabled:
            # clean embeddings never change; compute once up front
            embeddings = {
                utt: encoder.encode(log_mel(wav)) for utt, wav in wav_cache.items()
            }
    else:
        wav_cache = None

    policy = config.policy()
    optimizer = torch.optim.Adam(
        list(mapper.parameters()) + list(head.parameters()) + list(lm.parameters()),
        lr=config.learning_rate,
        fused=True,
    )
    metrics_path = out_dir / "metrics.jsonl"
    model = TrainedModel(
        config=config, codec=codec, encoder=encoder, mapper=mapper,
        head=head, lm=lm, speaker_table=speaker_table,
    )
    snapshot = out_dir / "config_snapshot.json"
    snapshot.write_text(json.dumps(asdict(config), sort_keys=True, indent=2) + "\n", encoding="utf-8")

    data_rng = np.random.default_rng(config.seed)
    step = 0
    with open(metrics_path, "w", encoding="utf-8") as metrics:
        for stage, epochs, lm_trainable in (
            ("A", config.stage_a_epochs, False),
            ("B", config.stage_b_epochs, True),
        ):
            set_trainable(lm, lm_trainable)
            for epoch in range(epochs):
                if embeddings is None:
                    emb_table = _epoch_embeddings(
                        wav_cache, encoder, config.augmentations_enabled, policy,
                        epoch if stage == "A" else config.stage_a_epochs + epoch,
                        config.seed,
                    )
                else:
                    emb_table = embeddings
                order = data_rng.permutation(len(examples))
                for start in range(0, len(examples), config.batch_size):
                    batch = [examples[i] for i in order[start : start + config.batch_size]]
                    step += 1
                    lr = warmup_lr(config.learning_rate, step - 1, config.warmup_steps)
                    for group in optimizer.param_groups:
                        group["lr"] = lr
                    l1, l2, total = _train_step(
                        batch, emb_table, model, optimizer, config
                    )
                    if not np.isfinite(total):
                        raise TrainingDivergedError(
                            f"non-finite loss at step {step} (L1={l1}, L2={l2})"
                        )
                    record = {
                        "step": step, "stage": stage, "epoch": epoch,
                        "L": total, "L1": l1, "L2": l2, "lr": lr,
                    }
                    metrics.write(json.dumps(record, sort_keys=True) + "\n")
    model.step = step
    model.save(out_dir / "checkpoint")
    if encoder.state_bytes() != encoder_state_before:
        raise TrainingDivergedError("frozen speaker encoder was mutated during training")
    return model


def _train_step(batch, emb_table, model: TrainedModel, optimizer, config: TrainingConfig):
    targets, lengths, speakers = _collate(batch, model.codec.pad_id)
    dtype = next(model.mapper.parameters()).dtype
    embs = torch.from_numpy(
        np.stack([emb_table[ex["utterance_id"]] for ex in batch])
    ).to(dtype)
    prefix = model.mapper(embs)

    prompt_ids = torch.full((len(batch), PROMPT_LEN), model.codec.pad_id, dtype=torch.long)
    for i, ex in enumerate(batch):
        ids = ex["prompt_ids"][:PROMPT_LEN]
        if ids:
            prompt_ids[i, PROMPT_LEN - len(ids):] = torch.tensor(ids, dtype=torch.long)
    assembled = assemble_prefix(prefix, prompt_ids, model.lm)

    logits = lm_logits(assembled, targets, model.lm)
    l1 = captioning_loss(logits, targets, lengths)
    if config.speaker_loss_enabled:
        probs = model.head(prefix[:, 0, :])
        onehot = torch.nn.functional.one_hot(speakers, model.head.num_speakers).to(probs.dtype)
        l2 = ce_loss(onehot, probs)
    else:
        l2 = None
    total = joint_loss(l1, l2, config.alpha, config.speaker_loss_enabled)

    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(
            [p for g in optimizer.param_groups for p in g["params"]], config.grad_clip
        )
    optimizer.step()
    return (
        float(l1.detach()),
        None if l2 is None else float(l2.detach()),
        float(total.detach()),
    )


def grad_check(loss_fn, named_params, n_coords: int = 10, eps: float = 1e-4,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients to central finite differences.

    loss_fn is a deterministic closure over the given parameters (double
    precision expected). Samples n_coords coordinates per parameter tensor
    and returns the maximum relative error.
    """
    rng = rng or np.random.default_rng(0)
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    max_rel = 0.0
    for name, p in named_params:
        grad = p.grad
        numel = p.numel()
        count = min(n_coords, numel)
        coords = rng.choice(numel, size=count, replace=False)
        flat = p.data.view(-1)
        for c in coords:
            c = int(c)
            orig = flat[c].item()
            analytic = 0.0 if grad is None else grad.view(-1)[c].item()
            with torch.no_grad():
                flat[c] = orig + eps
                plus = float(loss_fn())
                flat[c] = orig - eps
                minus = float(loss_fn())
                flat[c] = orig
            numeric = (plus - minus) / (2.0 * eps)
            denom = max(abs(analytic), abs(numeric))
            rel = 0.0 if denom < 1e-10 else abs(analytic - numeric) / denom
            max_rel = max(max_rel, rel)
    return max_rel

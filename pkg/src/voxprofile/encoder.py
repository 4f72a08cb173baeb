"""Speaker encoder interface.

The production encoder is pluggable and treated as an opaque, frozen map
from a 128-bin mel spectrogram to a 1024-d embedding. The shipped reference
encoder (time-mean-pool followed by a fixed, seeded, bias-free linear
128 -> 1024 map) is deterministic and linear, which makes the rest of the
pipeline testable without any pretrained weights. Precomputed embeddings
from an external encoder can be ingested from a TSV interchange file.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import MEL_BINS, MelSpectrogram
from .errors import DataError, ShapeError

EMBEDDING_DIM = 1024


@dataclass(frozen=True)
class EncoderHandle:
    name: str
    dimension: int = EMBEDDING_DIM
    frozen: bool = True


def validate_embedding(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (EMBEDDING_DIM,):
        raise ShapeError(f"expected ({EMBEDDING_DIM},) embedding, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise DataError("embedding contains non-finite values")
    return values


class SpeakerEncoder:
    """Base class: frozen mel -> embedding map."""

    handle: EncoderHandle

    def encode(self, mel: MelSpectrogram) -> np.ndarray:
        raise NotImplementedError

    def state_bytes(self) -> bytes:
        """Serialized parameters; used to assert the freeze contract."""
        raise NotImplementedError


class ReferenceEncoder(SpeakerEncoder):
    """Time-mean-pool then a fixed seeded bias-free linear 128 -> 1024 map."""

    def __init__(self, seed: int = 0, name: str = "reference"):
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.weight = rng.standard_normal((EMBEDDING_DIM, MEL_BINS)) / np.sqrt(MEL_BINS)
        self.handle = EncoderHandle(name=f"{name}-seed{self.seed}")

    def encode(self, mel: MelSpectrogram) -> np.ndarray:
        if not isinstance(mel, MelSpectrogram):
            mel = MelSpectrogram(np.asarray(mel))
        pooled = mel.values.mean(axis=1)
        return validate_embedding(self.weight @ pooled)

    def state_bytes(self) -> bytes:
        return self.weight.astype("<f8").tobytes()


def make_encoder(name: str) -> SpeakerEncoder:
    """Encoder registry keyed by name, e.g. 'reference-seed0'."""
    if name.startswith("reference"):
        seed = int(name.rsplit("seed", 1)[1]) if "seed" in name else 0
        return ReferenceEncoder(seed=seed)
    raise DataError(f"unknown encoder '{name}'")


def load_external_embeddings(path) -> dict:
    """Read the embedding interchange file.

    One record per line: ``utterance_id<TAB>f1 f2 ... f1024``.
    """
    table: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                utt_id, payload = line.split("\t", 1)
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected 'id<TAB>floats'")
            if utt_id in table:
                raise DataError(f"{path}:{lineno}: duplicate utterance_id '{utt_id}'")
            fields = payload.split()
            if len(fields) != EMBEDDING_DIM:
                raise ShapeError(
                    f"{path}:{lineno}: expected {EMBEDDING_DIM} floats, got {len(fields)}"
                )
            table[utt_id] = validate_embedding(np.array(fields, dtype=np.float64))
    return table


def save_external_embeddings(path, table: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, emb in table.items():
            emb = validate_embedding(emb)
            fh.write(utt_id + "\t" + " ".join(repr(float(v)) for v in emb) + "\n")

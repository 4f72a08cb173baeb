"""Versioned, byte-deterministic checkpointing.

Tensors are stored in a purpose-built container (magic + version + JSON
index + raw little-endian blobs) because the round-trip contract is
save -> load -> save produces identical bytes; zip-based containers embed
timestamps and break that.

Checkpoint directory layout (format version 1):

    checkpoint.json   format_version, step, config snapshot, component info
    weights.bin       tensor container (mapper.*, speaker_head.*, lm.*)
    tokenizer.json    BPE tokenizer
    speakers.json     speaker id <-> class index table
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointFormatError

MAGIC = b"VXTC"
CONTAINER_VERSION = 1
CHECKPOINT_VERSION = 1


def save_tensors(path, tensors: dict) -> None:
    """Write {name: ndarray} to the deterministic container format."""
    index = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        blob = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        index[name] = {
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        }
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", CONTAINER_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CONTAINER_VERSION:
            raise CheckpointFormatError(
                f"{path}: container version {version}, expected {CONTAINER_VERSION}"
            )
        (header_len,) = struct.unpack("<Q", fh.read(8))
        index = json.loads(fh.read(header_len).decode("utf-8"))
        body = fh.read()
    tensors = {}
    for name, meta in index.items():
        start, nbytes = meta["offset"], meta["nbytes"]
        raw = body[start : start + nbytes]
        if len(raw) != nbytes:
            raise CheckpointFormatError(f"{path}: truncated blob for '{name}'")
        arr = np.frombuffer(raw, dtype=np.dtype(meta["dtype"]).newbyteorder("<"))
        tensors[name] = arr.reshape(meta["shape"]).astype(meta["dtype"])
    return tensors


def state_dict_to_numpy(module: torch.nn.Module, prefix: str) -> dict:
    return {
        f"{prefix}.{k}": v.detach().cpu().numpy()
        for k, v in module.state_dict().items()
    }


def numpy_to_state_dict(tensors: dict, prefix: str) -> dict:
    plen = len(prefix) + 1
    return {
        k[plen:]: torch.from_numpy(np.array(v))
        for k, v in tensors.items()
        if k.startswith(prefix + ".")
    }


def write_checkpoint(out_dir, *, meta: dict, tensors: dict, codec=None, speakers=None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = dict(meta)
    meta["format_version"] = CHECKPOINT_VERSION
    (out_dir / "checkpoint.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    save_tensors(out_dir / "weights.bin", tensors)
    if codec is not None:
        codec.save(out_dir / "tokenizer.json")
    if speakers is not None:
        (out_dir / "speakers.json").write_text(
            json.dumps(speakers, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    return out_dir


def read_checkpoint(ckpt_dir):
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / "checkpoint.json"
    if not meta_path.exists():
        raise CheckpointFormatError(f"{ckpt_dir}: no checkpoint.json")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{meta_path}: corrupt metadata: {exc}") from exc
    version = meta.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"{ckpt_dir}: checkpoint format {version}, expected {CHECKPOINT_VERSION}"
        )
    tensors = load_tensors(ckpt_dir / "weights.bin")
    return meta, tensors

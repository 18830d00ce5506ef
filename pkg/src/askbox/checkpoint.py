"""Checkpoint container: one JSON header plus raw little-endian tensor blobs.

File layout: MAGIC, uint64 header length, canonical-JSON header, then the
tensor bytes concatenated in manifest order. Saving the result of a load
reproduces the file bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import DecodeError, VocabMismatchError
from .model import ModelConfig, Seq2SeqModel

MAGIC = b"ASKBOXCKPT1\n"

_DTYPES = {"float32": "<f4", "int64": "<i8", "uint8": "|u1"}


@dataclass
class Checkpoint:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    vocab_hash: str
    step: int = 0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _as_little_endian(arr: np.ndarray) -> tuple[str, np.ndarray]:
    for name, code in _DTYPES.items():
        if arr.dtype == np.dtype(code) or arr.dtype.name == name:
            return name, np.ascontiguousarray(arr.astype(code, copy=False))
    raise DecodeError(f"unsupported tensor dtype: {arr.dtype}")


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    manifest = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.tensors):
        dtype, arr = _as_little_endian(ckpt.tensors[name])
        raw = arr.tobytes()
        manifest.append(
            {"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = _canonical_json(
        {
            "config": asdict(ckpt.config),
            "vocab_hash": ckpt.vocab_hash,
            "step": ckpt.step,
            "rng_state": ckpt.rng_state,
            "extra": ckpt.extra,
            "tensors": manifest,
        }
    )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise DecodeError(f"not a checkpoint file: {path}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len))
        body = f.read()
    tensors = {}
    for entry in header["tensors"]:
        raw = body[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
    return Checkpoint(
        config=ModelConfig(**header["config"]),
        tensors=tensors,
        vocab_hash=header["vocab_hash"],
        step=header["step"],
        rng_state=header["rng_state"],
        extra=header.get("extra", {}),
    )


def checkpoint_from_model(
    model: Seq2SeqModel,
    vocab_hash: str,
    step: int = 0,
    rng_state: dict | None = None,
    extra: dict | None = None,
    extra_tensors: dict[str, np.ndarray] | None = None,
) -> Checkpoint:
    tensors = {f"model.{k}": v.detach().numpy() for k, v in model.state_dict().items()}
    if extra_tensors:
        tensors.update(extra_tensors)
    return Checkpoint(
        config=model.config,
        tensors=tensors,
        vocab_hash=vocab_hash,
        step=step,
        rng_state=rng_state,
        extra=dict(extra or {}),
    )


def restore_model(ckpt: Checkpoint, expected_vocab_hash: str | None = None) -> Seq2SeqModel:
    if expected_vocab_hash is not None and ckpt.vocab_hash != expected_vocab_hash:
        raise VocabMismatchError(
            f"checkpoint vocab {ckpt.vocab_hash} != codec vocab {expected_vocab_hash}"
        )
    model = Seq2SeqModel(ckpt.config)
    state = {
        k[len("model.") :]: torch.from_numpy(v)
        for k, v in ckpt.tensors.items()
        if k.startswith("model.")
    }
    model.load_state_dict(state)
    return model

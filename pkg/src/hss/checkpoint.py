"""Binary checkpoints: ``HSSCKPT`` magic, a u32 version, a JSON header and
named little-endian float32 tensors.

Layout after the magic and version::

    u32 header_len | header (UTF-8 JSON) | u32 n_tensors |
    n_tensors x (u16 name_len | name | u8 ndim | ndim x u32 dims | float32 data)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .corpus import Vocabulary
from .errors import CompatibilityError, DataIOError
from .model import HSSModel, ModelConfig

MAGIC = b"HSSCKPT"
VERSION = 1
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    model_config: dict
    vocab: dict
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {k[len("param/"):]: v for k, v in self.tensors.items() if k.startswith("param/")}

    @property
    def velocity(self) -> dict[str, np.ndarray]:
        return {k[len("velocity/"):]: v for k, v in self.tensors.items() if k.startswith("velocity/")}


def quantize(arr: np.ndarray) -> np.ndarray:
    """Round to the precision a checkpoint stores, keeping float64 storage."""
    return np.asarray(arr, dtype=np.float64).astype(_F32).astype(np.float64)


def save(path, model: HSSModel, vocab: Vocabulary, velocity: dict[str, np.ndarray] | None = None,
         meta: dict | None = None) -> None:
    tensors = {f"param/{k}": p.value for k, p in model.params.items()}
    for k, v in (velocity or {}).items():
        tensors[f"velocity/{k}"] = v
    header = {"model": model.cfg.to_dict(), "vocab": vocab.to_dict(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=_F32)
        key = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataIOError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CompatibilityError(f"{path} is not a checkpoint file")
    try:
        pos = len(MAGIC)
        (version,) = struct.unpack_from("<I", raw, pos)
        if version != VERSION:
            raise CompatibilityError(f"checkpoint format version {version}; this build reads version {VERSION}")
        (hlen,) = struct.unpack_from("<I", raw, pos + 4)
        pos += 8
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2 : pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            (ndim,) = struct.unpack_from("<B", raw, pos)
            shape = struct.unpack_from(f"<{ndim}I", raw, pos + 1)
            pos += 1 + 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(raw):
                raise DataIOError(f"checkpoint {path} is truncated")
            tensors[name] = np.frombuffer(raw, dtype=_F32, count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataIOError(f"checkpoint {path} is corrupt: {exc}") from exc
    return Checkpoint(header["model"], header["vocab"], tensors, header.get("meta", {}))


def build_model(ckpt: Checkpoint) -> HSSModel:
    cfg = ModelConfig(**ckpt.model_config)
    params = {k: Tensor(v.astype(np.float64), requires_grad=True, name=k) for k, v in ckpt.params.items()}
    expected = HSSModel(cfg, seed=0).params
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CompatibilityError(f"checkpoint parameters differ from the model: missing {missing}, unexpected {extra}")
    for k, p in expected.items():
        if params[k].shape != p.shape:
            raise CompatibilityError(f"parameter {k} has shape {params[k].shape}, expected {p.shape}")
    return HSSModel(cfg, params)


def check_compatible(ckpt: Checkpoint, vocab: Vocabulary, n_users: int, n_items: int) -> None:
    cfg = ckpt.model_config
    if cfg["vocab_size"] != len(vocab):
        raise CompatibilityError(f"checkpoint vocabulary has {cfg['vocab_size']} tokens, dataset has {len(vocab)}")
    if Vocabulary.from_dict(ckpt.vocab) != vocab:
        raise CompatibilityError("checkpoint vocabulary differs from the dataset vocabulary")
    if (cfg["n_users"], cfg["n_items"]) != (n_users, n_items):
        raise CompatibilityError(
            f"checkpoint was trained on {cfg['n_users']} users / {cfg['n_items']} items, "
            f"dataset has {n_users} / {n_items}"
        )

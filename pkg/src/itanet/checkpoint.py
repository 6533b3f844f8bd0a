"""Binary checkpoints.

Layout (little-endian)::

    b"ITAN"                 magic
    u16                     format version (1)
    u8                      scalar width (4 or 8)
    u8                      reserved (0)
    u32 + bytes             JSON metadata: model config, train config, class ids
    4 x u64                 episode-stream RNG state
    u64                     episodes completed
    u32                     tensor count, then per tensor:
        u16 + bytes         name (utf-8)
        u8                  rank
        rank x u32          shape
        payload             row-major reals of the declared width

Optimizer momentum buffers are stored as tensors named ``velocity/<param>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import ITANet, ModelConfig, SGD, TrainConfig

MAGIC = b"ITAN"
VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Checkpoint:
    model: ITANet
    train_config: TrainConfig
    rng_state: tuple[int, int, int, int]
    episode: int
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def encode_checkpoint(model: ITANet, config: TrainConfig, rng_state, episode: int,
                      optimizer: SGD | None = None) -> bytes:
    dtype = model.dtype
    width = dtype.itemsize
    le = np.dtype(dtype).newbyteorder("<")
    meta = json.dumps(
        {
            "model": asdict(model.config),
            "train": asdict(config),
            "class_ids": sorted(model.class_index, key=model.class_index.get),
        },
        sort_keys=True,
    ).encode()
    tensors = {name: p.data for name, p in model.named_parameters().items()}
    if optimizer is not None:
        for p in optimizer.params:
            tensors[f"velocity/{p.name}"] = optimizer.velocity[id(p)]
    parts = [
        struct.pack("<4sHBB", MAGIC, VERSION, width, 0),
        struct.pack("<I", len(meta)),
        meta,
        struct.pack("<4Q", *rng_state),
        struct.pack("<Q", episode),
        struct.pack("<I", len(tensors)),
    ]
    for name, arr in tensors.items():
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=le).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated while reading {what}: need {n} bytes, {len(self.buf) - self.pos} left",
                                  self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    magic, version, width, _ = r.unpack("<4sHBB", "header")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 4)
    if width not in (4, 8):
        raise CheckpointError(f"unsupported scalar width {width}", 6)
    dtype = np.dtype("<f4" if width == 4 else "<f8")
    (meta_len,) = r.unpack("<I", "metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt metadata: {exc}", r.pos) from exc
    rng_state = r.unpack("<4Q", "rng state")
    (episode,) = r.unpack("<Q", "episode counter")
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode()
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        size = int(np.prod(shape, dtype=np.int64))
        raw = r.take(size * width, f"payload of {name}")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes", r.pos)

    model = ITANet(ModelConfig.from_dict(meta["model"]), meta["class_ids"], dtype=dtype.newbyteorder("="))
    params = model.named_parameters()
    for name, p in params.items():
        if name not in tensors:
            raise CheckpointError(f"checkpoint lacks tensor {name}")
        if tensors[name].shape != p.shape:
            raise CheckpointError(f"tensor {name} has shape {tensors[name].shape}, model expects {p.shape}")
        p.data = tensors[name]
        p.zero_grad()
    velocity = {k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("velocity/")}
    return Checkpoint(model, TrainConfig.from_dict(meta["train"]), tuple(rng_state), episode, velocity)


def checkpoint_save(path, model: ITANet, config: TrainConfig, rng_state=(0, 0, 0, 0), episode: int = 0,
                    optimizer: SGD | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, config, rng_state, episode, optimizer))


def checkpoint_load(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def restore_optimizer(ckpt: Checkpoint, optimizer: SGD) -> None:
    for p in optimizer.params:
        if p.name in ckpt.velocity:
            optimizer.velocity[id(p)] = ckpt.velocity[p.name].copy()

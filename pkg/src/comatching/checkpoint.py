"""Bit-exact binary checkpoints.

Layout (all integers little-endian):

    magic  b"CMC1"
    u32    format version (1)
    u32    tensor count
    per tensor:
        u16  name length, then UTF-8 name
        u8   rank (2)
        u32  dim for each rank (rows, cols)
        f64  raw row-major data
    u32    vocabulary token count
    per token: u16 length + UTF-8 bytes, in index order (PAD and UNK first)
    u32    config line count
    per line: u16 length + UTF-8 "key=value"

Loading reproduces every tensor bitwise and the vocabulary exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .errors import CheckpointError, ConfigError
from .model import ModelParams, init_params
from .tensor import Tensor

MAGIC = b"CMC1"
VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    embeddings: Tensor
    vocab: Vocabulary
    config: dict[str, str]


def _encode_str(text: str, what: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"{what} longer than 65535 bytes cannot be stored")
    return struct.pack("<H", len(raw)) + raw


def save_checkpoint(
    params: ModelParams,
    embeddings: Tensor,
    vocab: Vocabulary,
    config: dict[str, str],
    path: str | Path,
) -> None:
    """Write params + embeddings + vocabulary + config to ``path``."""
    tensors = list(params.named_tensors()) + [("embeddings", embeddings)]
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(tensors))
    for name, t in tensors:
        out += _encode_str(name, f"tensor name {name!r}")
        rows, cols = t.data.shape
        out += struct.pack("<BII", 2, rows, cols)
        out += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    out += struct.pack("<I", len(vocab))
    for token in vocab.index_to_token:
        out += _encode_str(token, f"vocabulary token {token!r}")
    lines = [f"{k}={v}" for k, v in sorted(config.items())]
    out += struct.pack("<I", len(lines))
    for line in lines:
        out += _encode_str(line, "config line")
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(
                f"checkpoint truncated: wanted {n} bytes at offset {self.offset}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        n = self.u16()
        at = self.offset
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"bad UTF-8 at offset {at}") from exc


def load_checkpoint(path: str | Path, expect: dict[str, str] | None = None) -> Checkpoint:
    """Read a checkpoint back; ``expect`` entries must match the config block.

    Raises CheckpointError (with the byte offset) on corruption and
    ConfigError on an ``expect`` mismatch or incompatible tensor shapes.
    """
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic at offset 0: not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4")

    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.string()
        rank = r.u8()
        if rank > 2:
            raise CheckpointError(f"tensor {name!r}: rank {rank} > 2 at offset {r.offset - 1}")
        dims = [r.u32() for _ in range(rank)]
        count = int(np.prod(dims)) if dims else 1
        raw = r.take(8 * count)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims or (1,))
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if name in tensors:
            raise CheckpointError(f"duplicate tensor {name!r}")
        tensors[name] = arr

    token_count = r.u32()
    index_to_token = [r.string() for _ in range(token_count)]
    config: dict[str, str] = {}
    for _ in range(r.u32()):
        line = r.string()
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"config line {line!r} lacks '='")
        config[key] = value
    if r.offset != len(r.data):
        raise CheckpointError(
            f"{len(r.data) - r.offset} unexpected trailing bytes at offset {r.offset}"
        )

    if expect:
        for key, value in expect.items():
            have = config.get(key)
            if have != value:
                raise ConfigError(
                    f"checkpoint config {key}={have!r} does not match requested {value!r}"
                )

    for key in ("d", "l", "variant"):
        if key not in config:
            raise CheckpointError(f"config block lacks {key!r}")
    params = init_params(int(config["d"]), int(config["l"]), seed=0, variant=config["variant"])
    for name, t in params.named_tensors():
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name!r}")
        if tensors[name].shape != t.data.shape:
            raise ConfigError(
                f"tensor {name!r} has shape {tensors[name].shape}, "
                f"expected {t.data.shape} for d={config['d']}, l={config['l']}"
            )
        t.data = tensors[name]
    if "embeddings" not in tensors:
        raise CheckpointError("missing tensor 'embeddings'")
    trainable = bool(int(config.get("trainable_embeddings", "0")))
    embeddings = Tensor(tensors["embeddings"], requires_grad=trainable)
    params.embeddings = embeddings

    vocab = Vocabulary(
        token_to_index={tok: i for i, tok in enumerate(index_to_token)},
        index_to_token=index_to_token,
    )
    if embeddings.data.shape[1] != len(vocab):
        raise ConfigError(
            f"embedding table has {embeddings.data.shape[1]} columns "
            f"but the vocabulary holds {len(vocab)} tokens"
        )
    return Checkpoint(params=params, embeddings=embeddings, vocab=vocab, config=config)

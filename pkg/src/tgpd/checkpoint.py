"""Binary checkpoint container for nets: named float32 arrays plus a vocabulary.

Layout (all integers unsigned 32-bit little-endian):

    magic "TGPD" | version | array count
    per array: name length, name utf-8, rank, dims..., float32 LE payload
    vocabulary: word count, then per word: length, utf-8 bytes (index order)

Round trips are bitwise-faithful; loaders validate magic, version, and
structural completeness before constructing anything.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import nn
from .agent import Heads, LstmDqnNet

MAGIC = b"TGPD"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt, truncated, or structurally incompatible checkpoint."""


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], vocab_words: list[str]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    chunks.append(struct.pack("<I", len(vocab_words)))
    for word in vocab_words:
        encoded = word.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
    payload = b"".join(chunks)
    tmp = Path(path).with_suffix(Path(path).suffix + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError("truncated checkpoint payload")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], list[str]]:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"bad magic bytes in {path}")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    arrays = {}
    for _ in range(reader.u32()):
        name = reader.text()
        rank = reader.u32()
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(shape).copy()
    vocab = [reader.text() for _ in range(reader.u32())]
    if reader.pos != len(reader.data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return arrays, vocab


def net_arrays(net: LstmDqnNet) -> dict[str, np.ndarray]:
    return {p.name: p.values for p in net.parameters()}


def save_net(path: str | Path, net: LstmDqnNet) -> None:
    save_arrays(path, net_arrays(net), net.vocab_words)


def load_net(path: str | Path) -> LstmDqnNet:
    """Rebuild a net from a checkpoint; head structure is recovered from array names."""
    arrays, vocab = load_arrays(path)
    required = ["embedding", "lstm.w_x", "lstm.w_h", "lstm.bias", "linear1.w", "linear1.b"]
    missing = [name for name in required if name not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint missing trunk arrays: {missing}")

    game_ids = []
    for name in arrays:
        if name.startswith("head."):
            parts = name.split(".")
            if len(parts) != 4 or parts[2] not in ("action", "object") or parts[3] not in ("w", "b"):
                raise CheckpointError(f"unrecognized head array name {name!r}")
            if parts[1] not in game_ids:
                game_ids.append(parts[1])
    if not game_ids:
        raise CheckpointError("checkpoint has no controller heads")

    heads = {}
    for gid in game_ids:
        pieces = {}
        for kind in ("action.w", "action.b", "object.w", "object.b"):
            key = f"head.{gid}.{kind}"
            if key not in arrays:
                raise CheckpointError(f"checkpoint missing head array {key!r}")
            pieces[kind] = arrays[key]
        heads[gid] = Heads(
            w_act=nn.Parameter(pieces["action.w"], name=f"head.{gid}.action.w"),
            b_act=nn.Parameter(pieces["action.b"], name=f"head.{gid}.action.b"),
            w_obj=nn.Parameter(pieces["object.w"], name=f"head.{gid}.object.w"),
            b_obj=nn.Parameter(pieces["object.b"], name=f"head.{gid}.object.b"),
        )

    if arrays["embedding"].shape[0] != len(vocab):
        raise CheckpointError(
            f"embedding rows {arrays['embedding'].shape[0]} != vocabulary size {len(vocab)}")
    lstm = nn.LstmParams(
        w_x=nn.Parameter(arrays["lstm.w_x"], name="lstm.w_x"),
        w_h=nn.Parameter(arrays["lstm.w_h"], name="lstm.w_h"),
        bias=nn.Parameter(arrays["lstm.bias"], name="lstm.bias"),
    )
    return LstmDqnNet(
        vocab,
        nn.Parameter(arrays["embedding"], name="embedding"),
        lstm,
        nn.Parameter(arrays["linear1.w"], name="linear1.w"),
        nn.Parameter(arrays["linear1.b"], name="linear1.b"),
        heads,
    )


def load_net_into_game(path: str | Path, expected_game_id: str) -> LstmDqnNet:
    """Load a checkpoint that must carry a head pair for `expected_game_id`."""
    net = load_net(path)
    if expected_game_id not in net.heads:
        raise CheckpointError(
            f"architecture mismatch: checkpoint heads {net.game_ids()} "
            f"missing required head for {expected_game_id!r}")
    return net

"""Versioned binary checkpoints with integrity checking.

Layout: magic "CCN1", u32 format version, length-prefixed JSON config,
u32 tensor count, then per tensor (u32 name length, name, u32 rank,
u32 extents..., float64 little-endian payload), and a trailing CRC32
of everything before it. All integers little-endian.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .network import CCNetConfig

MAGIC = b"CCN1"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(params: dict[str, np.ndarray], config: CCNetConfig,
                    path: str) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(config.to_dict()).encode("utf-8")
    chunks.append(struct.pack("<I", len(blob)))
    chunks.append(blob)
    chunks.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.at:self.at + n]
        self.at += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], CCNetConfig]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise CheckpointError("truncated checkpoint")
    body, tail = raw[:-4], raw[-4:]
    want = struct.unpack("<I", tail)[0]
    got = zlib.crc32(body) & 0xFFFFFFFF
    if want != got:
        raise CheckpointError(f"checksum mismatch: {got:08x} != {want:08x}")
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    ver = r.u32()
    if ver != VERSION:
        raise CheckpointError(f"unsupported format version {ver}")
    cfg_len = r.u32()
    try:
        config = CCNetConfig.from_dict(json.loads(r.take(cfg_len)))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CheckpointError(f"bad config blob: {exc}") from exc
    count = r.u32()
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        if rank > 8:
            raise CheckpointError(f"implausible tensor rank {rank}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
        params[name] = data.astype(np.float64)
    if r.at != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    return params, config

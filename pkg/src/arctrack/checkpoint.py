"""Binary checkpoint container for tracker weights.

Layout, all integers little-endian:

    magic   4 bytes  b"ATRK"
    version u32
    cfg_len u32, then cfg_len bytes of UTF-8 JSON (the config dict)
    count   u32
    per parameter:
        name_len u16, name bytes
        ndim     u8, then ndim x u32 dims
        data     float32 values, C order

Weights are stored in float32; loading upcasts to float64, so a save/load
round trip costs single precision but nothing more.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"ATRK"
VERSION = 1


def save_checkpoint(path, config: dict, params: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(params))
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float32)
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ParseError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (config, params) with parameters upcast to float64."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad config block: {exc}") from exc
    params: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u8()))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float64)
        params[name] = data.reshape(shape)
    if r.pos != len(r.buf):
        raise ParseError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return config, params

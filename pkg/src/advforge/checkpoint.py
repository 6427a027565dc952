"""Binary checkpoint format.

Layout (all integers little-endian u32):

    magic "ADVF" | version | record count
    per record:  name length | name utf-8 | rank | dims... | float32 data
    trailer:     metadata length | canonical JSON utf-8

Round-trips are bit-exact: float32 payloads are written raw and the
metadata JSON is canonical (sorted keys, no whitespace).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .models import Classifier, ModelConfig

MAGIC = b"ADVF"
VERSION = 1


class CheckpointError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_tensors(path, records: list[tuple[str, np.ndarray]], meta: dict) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(records))
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        name_b = name.encode("utf-8")
        out += struct.pack("<I", len(name_b))
        out += name_b
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.astype("<f4", copy=False).tobytes()
    meta_b = canonical_json(meta).encode("utf-8")
    out += struct.pack("<I", len(meta_b))
    out += meta_b
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_tensors(path) -> tuple[list[tuple[str, np.ndarray]], dict]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not an ADVF checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    count = r.u32()
    records = []
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).copy()
        records.append((name, data))
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    if r.pos != len(r.buf):
        raise CheckpointError(f"{len(r.buf) - r.pos} trailing bytes after metadata in {path}")
    return records, meta


def save_classifier(model: Classifier, path) -> None:
    records = [(name, p.data) for name, p in model.named_parameters()]
    save_tensors(path, records, model.cfg.to_dict())


def load_classifier(path) -> Classifier:
    records, meta = load_tensors(path)
    model = Classifier(ModelConfig.from_dict(meta))
    expected = dict(model.named_parameters())
    if [n for n, _ in records] != list(expected):
        raise CheckpointError(f"parameter names in {path} do not match architecture")
    for name, data in records:
        p = expected[name]
        if p.data.shape != data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {data.shape} vs model {p.data.shape}"
            )
        p.data = np.ascontiguousarray(data, dtype=np.float32)
    return model

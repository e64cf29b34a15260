"""Binary model archive: config plus named float32 tensor table.

Layout (all integers little-endian):

    magic   4 bytes  b"TXRC"
    version u32      currently 1
    config  u32 length + UTF-8 JSON of the model config
    count   u32      number of tensors
    tensor  repeated: u16 name length + UTF-8 name,
                      u8 ndim, u32 per dim,
                      raw float32 little-endian values
    crc     u32      zlib.crc32 over the tensor table bytes

Tensors are written in the canonical parameter order for the config, so
identical (config, values) always produce identical bytes.  Loading
verifies the checksum and that the tensor set matches the config's
required inventory exactly: missing, unknown, and wrong-shape entries
are each distinct errors.
"""

from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from .autograd import Tensor
from .errors import (CheckpointFormatError, CheckpointIntegrityError,
                     CheckpointMismatchError)
from .model import ModelConfig, param_specs

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"TXRC"
VERSION = 1


def save_checkpoint(path: str, config: ModelConfig, params: dict) -> None:
    """Write the archive; `params` must exactly satisfy the config's
    parameter inventory."""
    specs = param_specs(config)
    required = dict(specs)
    unknown = sorted(set(params) - set(required))
    missing = sorted(set(required) - set(params))
    if unknown or missing:
        raise CheckpointMismatchError(
            f"parameter table mismatch: missing {missing}, unknown {unknown}")
    table = io.BytesIO()
    for name, shape in specs:
        data = params[name].data
        if tuple(data.shape) != tuple(shape):
            raise CheckpointMismatchError(
                f"tensor {name} has shape {tuple(data.shape)}, config expects {tuple(shape)}")
        encoded = name.encode("utf-8")
        table.write(struct.pack("<H", len(encoded)))
        table.write(encoded)
        table.write(struct.pack("<B", data.ndim))
        table.write(struct.pack(f"<{data.ndim}I", *data.shape))
        table.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
    table_bytes = table.getvalue()

    config_bytes = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(specs)))
        fh.write(table_bytes)
        fh.write(struct.pack("<I", zlib.crc32(table_bytes)))


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointIntegrityError(f"{self.path}: truncated archive")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def load_checkpoint(path: str):
    """Read an archive back as (ModelConfig, name -> Tensor table)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint archive (bad magic)")
    version = r.u("<I")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version} (want {VERSION})")
    try:
        config = ModelConfig.from_dict(json.loads(r.take(r.u("<I")).decode("utf-8")))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: malformed config block: {exc}") from exc

    count = r.u("<I")
    table_start = r.pos
    params: dict = {}
    for _ in range(count):
        name = r.take(r.u("<H")).decode("utf-8")
        ndim = r.u("<B")
        shape = tuple(r.u("<I") for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        raw = r.take(4 * size)
        data = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        params[name] = Tensor(data, requires_grad=True, name=name)
    table_bytes = blob[table_start:r.pos]
    stored_crc = r.u("<I")
    if zlib.crc32(table_bytes) != stored_crc:
        raise CheckpointIntegrityError(f"{path}: tensor table checksum mismatch")

    required = dict(param_specs(config))
    missing = sorted(set(required) - set(params))
    unknown = sorted(set(params) - set(required))
    if missing:
        raise CheckpointMismatchError(f"{path}: missing tensors {missing}")
    if unknown:
        raise CheckpointMismatchError(f"{path}: unknown tensors {unknown}")
    for name, shape in required.items():
        got = tuple(params[name].data.shape)
        if got != tuple(shape):
            raise CheckpointMismatchError(
                f"{path}: tensor {name} shape {got}, config expects {tuple(shape)}")
    return config, params

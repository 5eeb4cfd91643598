"""Binary checkpoint format.

Layout (all integers unsigned 64-bit little-endian, reals float64 little-endian)::

    b"GATCKPT1"
    u64 length, config record (UTF-8 key=value lines, including ``vocab=``)
    per parameter, in lexicographic name order:
        u64 length, UTF-8 name
        u64 rank, rank x u64 dims
        prod(dims) x f64 data
    u64 CRC-64/XZ of every preceding byte
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .autodiff import Tensor
from .config import ModelConfig, apply_overrides, format_kv, parse_kv
from .params import Params, expected_shapes
from .scenes import Vocabulary

MAGIC = b"GATCKPT1"
_U64 = struct.Struct("<Q")


class CheckpointError(Exception):
    """Base class for unreadable checkpoints."""


class MagicError(CheckpointError):
    """Wrong magic bytes or format version."""


class TruncatedError(CheckpointError):
    """File ends before the declared content."""


class CorruptError(CheckpointError):
    """CRC mismatch or malformed record."""


class ShapeMismatchError(CheckpointError):
    """Stored parameters disagree with the stored configuration."""


def _crc64_table() -> list:
    poly = 0xC96C5795D7870F42
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        table.append(crc)
    return table


_CRC_TABLE = _crc64_table()


def crc64(data: bytes, crc: int = 0) -> int:
    """CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones)."""
    table = _CRC_TABLE
    crc ^= 0xFFFFFFFFFFFFFFFF
    for b in data:
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


@dataclass
class Checkpoint:
    params: Params
    config: ModelConfig
    vocab: Optional[Vocabulary] = None


def _config_record(cfg: ModelConfig, vocab: Optional[Vocabulary]) -> bytes:
    text = format_kv(cfg)
    if vocab is not None:
        text += "vocab=" + " ".join(vocab.words()) + "\n"
    return text.encode("utf-8")


def to_bytes(params: Params, cfg: ModelConfig, vocab: Optional[Vocabulary] = None) -> bytes:
    out = bytearray(MAGIC)
    record = _config_record(cfg, vocab)
    out += _U64.pack(len(record)) + record
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        raw = name.encode("utf-8")
        out += _U64.pack(len(raw)) + raw
        out += _U64.pack(arr.ndim)
        for dim in arr.shape:
            out += _U64.pack(dim)
        out += arr.tobytes()
    out += _U64.pack(crc64(bytes(out)))
    return bytes(out)


def save_checkpoint(params: Params, cfg: ModelConfig, path, vocab: Optional[Vocabulary] = None) -> None:
    """Write atomically: a temp file in the target directory renamed over ``path``."""
    data = to_bytes(params, cfg, vocab)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        chunk = self.buf[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        if len(buf) < len(MAGIC) and MAGIC.startswith(buf):
            raise TruncatedError("file shorter than the magic header")
        raise MagicError(f"bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(buf) < len(MAGIC) + 16:
        raise TruncatedError("file too short for a config record and CRC")
    body = _Reader(buf[:-8])
    body.take(len(MAGIC))
    rec_len = body.u64()
    if rec_len > len(buf):
        raise TruncatedError(f"config record of {rec_len} bytes exceeds file size")
    record = body.take(rec_len)
    try:
        values = parse_kv(record.decode("utf-8"))
        vocab_line = values.pop("vocab", None)
        cfg = apply_overrides(ModelConfig(), values)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptError(f"unreadable config record: {exc}") from exc
    params: Params = {}
    while body.pos < len(body.buf):
        name_len = body.u64()
        if name_len > len(buf):
            raise TruncatedError("parameter name length exceeds file size")
        try:
            name = body.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptError("parameter name is not UTF-8") from exc
        rank = body.u64()
        if rank > 3:
            raise CorruptError(f"parameter {name!r} has rank {rank}")
        dims = tuple(body.u64() for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(body.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        if name in params:
            raise CorruptError(f"duplicate parameter {name!r}")
        params[name] = Tensor(data, requires_grad=True)
    stored_crc = _U64.unpack(buf[-8:])[0]
    if crc64(buf[:-8]) != stored_crc:
        want = _expected_size(rec_len, cfg)
        if len(buf) < want:
            # a cut on a parameter boundary parses cleanly but comes up short
            raise TruncatedError(f"file has {len(buf)} bytes, its config implies {want}")
        raise CorruptError("CRC mismatch (file truncated or corrupted)")
    _check_shapes(params, cfg)
    vocab = None
    if vocab_line is not None:
        vocab = Vocabulary(vocab_line.split())
    return Checkpoint(params, cfg, vocab)


def _expected_size(rec_len: int, cfg: ModelConfig) -> int:
    size = len(MAGIC) + 8 + rec_len + 8
    for name, shape in expected_shapes(cfg).items():
        size += 8 + len(name.encode("utf-8")) + 8 + 8 * len(shape) + 8 * int(np.prod(shape))
    return size


def _check_shapes(params: Params, cfg: ModelConfig) -> None:
    want = expected_shapes(cfg)
    missing = sorted(set(want) - set(params))
    extra = sorted(set(params) - set(want))
    if missing or extra:
        raise ShapeMismatchError(f"parameter names differ from config (missing {missing[:3]}, extra {extra[:3]})")
    for name, shape in want.items():
        if params[name].shape != tuple(shape):
            raise ShapeMismatchError(f"{name}: stored {params[name].shape}, config implies {tuple(shape)}")


def read_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def load_checkpoint(path) -> tuple:
    """``(params, config)`` from ``path``; see :func:`read_checkpoint` for the vocabulary too."""
    ck = read_checkpoint(path)
    return ck.params, ck.config


__all__ = [
    "MAGIC", "Checkpoint", "CheckpointError", "MagicError", "TruncatedError", "CorruptError",
    "ShapeMismatchError", "crc64", "save_checkpoint", "load_checkpoint", "read_checkpoint",
    "to_bytes", "from_bytes",
]


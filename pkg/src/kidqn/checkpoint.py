"""Binary checkpoints: little-endian, magic header, explicit version."""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .qfunc import NetParams

MAGIC = b"KIDQNCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    iteration: int
    params: NetParams
    target: NetParams
    rng_states: Dict[str, dict] = field(default_factory=dict)
    replay_summary: Dict[str, float] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)
    version: int = VERSION

    @property
    def config(self) -> RunConfig:
        return parse_config(self.config_text)

    @property
    def config_digest(self) -> str:
        return self.config.digest()

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", self.version))
        _write_blob(buf, self.config_text.encode("utf-8"))
        buf.write(bytes.fromhex(self.config_digest))
        buf.write(struct.pack("<Q", self.iteration))
        _write_params(buf, self.params)
        _write_params(buf, self.target)
        meta = {"rng": self.rng_states, "replay": self.replay_summary, "counters": self.counters}
        _write_blob(buf, json.dumps(meta, sort_keys=True).encode("utf-8"))
        body = buf.getvalue()
        return body + hashlib.sha256(body).digest()


def _write_blob(buf, data: bytes) -> None:
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def _write_params(buf, p: NetParams) -> None:
    keys = p.keys()
    buf.write(struct.pack("<I", len(keys)))
    for k in keys:
        _write_blob(buf, k.encode("ascii"))
        for arr in (p.weights[k], p.momentum[k]):
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)

    def array(self) -> np.ndarray:
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if ndim else 1
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)

    def params(self) -> NetParams:
        (n,) = self.unpack("<I")
        w, m = {}, {}
        for _ in range(n):
            k = self.blob().decode("ascii")
            w[k] = self.array()
            m[k] = self.array()
        return NetParams(w, m)


def checkpoint_from_bytes(data: bytes, expect: Optional[RunConfig] = None) -> Checkpoint:
    if len(data) < len(MAGIC) + 4 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    r = _Reader(data)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(data) < 32 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise CheckpointError("checkpoint is truncated or corrupted (checksum mismatch)")
    r.data = data[:-32]
    try:
        config_text = r.blob().decode("utf-8")
        digest = r.take(32).hex()
        (iteration,) = r.unpack("<Q")
        params = r.params()
        target = r.params()
        meta = json.loads(r.blob().decode("utf-8"))
    except (UnicodeDecodeError, ValueError, struct.error) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes in checkpoint")
    try:
        cfg = parse_config(config_text)
    except ConfigError as exc:
        raise CheckpointError(f"embedded config is invalid: {exc}") from exc
    if cfg.digest() != digest:
        raise CheckpointError("embedded config digest does not match its text")
    if expect is not None and expect.digest() != digest:
        raise ConfigMismatchError("checkpoint was written under a different configuration")
    return Checkpoint(config_text, iteration, params, target, meta["rng"], meta["replay"],
                      meta["counters"], version)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.write_bytes(ckpt.to_bytes())
    return path


def load_checkpoint(path, expect: Optional[RunConfig] = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return checkpoint_from_bytes(data, expect)

"""Binary snapshots of every trainable tensor plus the slow memory copy.

Layout (all integers little-endian):

    magic  b"AUKAI-CKPT/1"
    u32    tensor count
    per tensor:
        u16   name length, then the utf-8 name
        u8    rank
        u64   one per dimension
        f64   row-major payload
    trailer:
        u64   training step
        u16   config hash length, then the utf-8 hash

Round-trips are bitwise exact. Loading against a different config hash
is a warning when every shape still matches and an error otherwise.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ContractError, Tensor
from .params import ParameterSet

MAGIC = b"AUKAI-CKPT/1"
TARGET_PREFIX = "target."

log = logging.getLogger(__name__)


@dataclass
class Snapshot:
    tensors: dict[str, Tensor]
    step: int
    config_hash: str

    def split(self) -> tuple[ParameterSet, dict[str, Tensor]]:
        """Separate the live parameters from the slow memory copy."""
        live = {k: v for k, v in self.tensors.items() if not k.startswith(TARGET_PREFIX)}
        target = {
            k[len(TARGET_PREFIX):]: v
            for k, v in self.tensors.items()
            if k.startswith(TARGET_PREFIX)
        }
        return ParameterSet(live), target


def _pack_tensor(name: str, value: Tensor) -> bytes:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(value.data, dtype="<f8")
    dims = arr.shape
    out = [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim)]
    out.append(struct.pack(f"<{arr.ndim}Q", *dims) if arr.ndim else b"")
    out.append(arr.tobytes(order="C"))
    return b"".join(out)


def save(
    path: str | Path,
    params: ParameterSet,
    target_mem: dict[str, Tensor],
    step: int,
    config_hash: str,
) -> None:
    entries: list[tuple[str, Tensor]] = list(params.items())
    entries += [(TARGET_PREFIX + k, v) for k, v in sorted(target_mem.items())]
    blob = [MAGIC, struct.pack("<I", len(entries))]
    blob += [_pack_tensor(name, value) for name, value in entries]
    hash_raw = config_hash.encode("utf-8")
    blob.append(struct.pack("<Q", step))
    blob.append(struct.pack("<H", len(hash_raw)))
    blob.append(hash_raw)
    Path(path).write_bytes(b"".join(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise ContractError("checkpoint truncated")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def load(path: str | Path, expected_hash: str | None = None) -> Snapshot:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(len(MAGIC)) != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    count = rd.unpack("<I")
    tensors: dict[str, Tensor] = {}
    for _ in range(count):
        name_len = rd.unpack("<H")
        name = rd.take(name_len).decode("utf-8")
        rank = rd.unpack("<B")
        if rank:
            dims = rd.unpack(f"<{rank}Q")
            dims = (dims,) if rank == 1 else tuple(dims)
        else:
            dims = ()
        n = int(np.prod(dims)) if dims else 1
        payload = np.frombuffer(rd.take(8 * n), dtype="<f8").reshape(dims)
        tensors[name] = Tensor(payload.astype(np.float64))
    step = rd.unpack("<Q")
    hash_len = rd.unpack("<H")
    config_hash = rd.take(hash_len).decode("utf-8")
    snap = Snapshot(tensors=tensors, step=int(step), config_hash=config_hash)
    if expected_hash is not None and config_hash != expected_hash:
        log.warning(
            "checkpoint %s was written under a different config (hash %s, expected %s)",
            path,
            config_hash,
            expected_hash,
        )
    return snap


def restore_into(snap: Snapshot, params: ParameterSet) -> tuple[ParameterSet, dict[str, Tensor]]:
    """Adopt a snapshot, insisting the architecture still lines up."""
    live, target = snap.split()
    if set(live.names()) != set(params.names()):
        raise ContractError("checkpoint tensor names do not match the current model")
    for name in params.names():
        if live[name].shape != params[name].shape:
            raise ContractError(
                f"checkpoint tensor {name} has shape {live[name].shape}, "
                f"expected {params[name].shape}"
            )
    return live, target

"""Binary checkpoint serialization.

Layout (all integers little-endian):

    bytes 0..3    magic "VCKP"
    u32           format version (currently 1)
    32 bytes      sha256 of the canonical-JSON architecture config
    u32 + bytes   metadata as UTF-8 JSON (must contain "arch")
    u32           number of named arrays
    per array:    u16 name length, name UTF-8, u8 ndim, ndim x u32 dims,
                  then rows*cols*... little-endian float32 values

Arrays cover model parameters (prefix "param.") and optimizer moments
(prefix "opt."); the Adam step count lives in the metadata.  Loading is
all-or-nothing: any truncation or mismatch raises before state is returned.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"VCKP"
VERSION = 1


class CheckpointFormatError(ValueError):
    """Corrupt or truncated checkpoint bytes."""


class CheckpointMismatchError(ValueError):
    """Checkpoint does not match the expected architecture config."""


def arch_digest(arch: dict) -> bytes:
    canonical = json.dumps(arch, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    name_b = name.encode("utf-8")
    out = struct.pack("<H", len(name_b)) + name_b
    out += struct.pack("<B", data.ndim)
    out += struct.pack(f"<{data.ndim}I", *data.shape)
    return out + data.tobytes()


def save_checkpoint(
    params: dict[str, np.ndarray],
    opt_arrays: dict[str, np.ndarray],
    meta: dict,
) -> bytes:
    """Serialize parameters + optimizer state; meta must carry "arch"."""
    if "arch" not in meta:
        raise ValueError('meta must contain an "arch" config dict')
    meta_b = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += arch_digest(meta["arch"])
    out += struct.pack("<I", len(meta_b)) + meta_b
    named = [(f"param.{k}", v) for k, v in sorted(params.items())]
    named += [(f"opt.{k}", v) for k, v in sorted(opt_arrays.items())]
    out += struct.pack("<I", len(named))
    for name, arr in named:
        out += _pack_array(name, arr)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(
                f"truncated checkpoint: needed {n} bytes at offset {self.pos}"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(data: bytes, expected_arch: dict | None = None):
    """Deserialize to (params, opt_arrays, meta).

    If ``expected_arch`` is given, its digest must equal the stored one.
    """
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic: not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointMismatchError(f"checkpoint version {version} != {VERSION}")
    stored_digest = r.take(32)
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    if "arch" not in meta or arch_digest(meta["arch"]) != stored_digest:
        raise CheckpointFormatError("architecture digest does not match metadata")
    if expected_arch is not None and arch_digest(expected_arch) != stored_digest:
        raise CheckpointMismatchError(
            "checkpoint was written for a different architecture config"
        )
    n_arrays = r.u32()
    params: dict[str, np.ndarray] = {}
    opt_arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode("utf-8")
        ndim = struct.unpack("<B", r.take(1))[0]
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim)) if ndim else ()
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
        if name.startswith("param."):
            params[name[len("param."):]] = arr
        elif name.startswith("opt."):
            opt_arrays[name[len("opt."):]] = arr
        else:
            raise CheckpointFormatError(f"unknown array section for {name!r}")
    if r.pos != len(data):
        raise CheckpointFormatError(f"{len(data) - r.pos} trailing bytes")
    return params, opt_arrays, meta

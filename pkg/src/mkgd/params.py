"""Named parameter storage, seeded initialization, and the checkpoint format.

Checkpoint layout (binary, little-endian): the magic bytes ``MKGD1``, a u32
entry count, then per entry a u32 name length, the UTF-8 name, a u32 rank,
``rank`` u32 shape dims, and the row-major float64 payload. Optimizer state
rides in the same container under a ``/adam/`` name prefix. Round-trips are
bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContractError, DataError, NumericError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MKGD1"
INIT_UNIFORM_RANGE = 0.08


class ParamStore:
    """Ordered map of trainable tensors, snapshotable bit-exactly."""

    def __init__(self, seed=0):
        self.rng_seed = seed
        self._rng = np.random.default_rng(seed)
        self._entries = {}

    def create(self, name, shape, init="uniform"):
        """Create and register a parameter.

        init: "uniform" (recurrent weights and embeddings, +-0.08),
        "xavier" (projection matrices), or "zeros" (biases).
        """
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if init == "zeros":
            vals = np.zeros(shape)
        elif init == "uniform":
            vals = self._rng.uniform(-INIT_UNIFORM_RANGE, INIT_UNIFORM_RANGE, shape)
        elif init == "xavier":
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            fan_out = shape[0]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            vals = self._rng.uniform(-bound, bound, shape)
        else:
            raise ContractError(f"unknown init {init!r}")
        t = Tensor(vals)
        self._entries[name] = t
        return t

    def add(self, name, values):
        """Register an externally built parameter (checkpoint loads, tests)."""
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64))
        self._entries[name] = t
        return t

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries.keys())

    def items(self):
        return self._entries.items()

    def snapshot(self):
        """Copy of every value array; independent of later training steps."""
        return {name: t.values.copy() for name, t in self._entries.items()}

    def restore(self, snap):
        if set(snap.keys()) != set(self._entries.keys()):
            raise ContractError("snapshot names do not match store entries")
        for name, vals in snap.items():
            t = self._entries[name]
            if vals.shape != t.values.shape:
                raise ContractError(f"snapshot shape mismatch for {name!r}")
            t.values = vals.copy()

    def set_values(self, name, values):
        t = self._entries[name]
        values = np.asarray(values, dtype=np.float64)
        if values.shape != t.values.shape:
            raise ContractError(f"shape mismatch for parameter {name!r}")
        if not np.all(np.isfinite(values)):
            raise NumericError(f"non-finite update for parameter {name!r}")
        t.values = values


def save_checkpoint(path, store, extra=None):
    """Write a parameter store (plus optional extra named arrays) to disk."""
    arrays = {name: t.values for name, t in store.items()}
    if extra:
        for name, vals in extra.items():
            if name in arrays:
                raise ContractError(f"extra entry collides with parameter {name!r}")
            arrays[name] = np.asarray(vals, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, vals in arrays.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", vals.ndim))
            for dim in vals.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(vals, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint into an ordered name -> float64 array map."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)

    def read(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise DataError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    (count,) = read("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = read("<I")
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = read("<I")
        shape = tuple(read(f"<{rank}I")) if rank else ()
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = np.frombuffer(data, dtype="<f8", count=n, offset=off)
        off += 8 * n
        arrays[name] = payload.reshape(shape).astype(np.float64)
    if off != len(data):
        raise DataError(f"{path}: trailing bytes after last entry")
    return arrays


def split_checkpoint(arrays):
    """Split a loaded checkpoint into (parameters, '/adam/'-prefixed state)."""
    params, adam = {}, {}
    for name, vals in arrays.items():
        if name.startswith("/adam/"):
            adam[name[len("/adam/"):]] = vals
        else:
            params[name] = vals
    return params, adam

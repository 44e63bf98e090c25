"""Binary checkpoint format.

Layout (little-endian)::

    8 bytes   magic b"S2SCKPT1"
    u32       format version
    u64       header length H
    H bytes   UTF-8 JSON header: arch, config, epoch, rng_state, history,
              optimizer step and a tensor table of {name, group, shape, offset}
    payload   raw float64 arrays; offsets are relative to the payload start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .pretrain import AdamWState, Checkpoint

MAGIC = b"S2SCKPT1"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, ckpt):
    groups = [("param", ckpt.params), ("m", ckpt.optimizer.m), ("v", ckpt.optimizer.v)]
    table, chunks, offset = [], [], 0
    for group, arrays in groups:
        for name, arr in arrays.items():
            a = np.require(arr, dtype="<f8", requirements="C")
            table.append({"name": name, "group": group, "shape": list(a.shape), "offset": offset})
            chunks.append(a.tobytes())
            offset += a.nbytes
    header = {
        "arch": ckpt.arch,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "history": ckpt.history,
        "optimizer_step": ckpt.optimizer.step,
        "tensors": table,
        "payload_bytes": offset,
    }
    blob = json.dumps(header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        f.write(blob)
        for c in chunks:
            f.write(c)
    return path


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"truncated checkpoint: expected at least {_PREFIX.size} bytes, got {len(raw)}")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (this reader handles {VERSION})")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise CheckpointError(f"truncated checkpoint: expected at least {start} bytes of header, got {len(raw)}")
    header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    expected = start + header["payload_bytes"]
    if len(raw) != expected:
        raise CheckpointError(f"truncated checkpoint: expected {expected} bytes, got {len(raw)}")
    groups = {"param": {}, "m": {}, "v": {}}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        lo = start + entry["offset"]
        if lo + 8 * count > expected:
            raise CheckpointError(f"tensor {entry['name']} overruns the payload")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=lo).reshape(shape).astype(np.float64)
        groups[entry["group"]][entry["name"]] = arr
    return Checkpoint(
        arch=header["arch"],
        config=header["config"],
        params=groups["param"],
        optimizer=AdamWState(header["optimizer_step"], groups["m"], groups["v"]),
        epoch=header["epoch"],
        rng_state=header["rng_state"],
        history=header["history"],
    )

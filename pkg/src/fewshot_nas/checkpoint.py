"""Versioned flat binary checkpoints for supernet stores.

Layout (little-endian)::

    magic    8 bytes  b"FSNASCKP"
    version  u32      1
    G        u32
    K        u32
    phash    64 bytes partition hash, ascii hex
    mlen     u32      length of the JSON metadata block
    meta     mlen bytes (seed, step, epoch, update_counts, partition doc, ...)
    nblobs   u32
    blob*    u16 name length | name utf-8 | u8 dtype (1=float32, 2=float64)
             | u8 ndim | u32 dims[ndim] | raw array bytes

Blob names are ``k<index>/<param>`` for weights and ``k<index>/opt/<param>``
for momentum buffers.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .engine import Tensor
from .partition import Partition, PartitionMismatchError, space_digest
from .space import SearchSpace
from .supernet import SupernetStore

MAGIC = b"FSNASCKP"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


def _blob(name: str, arr: np.ndarray) -> bytes:
    code = _CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def save_checkpoint(store: SupernetStore, path: str | Path, extra: dict | None = None) -> None:
    meta = {
        "seed": store.seed,
        "step": store.step,
        "epoch": store.epoch,
        "update_counts": list(store.update_counts),
        "space_digest": space_digest(store.space),
        "partition": store.partition.to_dict(),
    }
    if extra:
        meta["extra"] = extra
    mb = json.dumps(meta, sort_keys=True).encode()
    blobs = []
    for k, (params, state) in enumerate(zip(store.params, store.opt_state)):
        for name in sorted(params):
            blobs.append(_blob(f"k{k}/{name}", params[name].data))
        for name in sorted(state):
            blobs.append(_blob(f"k{k}/opt/{name}", state[name]))
    phash = store.partition.hash.encode()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<3I", VERSION, store.G, store.K) + phash)
        f.write(struct.pack("<I", len(mb)) + mb)
        f.write(struct.pack("<I", len(blobs)))
        for b in blobs:
            f.write(b)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, G, K = struct.unpack_from("<3I", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 20
    phash = raw[off:off + 64].decode()
    off += 64
    (mlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    meta = json.loads(raw[off:off + mlen])
    off += mlen
    meta.update(G=G, K=K, partition_hash=phash)
    (nblobs,) = struct.unpack_from("<I", raw, off)
    off += 4
    blobs = {}
    for _ in range(nblobs):
        (nlen,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + nlen].decode()
        off += nlen
        code, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        blobs[name] = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(shape).astype(dt.newbyteorder("="))
        off += count * dt.itemsize
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return meta, blobs


def load_checkpoint(path: str | Path, space: SearchSpace, partition: Partition | None = None,
                    probe_engine=None) -> SupernetStore:
    """Rebuild a store; refuses a checkpoint made for another space or partition."""
    meta, blobs = read_checkpoint(path)
    if meta["space_digest"] != space_digest(space):
        raise CheckpointError(f"{path}: checkpoint was trained on a different search space")
    stored = Partition.from_dict(meta["partition"])
    if stored.hash != meta["partition_hash"]:
        raise CheckpointError(f"{path}: header and embedded partition disagree")
    if partition is not None and partition.hash != stored.hash:
        raise PartitionMismatchError(f"{path}: checkpoint was trained under a different partition")
    params = [{} for _ in range(meta["K"])]
    state = [{} for _ in range(meta["K"])]
    for full, arr in blobs.items():
        k_s, rest = full.split("/", 1)
        k = int(k_s[1:])
        if rest.startswith("opt/"):
            state[k][rest[4:]] = arr
        else:
            params[k][rest] = Tensor(arr, requires_grad=True, name=rest)
    return SupernetStore(
        space=space, partition=stored, G=meta["G"], seed=meta["seed"], params=params, opt_state=state,
        update_counts=list(meta["update_counts"]), step=meta["step"], epoch=meta["epoch"],
        probe_engine=probe_engine,
    )

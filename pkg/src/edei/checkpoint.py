"""Binary parameter checkpoints and JSON run manifests.

Layout: ``b"EDEI"``, version byte ``1``, then one record per tensor until EOF::

    u32 name_len | name (utf-8) | u32 rank | u32 dim * rank | f64 value * prod(dims)

All integers and reals are little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .nn import ParameterStore

MAGIC = b"EDEI"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(params: ParameterStore | Mapping[str, np.ndarray]) -> bytes:
    items = params.items()
    out = [MAGIC, bytes([VERSION])]
    for name, arr in items:
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def decode(data: bytes, source: str = "<bytes>") -> ParameterStore:
    """Parse a whole checkpoint; nothing is returned unless every record is intact."""
    if len(data) < 5 or data[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    if data[4] != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {data[4]}")
    pos, arrays = 5, {}

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{source}: truncated while reading {what} at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{source}: tensor name is not utf-8") from exc
        if name in arrays:
            raise CheckpointError(f"{source}: duplicate tensor {name!r}")
        (rank,) = struct.unpack("<I", take(4, f"rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(8 * count, f"values of {name!r}"), dtype="<f8")
        arrays[name] = values.reshape(dims).astype(np.float64)
    return ParameterStore(arrays)


def save(params: ParameterStore | Mapping[str, np.ndarray], path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(encode(params))
    return path


def load(path: str | Path) -> ParameterStore:
    path = Path(path)
    return decode(path.read_bytes(), str(path))


def merge(stores: Mapping[str, ParameterStore]) -> ParameterStore:
    """Namespace several stores into one, e.g. ``{"agent0/actor": store}``."""
    out = ParameterStore()
    for prefix, store in stores.items():
        for k, v in store.items():
            out.add(f"{prefix}/{k}", v)
    return out


def split(store: ParameterStore) -> dict[str, ParameterStore]:
    """Inverse of :func:`merge`: group tensors by the prefix before the last ``/``."""
    groups: dict[str, dict[str, np.ndarray]] = {}
    for k, v in store.items():
        prefix, sep, name = k.rpartition("/")
        if not sep:
            raise CheckpointError(f"tensor {k!r} has no namespace prefix")
        groups.setdefault(prefix, {})[name] = v
    return {p: ParameterStore(a) for p, a in groups.items()}


def write_manifest(path: str | Path, **fields) -> Path:
    """Structured JSON beside run outputs: config, seeds, argv and code version."""
    path = Path(path)
    body = {"code_version": f"edei {__version__}", **fields}
    path.write_text(json.dumps(body, indent=1, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, set)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")

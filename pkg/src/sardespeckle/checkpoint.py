"""Binary parameter checkpoints.

Layout, all integers little-endian::

    magic        4 bytes   b"S2SW"
    version      u16       currently 1
    meta_len     u32       length of the JSON metadata block
    meta         meta_len  UTF-8 JSON (network config, provenance, optimiser scalars)
    n_entries    u32
    n_entries x  { name_len u16, name (UTF-8), ndim u8, dims u32 * ndim }
    payload      float32 little-endian tensors, concatenated in table order

Tensor names are the layer paths of the network (``enc0.conv1.weight``...).
Adam moments are stored as ``adam.m/<name>`` and ``adam.v/<name>``; the
frozen estimator used for change compensation as ``estimator/<name>``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .nn import AdamState, NetworkConfig, NetworkParams

__all__ = ["Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint", "params_digest"]

MAGIC = b"S2SW"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    params: NetworkParams
    adam: AdamState | None = None
    estimator: NetworkParams | None = None
    extra: dict[str, Any] = field(default_factory=dict)


def params_digest(params: NetworkParams) -> str:
    """Short content hash of the float32 weights, used as a checkpoint id."""
    import hashlib

    h = hashlib.sha256()
    for name, t in params.tensors.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    params = ckpt.params
    entries: list[tuple[str, np.ndarray]] = list(params.tensors.items())
    meta: dict[str, Any] = {
        "network": params.config.to_dict(),
        "metadata": params.metadata,
        "extra": ckpt.extra,
    }
    if ckpt.adam is not None:
        a = ckpt.adam
        meta["adam"] = {
            "lr": a.lr,
            "milestones": [list(m) for m in a.milestones],
            "beta1": a.beta1,
            "beta2": a.beta2,
            "eps": a.eps,
            "step": a.step,
            "has_moments": bool(a.m),
        }
        if a.m:
            entries += [(f"adam.m/{k}", a.m[k]) for k in params.tensors]
            entries += [(f"adam.v/{k}", a.v[k]) for k in params.tensors]
    if ckpt.estimator is not None:
        meta["estimator_metadata"] = ckpt.estimator.metadata
        entries += [(f"estimator/{k}", v) for k, v in ckpt.estimator.tensors.items()]

    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(entries))]
    for name, t in entries:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
    for _, t in entries:
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    try:
        version, meta_len = struct.unpack_from("<HI", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        off = 10
        meta = json.loads(buf[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        table = []
        for _ in range(n):
            (nl,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + nl].decode("utf-8")
            off += nl
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            table.append((name, tuple(dims)))
        tensors = {}
        for name, dims in table:
            count = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims)
            tensors[name] = arr.astype(np.float32)
            off += 4 * count
    except (struct.error, ValueError, UnicodeDecodeError, KeyError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes")

    config = NetworkConfig.from_dict(meta["network"])
    names = list(config.layer_shapes())
    params = NetworkParams(config, {k: tensors[k] for k in names}, metadata=meta.get("metadata", {}))
    adam = None
    if "adam" in meta:
        a = meta["adam"]
        adam = AdamState(
            lr=a["lr"],
            milestones=tuple((int(e), float(f)) for e, f in a["milestones"]),
            beta1=a["beta1"],
            beta2=a["beta2"],
            eps=a["eps"],
            step=a["step"],
        )
        if a.get("has_moments"):
            adam.m = {k: tensors[f"adam.m/{k}"] for k in names}
            adam.v = {k: tensors[f"adam.v/{k}"] for k in names}
    estimator = None
    if f"estimator/{names[0]}" in tensors:
        estimator = NetworkParams(
            config,
            {k: tensors[f"estimator/{k}"] for k in names},
            metadata=meta.get("estimator_metadata", {}),
        )
    return Checkpoint(params, adam, estimator, meta.get("extra", {}))

"""Self-describing binary checkpoints for SVD and Tucker states.

Layout::

    magic (8 bytes) | version (uint32 LE) | header length (uint64 LE)
    | header (UTF-8 JSON, sorted keys) | payload (little-endian float64 arrays)

The header lists every array with its offset and shape, the id maps, the
attention spec and a SHA-256 of the payload. Writing is deterministic, so
``save(load(path))`` reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .linalg import TuckerFactors
from .psirec import SvdState
from .seq_tensor import AttentionSpec, IdMap
from .tirec import TuckerState

MAGIC = b"DYNCFCK\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointIntegrityError(CheckpointError):
    pass


def _arrays(state) -> tuple[str, dict]:
    if isinstance(state, SvdState):
        return "svd", {"u": state.u, "s": state.s, "v": state.v}
    if isinstance(state, TuckerState):
        c, u1, u2, u3 = state.factors
        return "tucker", {"core": c, "u1": u1, "u2": u2, "u3": u3}
    raise TypeError(f"cannot checkpoint {type(state).__name__}")


def _check_ids(ids: list, side: str) -> list:
    out = []
    for x in ids:
        if isinstance(x, (np.integer,)):
            x = int(x)
        if not isinstance(x, (str, int)) or isinstance(x, bool):
            raise CheckpointError(f"{side} id {x!r} is neither a string nor an integer")
        out.append(x)
    return out


def dumps(state, config: dict | None = None) -> bytes:
    kind, arrays = _arrays(state)
    descriptors = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        descriptors.append({"name": name, "dtype": "<f8", "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "kind": kind,
        "arrays": descriptors,
        "user_ids": _check_ids(state.user_map.ids, "user"),
        "item_ids": _check_ids(state.item_map.ids, "item"),
        "attention": ({"L": state.attention.L, "f": state.attention.f}
                      if isinstance(state, TuckerState) else None),
        "config": config or {},
        "payload_size": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(raw)) + raw + payload


def loads(blob: bytes) -> tuple[object, dict]:
    """Parse checkpoint bytes into ``(state, config)``."""
    if len(blob) < _PREFIX.size:
        raise CheckpointIntegrityError("file is shorter than the checkpoint prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise CheckpointIntegrityError("checkpoint header is truncated")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"checkpoint header is corrupt: {exc}") from None
    payload = blob[start + hlen:]
    if len(payload) != header["payload_size"]:
        raise CheckpointIntegrityError(
            f"payload has {len(payload)} bytes, header declares {header['payload_size']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointIntegrityError("payload checksum mismatch")
    arrays = {}
    for d in header["arrays"]:
        buf = payload[d["offset"]:d["offset"] + d["nbytes"]]
        arrays[d["name"]] = np.frombuffer(buf, dtype=d["dtype"]).astype(np.float64).reshape(d["shape"])
    user_map, item_map = IdMap(header["user_ids"]), IdMap(header["item_ids"])
    if header["kind"] == "svd":
        state = SvdState(arrays["u"], arrays["s"], arrays["v"], user_map, item_map)
    elif header["kind"] == "tucker":
        att = header["attention"]
        state = TuckerState(
            TuckerFactors(arrays["core"], arrays["u1"], arrays["u2"], arrays["u3"]),
            user_map, item_map, AttentionSpec(att["L"], att["f"]),
        )
    else:
        raise CheckpointError(f"unknown state kind {header['kind']!r}")
    return state, header["config"]


def save_checkpoint(state, path, config: dict | None = None) -> Path:
    path = Path(path)
    blob = dumps(state, config)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[object, dict]:
    return loads(Path(path).read_bytes())

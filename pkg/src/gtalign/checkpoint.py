"""Single-file checkpoints: magic, JSON manifest, raw little-endian arrays.

Layout::

    b"GTCKPT01" | u64 manifest length | manifest JSON | array bytes...

The manifest lists every tensor as (section, name, shape, dtype, offset,
nbytes) with offsets relative to the start of the array area, plus a free-form
``meta`` object. Keys are sorted so identical contents give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"GTCKPT01"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, sections: Mapping[str, Mapping[str, np.ndarray]], meta: Mapping | None = None) -> str:
    """Write ``sections`` (section -> name -> array); returns the SHA-256 of the file."""
    entries, blobs, offset = [], [], 0
    for section in sorted(sections):
        for name in sorted(sections[section]):
            a = np.asarray(sections[section][name])
            a = np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))
            raw = a.tobytes()
            entries.append(
                {"section": section, "name": name, "shape": list(a.shape), "dtype": a.dtype.str, "offset": offset, "nbytes": len(raw)}
            )
            blobs.append(raw)
            offset += len(raw)
    manifest = json.dumps({"meta": dict(meta or {}), "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    payload = MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(blobs)
    p = Path(path)
    tmp = p.with_suffix(p.suffix + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(p)
    return hashlib.sha256(payload).hexdigest()


def load_checkpoint(path: str | Path) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", buf[8:16])
    try:
        manifest = json.loads(buf[16 : 16 + n])
    except ValueError as e:
        raise CheckpointError(f"{path}: corrupt manifest") from e
    base = 16 + n
    out: dict[str, dict[str, np.ndarray]] = {}
    for e in manifest["tensors"]:
        start = base + e["offset"]
        chunk = buf[start : start + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['section']}/{e['name']}")
        a = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
        out.setdefault(e["section"], {})[e["name"]] = a
    return out, manifest["meta"]


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

"""Self-describing binary container for named parameter/buffer arrays.

Layout: magic line, 8-byte little-endian header length, JSON header, then
the raw little-endian array bytes back to back. The header records name,
shape, dtype and byte offset for every entry plus free-form metadata
(seed, epoch, config hash), so files are readable without the code that
wrote them.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import SchemaError

MAGIC = b"MAGNET-PARAMS-1\n"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical(config).encode()).hexdigest()[:16]


def save_params(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        le = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append({
            "name": name,
            "shape": list(a.shape),
            "dtype": a.dtype.str.replace(">", "<").replace("=", "<"),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = _canonical({"schema_version": 1, "meta": meta or {}, "entries": entries}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise SchemaError(f"{path}: not a parameter container (bad magic)")
        hlen = int.from_bytes(f.read(8), "little")
        try:
            header = json.loads(f.read(hlen))
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: corrupt header: {e}") from e
        if header.get("schema_version") != 1:
            raise SchemaError(
                f"{path}: unsupported schema_version {header.get('schema_version')}"
            )
        blob = f.read()
    arrays = {}
    for e in header["entries"]:
        raw = blob[e["offset"] : e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise SchemaError(f"{path}: truncated data for entry '{e['name']}'")
        a = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
        arrays[e["name"]] = a
    return arrays, header.get("meta", {})


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]

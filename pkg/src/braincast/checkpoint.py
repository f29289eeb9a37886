"""Binary checkpoint files.

Layout: one line of canonical JSON (sorted keys, no spaces) followed by the
raw little-endian arrays, back to back, at the offsets the header declares.
Complex arrays are stored interleaved (re, im), which is numpy's native
layout. The header carries a SHA-256 of itself (computed with that field
removed) and of the body, so any altered byte is detected on load.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import CheckpointError

FORMAT = "braincast-checkpoint"
VERSION = 1
_DTYPES = {"<f8", "<f4", "<c16", "<c8"}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _header_digest(header: dict) -> str:
    body = {k: v for k, v in header.items() if k != "header_sha256"}
    return hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest()


def encode(arrays: dict, meta: dict) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt.str not in _DTYPES:
            raise CheckpointError(f"array {name} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dt.str,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    body = b"".join(chunks)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta,
        "arrays": entries,
        "body_bytes": len(body),
        "body_sha256": hashlib.sha256(body).hexdigest(),
    }
    header["header_sha256"] = _header_digest(header)
    return _canonical(header).encode("utf-8") + b"\n" + body


def decode(blob: bytes, source="checkpoint"):
    nl = blob.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{source}: no header line")
    line = blob[:nl]
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable header ({exc})") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise CheckpointError(f"{source}: not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{source}: unknown version {header.get('version')!r}")
    if _canonical(header).encode("utf-8") != line or header.get("header_sha256") != _header_digest(header):
        raise CheckpointError(f"{source}: header checksum mismatch")
    body = blob[nl + 1:]
    if len(body) != header["body_bytes"]:
        raise CheckpointError(
            f"{source}: body has {len(body)} bytes, header declares {header['body_bytes']} (truncated?)")
    if hashlib.sha256(body).hexdigest() != header["body_sha256"]:
        raise CheckpointError(f"{source}: body checksum mismatch")
    arrays, expect = {}, 0
    for e in header["arrays"]:
        if e["offset"] != expect:
            raise CheckpointError(f"{source}: array {e['name']} at offset {e['offset']}, expected {expect}")
        if e["dtype"] not in _DTYPES:
            raise CheckpointError(f"{source}: array {e['name']} has unknown dtype {e['dtype']}")
        dt = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"], dtype=np.int64))
        if n * dt.itemsize != e["nbytes"]:
            raise CheckpointError(f"{source}: array {e['name']} size disagrees with its shape")
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="))
        expect += e["nbytes"]
    if expect != len(body):
        raise CheckpointError(f"{source}: {len(body) - expect} trailing body bytes")
    return arrays, header["meta"]


def save_checkpoint(path, arrays: dict, meta: dict):
    blob = encode(arrays, meta)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
    return len(blob)


def load_checkpoint(path):
    """Return ``(arrays, meta)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        return decode(fh.read(), source=os.fspath(path))

"""Named-array persistence: one binary payload plus a plain-text manifest.

Layout on disk (two files sharing a stem):

  <stem>.bin       raw little-endian array bytes, concatenated
  <stem>.manifest  line-oriented text:
                     blob-format 1
                     meta <key> <value>          (zero or more)
                     tensor <name> <dtype> <dims> <offset> <nbytes>
                     sha256 <hex digest of the .bin payload>

Dims are comma-separated; a scalar writes "-". Only '<f8' and '<f4' payloads
are accepted. The digest line is mandatory and checked on load.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from dtam.errors import CorruptionError, DataError

FORMAT_LINE = "blob-format 1"
_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


def _dims_token(shape: tuple) -> str:
    if not shape:
        return "-"
    return ",".join(str(d) for d in shape)


def _parse_dims(token: str) -> tuple:
    if token == "-":
        return ()
    return tuple(int(d) for d in token.split(","))


def save_tensor_blob(stem, arrays: dict, meta: dict | None = None) -> None:
    """Write ``{name: ndarray}`` to <stem>.bin / <stem>.manifest."""
    stem = Path(stem)
    payload = bytearray()
    lines = [FORMAT_LINE]
    for key, value in sorted((meta or {}).items()):
        key = str(key)
        value = str(value)
        if " " in key or "\n" in key or "\n" in value:
            raise DataError(f"meta entry {key!r} contains whitespace separators")
        lines.append(f"meta {key} {value}")
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.dtype == np.float32:
            arr = arr.astype("<f4")
            tag = "<f4"
        else:
            arr = arr.astype("<f8")
            tag = "<f8"
        if " " in name or "\n" in name:
            raise DataError(f"tensor name {name!r} contains whitespace")
        raw = np.ascontiguousarray(arr).tobytes()
        lines.append(
            f"tensor {name} {tag} {_dims_token(arr.shape)} {len(payload)} {len(raw)}"
        )
        payload.extend(raw)
    digest = hashlib.sha256(bytes(payload)).hexdigest()
    lines.append(f"sha256 {digest}")
    stem.with_suffix(".bin").write_bytes(bytes(payload))
    stem.with_suffix(".manifest").write_text("\n".join(lines) + "\n")


def load_tensor_blob(stem) -> tuple:
    """Read back ``(arrays, meta)``; raises CorruptionError on any mismatch."""
    stem = Path(stem)
    manifest_path = stem.with_suffix(".manifest")
    bin_path = stem.with_suffix(".bin")
    if not manifest_path.exists() or not bin_path.exists():
        raise DataError(f"missing blob files for stem {stem}")
    payload = bin_path.read_bytes()
    lines = manifest_path.read_text().splitlines()
    if not lines or lines[0] != FORMAT_LINE:
        raise CorruptionError(f"unrecognized manifest header in {manifest_path}")
    meta = {}
    entries = []
    digest = None
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(" ")
        if parts[0] == "meta":
            if len(parts) < 3:
                raise CorruptionError(f"malformed meta line: {line!r}")
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "tensor":
            if len(parts) != 6:
                raise CorruptionError(f"malformed tensor line: {line!r}")
            entries.append(parts[1:])
        elif parts[0] == "sha256":
            if len(parts) != 2:
                raise CorruptionError(f"malformed digest line: {line!r}")
            digest = parts[1]
        else:
            raise CorruptionError(f"unknown manifest record: {line!r}")
    if digest is None:
        raise CorruptionError(f"manifest {manifest_path} lacks a sha256 line")
    actual = hashlib.sha256(payload).hexdigest()
    if actual != digest:
        raise CorruptionError(
            f"payload digest mismatch for {bin_path}: manifest {digest[:12]}..., "
            f"actual {actual[:12]}..."
        )
    arrays = {}
    for name, tag, dims_token, offset_s, nbytes_s in entries:
        if tag not in _DTYPES:
            raise CorruptionError(f"unsupported dtype tag {tag!r} for {name!r}")
        dtype = _DTYPES[tag]
        shape = _parse_dims(dims_token)
        offset, nbytes = int(offset_s), int(nbytes_s)
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        if nbytes != expected:
            raise CorruptionError(
                f"tensor {name!r}: manifest says {nbytes} bytes, shape needs {expected}"
            )
        if offset < 0 or offset + nbytes > len(payload):
            raise CorruptionError(f"tensor {name!r} extends past payload end")
        arrays[name] = np.frombuffer(
            payload, dtype=dtype, count=expected // dtype.itemsize, offset=offset
        ).reshape(shape).copy()
    return arrays, meta

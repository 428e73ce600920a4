"""Binary snapshot/grid serialization, CSV reports, and hashed run manifests.

All numeric payloads are little-endian float64.  Every file opens with the
same 64-byte header::

    offset  size  field
    0       6     magic  b"VRTXS1"
    6       1     kind   (1 = grid, 2 = ensemble series)  uint8
    7       1     ndim   uint8
    8       16    resolutions, 4 x uint32 little-endian (unused entries 0)
    24      32    extents, 4 x float64 little-endian (unused entries 0.0)
    56      8     aux    uint64 little-endian

For ``kind=grid`` axis ``i`` is ``linspace(-extent[i], extent[i],
resolution[i])`` and the payload is the C-ordered value array.  For
``kind=ensemble`` ``ndim`` is the spatial dimension ``d``,
``resolutions[0] = N`` (particles), ``resolutions[1] = S`` (snapshots) and
``aux`` is the byte length of the trailing UTF-8 metadata block; the payload
is the ``S`` snapshot times followed by the ``S x N x d`` position block and
the metadata (``key=value`` lines).
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "IntegrityError",
    "FormatError",
    "write_grid",
    "read_grid",
    "write_ensemble_series",
    "read_ensemble_series",
    "write_report",
    "read_report",
    "write_manifest",
    "read_manifest",
    "verify_manifest",
    "file_sha256",
]

MAGIC = b"VRTXS1"
KIND_GRID = 1
KIND_ENSEMBLE = 2
_HEADER = struct.Struct("<6sBB4I4dQ")
assert _HEADER.size == 64


class FormatError(ValueError):
    """Malformed or unrecognized binary file."""


class IntegrityError(RuntimeError):
    """Artifact missing, truncated, or failing its recorded hash."""


def _pack_header(kind: int, ndim: int, resolutions, extents, aux: int) -> bytes:
    res = list(resolutions) + [0] * (4 - len(resolutions))
    ext = list(extents) + [0.0] * (4 - len(extents))
    return _HEADER.pack(MAGIC, kind, ndim, *res, *ext, aux)


def _unpack_header(blob: bytes):
    if len(blob) < 64:
        raise FormatError("file shorter than the 64-byte header")
    magic, kind, ndim, r0, r1, r2, r3, e0, e1, e2, e3, aux = _HEADER.unpack(blob[:64])
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    return kind, ndim, (r0, r1, r2, r3), (e0, e1, e2, e3), aux


def write_grid(path, values: np.ndarray, extents) -> None:
    """Serialize a symmetric-axis grid (values over linspace(-e, e, res) per axis)."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim > 4:
        raise FormatError("at most 4 grid axes are supported")
    extents = [float(e) for e in np.atleast_1d(extents)]
    if len(extents) != values.ndim:
        raise FormatError("one extent per grid axis required")
    with open(path, "wb") as fh:
        fh.write(_pack_header(KIND_GRID, values.ndim, values.shape, extents, 0))
        fh.write(values.tobytes())


def read_grid(path):
    """Return (values, axes) for a grid file."""
    blob = Path(path).read_bytes()
    kind, ndim, res, ext, _ = _unpack_header(blob)
    if kind != KIND_GRID:
        raise FormatError(f"expected a grid file, found kind={kind}")
    shape = res[:ndim]
    count = int(np.prod(shape))
    body = blob[64 : 64 + 8 * count]
    if len(body) != 8 * count:
        raise FormatError("truncated grid payload")
    values = np.frombuffer(body, dtype="<f8").reshape(shape).copy()
    axes = tuple(np.linspace(-ext[i], ext[i], res[i]) for i in range(ndim))
    return values, axes


def write_ensemble_series(path, times: np.ndarray, snapshots: np.ndarray, metadata: dict) -> None:
    """Serialize S snapshots of an N-particle d-dimensional ensemble."""
    snapshots = np.ascontiguousarray(snapshots, dtype="<f8")
    times = np.ascontiguousarray(times, dtype="<f8")
    if snapshots.ndim != 3:
        raise FormatError("snapshots must have shape (S, N, d)")
    s, n, d = snapshots.shape
    if times.shape != (s,):
        raise FormatError("one time per snapshot required")
    meta = "".join(f"{k}={v}\n" for k, v in sorted(metadata.items())).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_pack_header(KIND_ENSEMBLE, d, (n, s), (), len(meta)))
        fh.write(times.tobytes())
        fh.write(snapshots.tobytes())
        fh.write(meta)


def read_ensemble_series(path):
    """Return (times, snapshots, metadata) for an ensemble-series file."""
    blob = Path(path).read_bytes()
    kind, d, res, _, aux = _unpack_header(blob)
    if kind != KIND_ENSEMBLE:
        raise FormatError(f"expected an ensemble file, found kind={kind}")
    n, s = res[0], res[1]
    off = 64
    times = np.frombuffer(blob[off : off + 8 * s], dtype="<f8").copy()
    off += 8 * s
    body = blob[off : off + 8 * s * n * d]
    if len(times) != s or len(body) != 8 * s * n * d:
        raise FormatError("truncated ensemble payload")
    snapshots = np.frombuffer(body, dtype="<f8").reshape(s, n, d).copy()
    off += 8 * s * n * d
    meta_blob = blob[off : off + aux].decode("utf-8")
    metadata = {}
    for line in meta_blob.splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            metadata[k] = v
    return times, snapshots, metadata


def write_report(path, header: list[str], rows: list) -> None:
    """RFC-4180 CSV with a header row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        w.writerows(rows)


def read_report(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, config: dict, artifacts: list[str | Path], extra: dict | None = None) -> dict:
    """Record config plus (path, sha256, bytes) for each artifact; returns the manifest."""
    base = Path(path).parent
    entries = []
    for art in artifacts:
        art = Path(art)
        entries.append(
            {
                "path": str(art.relative_to(base) if art.is_absolute() else art),
                "sha256": file_sha256(art),
                "bytes": art.stat().st_size,
            }
        )
    manifest = {"config": config, "artifacts": entries}
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def verify_manifest(path) -> dict:
    """Re-hash every listed artifact; raise IntegrityError on any mismatch."""
    manifest = read_manifest(path)
    base = Path(path).parent
    for entry in manifest.get("artifacts", []):
        art = base / entry["path"]
        if not art.exists():
            raise IntegrityError(f"missing artifact {art}")
        if art.stat().st_size != entry["bytes"]:
            raise IntegrityError(f"size mismatch for {art}")
        digest = file_sha256(art)
        if digest != entry["sha256"]:
            raise IntegrityError(f"hash mismatch for {art}")
    return manifest

"""File formats: a little-endian NIfTI-1 subset, landmark CSV, JSON documents.

Orientation (qform/sform) is ignored on read and zeroed on write; spacing
comes from ``pixdim[1:4]`` and registration works in voxel space.
Written headers are fully deterministic and gzip output carries no
timestamp, so identical inputs produce byte-identical files.
"""
import csv
import gzip
import json
import os
import struct
import tempfile

import numpy as np

from .config import parse_config, serialize_config  # noqa: F401  (re-exported)
from .errors import (BadMagic, IoFailure, NonPositivePixdim, ParseError, Truncated,
                     UnsupportedDatatype)
from .grid import VectorField, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
INTENT_VECTOR = 1007

DATATYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4"), 64: np.dtype("<f8")}


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise Truncated(f"{path}: corrupt gzip stream: {exc}") from exc
    return raw


def read_header(raw, path="<bytes>"):
    """Decode the used subset of a NIfTI-1 header into a dict."""
    if len(raw) < HEADER_SIZE:
        raise Truncated(f"{path}: {len(raw)} bytes is shorter than a NIfTI-1 header")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
            raise UnsupportedDatatype(f"{path}: big-endian NIfTI is not supported; "
                                      "convert to little-endian first")
        raise BadMagic(f"{path}: sizeof_hdr is {sizeof_hdr}, expected 348")
    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise BadMagic(f"{path}: magic {magic!r} is not single-file NIfTI-1 'n+1\\0'")
    dim = struct.unpack_from("<8h", raw, 40)
    datatype, bitpix = struct.unpack_from("<2h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset, slope, inter = struct.unpack_from("<3f", raw, 108)
    (intent_code,) = struct.unpack_from("<h", raw, 68)
    ndim = dim[0]
    if not 1 <= ndim <= 7 or any(not 1 <= d <= 4096 for d in dim[1:ndim + 1]):
        raise Truncated(f"{path}: invalid dim field {dim}")
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"{path}: datatype {datatype} (supported: 2, 4, 16, 64)")
    return {"dim": dim, "datatype": datatype, "bitpix": bitpix, "pixdim": pixdim,
            "vox_offset": vox_offset, "scl_slope": slope, "scl_inter": inter,
            "intent_code": intent_code}


def _decode(path):
    raw = _read_bytes(path)
    hdr = read_header(raw, path)
    ndim = hdr["dim"][0]
    shape = tuple(hdr["dim"][1:ndim + 1]) + (1,) * max(0, 3 - ndim)
    spacing = tuple(float(p) if i < ndim else 1.0 for i, p in enumerate(hdr["pixdim"][1:4]))
    if any(not s > 0 for s in spacing):
        raise NonPositivePixdim(f"{path}: pixdim {hdr['pixdim'][1:4]} must be positive")
    dtype = DATATYPES[hdr["datatype"]]
    offset = int(hdr["vox_offset"])
    if offset < VOX_OFFSET:
        # some writers leave vox_offset at 0 for .nii; data still starts after the extension flag
        offset = VOX_OFFSET
    count = int(np.prod(shape))
    if len(raw) < offset + count * dtype.itemsize:
        raise Truncated(f"{path}: expected {count} voxels after offset {offset}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if np.isfinite(slope) and slope != 0:
        data = data * slope + (inter if np.isfinite(inter) else 0.0)
    return hdr, data, spacing


def read_volume(path):
    """Read a 3-D scalar volume; trailing singleton dims beyond 3 are dropped."""
    hdr, data, spacing = _decode(path)
    if data.ndim > 3:
        if any(n != 1 for n in data.shape[3:]):
            raise UnsupportedDatatype(f"{path}: shape {data.shape} is not a 3-D volume")
        data = data.reshape(data.shape[:3])
    return Volume(data, spacing)


def read_field(path):
    """Read a displacement field stored as ``[nx, ny, nz, 1, 3]`` (or ``[nx, ny, nz, 3]``)."""
    hdr, data, spacing = _decode(path)
    if data.ndim == 5 and data.shape[3] == 1 and data.shape[4] == 3:
        data = data[:, :, :, 0, :]
    elif not (data.ndim == 4 and data.shape[3] == 3):
        raise UnsupportedDatatype(f"{path}: shape {data.shape} is not a 3-vector field")
    return VectorField(data, spacing)


def _header(shape, spacing, intent_code=0):
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    dim = [len(shape)] + list(shape) + [1] * (7 - len(shape))
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 68, intent_code)
    struct.pack_into("<2h", hdr, 70, 16, 32)
    pixdim = [1.0] + list(spacing) + [1.0] * 4
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<3f", hdr, 108, float(VOX_OFFSET), 1.0, 0.0)
    hdr[38:39] = b"r"
    hdr[123] = 2  # xyzt_units: millimetres
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def encode(data, spacing, intent_code=0):
    """Serialize a float array (Fortran order) as NIfTI-1 float32 bytes."""
    arr = np.asarray(data)
    payload = arr.astype("<f4").tobytes(order="F")
    return _header(arr.shape, spacing, intent_code) + b"\x00" * 4 + payload


def atomic_write(path, payload):
    """Write to a temporary file next to ``path`` and rename it into place."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(folder, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-")
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _maybe_gzip(path, payload):
    if os.fspath(path).endswith(".gz"):
        return gzip.compress(payload, mtime=0)
    return payload


def write_volume(vol, path):
    atomic_write(path, _maybe_gzip(path, encode(np.asarray(vol), vol.spacing)))


def write_field(u, path):
    arr = np.asarray(u)
    data = arr.reshape(arr.shape[:3] + (1, 3))
    atomic_write(path, _maybe_gzip(path, encode(data, u.spacing, INTENT_VECTOR)))


def read_landmarks(path):
    """Parse ``x,y,z`` rows (optional header) into an ``(n, 3)`` float array."""
    points = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    for lineno, row in enumerate(rows, start=1):
        cells = [c.strip() for c in row]
        if not cells or all(c == "" for c in cells):
            continue
        if lineno == 1 and [c.lower() for c in cells] == ["x", "y", "z"]:
            continue
        if len(cells) != 3:
            raise ParseError(f"expected 3 columns, got {len(cells)}", lineno)
        try:
            points.append([float(c) for c in cells])
        except ValueError as exc:
            raise ParseError(f"not a number in {row!r}", lineno) from exc
    return np.array(points, dtype=np.float64).reshape(-1, 3)


def format_landmarks(points):
    lines = ["x,y,z"] + [",".join(repr(float(c)) for c in p) for p in np.asarray(points)]
    return "\n".join(lines) + "\n"


def write_landmarks(points, path):
    atomic_write(path, format_landmarks(points).encode("utf-8"))


def dumps_json(doc):
    """JSON text with sorted keys; floats keep full repr precision."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_json(doc, path):
    atomic_write(path, dumps_json(doc).encode("utf-8"))

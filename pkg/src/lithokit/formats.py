"""On-disk artifact formats.

Masks and resist images are 8-bit binary PGM (P5; 0 = absorber,
255 = open). Aerial images are little-endian PFM. Kernel stacks use
the NKRN container and network checkpoints the NMLP container, both
little-endian binary with a length-prefixed JSON trailer that makes
the file self-describing. Every writer goes through a temp file and
an atomic rename so partial outputs never land under the final name.
"""

import csv
import io
import json
import os
import struct

import numpy as np

from .errors import DataError, FormatError
from .neural import CMlpParams
from .optics import KernelStack

NKRN_MAGIC = b"NKRN"
NMLP_MAGIC = b"NMLP"
FORMAT_VERSION = 1


def atomic_write_bytes(path, data):
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read_file(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _take(buf, offset, count, path, what):
    if offset + count > len(buf):
        raise FormatError(f"{path}: truncated while reading {what}")
    return buf[offset:offset + count], offset + count


# -- netpbm / PFM ------------------------------------------------------------

def _next_token(buf, offset, path):
    n = len(buf)
    while offset < n:
        c = buf[offset:offset + 1]
        if c == b"#":  # comment runs to end of line
            while offset < n and buf[offset:offset + 1] not in (b"\n", b"\r"):
                offset += 1
        elif c.isspace():
            offset += 1
        else:
            break
    start = offset
    while offset < n and not buf[offset:offset + 1].isspace():
        offset += 1
    if start == offset:
        raise FormatError(f"{path}: truncated header")
    return buf[start:offset], offset + 1  # consume single whitespace after token


def write_pfm(path, arr):
    """Grayscale PFM, float32, negative scale marking little-endian.

    Rows are stored bottom-up per the format; values are written as-is.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"PFM writer needs a 2D grid, got shape {arr.shape}")
    rows, cols = arr.shape
    header = f"Pf\n{cols} {rows}\n-1.0\n".encode("ascii")
    data = np.flipud(arr).astype("<f4").tobytes()
    atomic_write_bytes(path, header + data)


def read_pfm(path):
    buf = _read_file(path)
    magic, offset = _next_token(buf, 0, path)
    if magic != b"Pf":
        raise FormatError(f"{path}: bad PFM magic {magic!r}")
    wtok, offset = _next_token(buf, offset, path)
    htok, offset = _next_token(buf, offset, path)
    stok, offset = _next_token(buf, offset, path)
    try:
        cols, rows, scale = int(wtok), int(htok), float(stok)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PFM header fields") from exc
    if cols < 1 or rows < 1:
        raise FormatError(f"{path}: bad PFM dims {cols}x{rows}")
    if scale >= 0:
        raise FormatError(f"{path}: big-endian PFM not supported (scale {scale})")
    data, offset = _take(buf, offset, rows * cols * 4, path, "pixel data")
    if offset != len(buf):
        raise FormatError(f"{path}: trailing bytes after PFM data")
    arr = np.frombuffer(data, dtype="<f4").reshape(rows, cols)
    return np.flipud(arr).astype(np.float64)


def write_pgm(path, arr):
    """Binary mask as 8-bit PGM P5: value 1 -> 255 (open), 0 -> 0 (absorber)."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"PGM writer needs a 2D grid, got shape {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise DataError("PGM writer needs a binary grid")
    rows, cols = arr.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    data = (arr * 255).astype(np.uint8).tobytes()
    atomic_write_bytes(path, header + data)


def read_pgm(path):
    buf = _read_file(path)
    magic, offset = _next_token(buf, 0, path)
    if magic != b"P5":
        raise FormatError(f"{path}: bad PGM magic {magic!r}")
    wtok, offset = _next_token(buf, offset, path)
    htok, offset = _next_token(buf, offset, path)
    mtok, offset = _next_token(buf, offset, path)
    try:
        cols, rows, maxval = int(wtok), int(htok), int(mtok)
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header fields") from exc
    if cols < 1 or rows < 1:
        raise FormatError(f"{path}: bad PGM dims {cols}x{rows}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}")
    data, offset = _take(buf, offset, rows * cols, path, "pixel data")
    if offset != len(buf):
        raise FormatError(f"{path}: trailing bytes after PGM data")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(rows, cols)
    return (arr >= 128).astype(np.float64)


# -- NKRN kernel stacks ------------------------------------------------------

def write_nkrn(path, stack):
    """Serialize a kernel stack: header, r*n*m complex f64 pairs, JSON trailer."""
    head = struct.pack("<4sIIII", NKRN_MAGIC, FORMAT_VERSION,
                       stack.r, stack.n, stack.m)
    data = np.ascontiguousarray(stack.kernels, dtype="<c16").tobytes()
    trailer = json.dumps({
        "wavelength_nm": stack.wavelength_nm,
        "numerical_aperture": stack.numerical_aperture,
        "pixel_size_nm": stack.pixel_size_nm,
        "provenance": stack.provenance,
    }).encode("utf-8")
    atomic_write_bytes(path, head + data + struct.pack("<I", len(trailer)) + trailer)


def read_nkrn(path):
    buf = _read_file(path)
    head, offset = _take(buf, 0, struct.calcsize("<4sIIII"), path, "NKRN header")
    magic, version, r, n, m = struct.unpack("<4sIIII", head)
    if magic != NKRN_MAGIC:
        raise FormatError(f"{path}: bad NKRN magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported NKRN version {version}")
    if r < 1 or n < 1 or m < 1 or n % 2 == 0 or m % 2 == 0:
        raise FormatError(f"{path}: invalid kernel dims r={r}, n={n}, m={m}")
    data, offset = _take(buf, offset, r * n * m * 16, path, "kernel data")
    kernels = np.frombuffer(data, dtype="<c16").reshape(r, n, m).astype(np.complex128)
    meta, offset = _read_trailer(buf, offset, path)
    if offset != len(buf):
        raise FormatError(f"{path}: trailing bytes after NKRN trailer")
    try:
        return KernelStack(
            kernels=kernels,
            wavelength_nm=float(meta["wavelength_nm"]),
            numerical_aperture=float(meta["numerical_aperture"]),
            pixel_size_nm=float(meta["pixel_size_nm"]),
            provenance=str(meta["provenance"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad NKRN trailer fields: {exc}") from exc


def _read_trailer(buf, offset, path):
    raw, offset = _take(buf, offset, 4, path, "trailer length")
    (length,) = struct.unpack("<I", raw)
    raw, offset = _take(buf, offset, length, path, "JSON trailer")
    try:
        return json.loads(raw.decode("utf-8")), offset
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad JSON trailer: {exc}") from exc


# -- NMLP checkpoints --------------------------------------------------------

def write_nmlp(path, params, encoder_spec):
    """Serialize network parameters with the encoder spec in the trailer.

    Layout: magic, version, layer count, per-layer (out, in) dims, then
    per layer the weight matrix followed by the bias vector, complex
    f64 little-endian.
    """
    nl = len(params.weights)
    head = struct.pack("<4sII", NMLP_MAGIC, FORMAT_VERSION, nl)
    dims = b"".join(
        struct.pack("<II", W.shape[0], W.shape[1]) for W in params.weights
    )
    payload = []
    for W, b in zip(params.weights, params.biases):
        payload.append(np.ascontiguousarray(W, dtype="<c16").tobytes())
        payload.append(np.ascontiguousarray(b, dtype="<c16").tobytes())
    trailer = json.dumps({"encoder": encoder_spec}).encode("utf-8")
    atomic_write_bytes(
        path,
        head + dims + b"".join(payload) + struct.pack("<I", len(trailer)) + trailer,
    )


def read_nmlp(path):
    """Read a checkpoint; returns (CMlpParams, encoder spec dict)."""
    buf = _read_file(path)
    head, offset = _take(buf, 0, struct.calcsize("<4sII"), path, "NMLP header")
    magic, version, nl = struct.unpack("<4sII", head)
    if magic != NMLP_MAGIC:
        raise FormatError(f"{path}: bad NMLP magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported NMLP version {version}")
    if nl < 1:
        raise FormatError(f"{path}: layer count must be >= 1, got {nl}")
    shapes = []
    for i in range(nl):
        raw, offset = _take(buf, offset, 8, path, f"layer {i} dims")
        out_w, in_w = struct.unpack("<II", raw)
        if out_w < 1 or in_w < 1:
            raise FormatError(f"{path}: layer {i} has empty dims ({out_w}, {in_w})")
        shapes.append((out_w, in_w))
    weights, biases = [], []
    for i, (out_w, in_w) in enumerate(shapes):
        raw, offset = _take(buf, offset, out_w * in_w * 16, path, f"layer {i} weights")
        weights.append(np.frombuffer(raw, dtype="<c16").reshape(out_w, in_w)
                       .astype(np.complex128))
        raw, offset = _take(buf, offset, out_w * 16, path, f"layer {i} biases")
        biases.append(np.frombuffer(raw, dtype="<c16").astype(np.complex128))
    meta, offset = _read_trailer(buf, offset, path)
    if offset != len(buf):
        raise FormatError(f"{path}: trailing bytes after NMLP trailer")
    if "encoder" not in meta:
        raise FormatError(f"{path}: NMLP trailer missing encoder spec")
    try:
        params = CMlpParams(weights=weights, biases=biases)
    except Exception as exc:
        raise FormatError(f"{path}: inconsistent layer chain: {exc}") from exc
    return params, meta["encoder"]


# -- JSON / CSV --------------------------------------------------------------

def write_json(path, obj):
    atomic_write_bytes(path, (json.dumps(obj, indent=2) + "\n").encode("utf-8"))


def read_json(path):
    buf = _read_file(path)
    try:
        return json.loads(buf.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad JSON: {exc}") from exc


def write_csv(path, rows):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerows(rows)
    atomic_write_bytes(path, out.getvalue().encode("utf-8"))

"""Binary tensor container (``.melt``) and newline-delimited JSON label files.

Container layout, all integers little-endian::

    magic    4 bytes  b"MELT"
    version  u32      1
    ndim     u32
    dims     ndim x u64
    dtype    u32      1 = float32, 2 = uint32, 3 = uint8
    meta_len u64
    meta     meta_len bytes of UTF-8 JSON
    payload  row-major data
"""
from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError, TruncationError, UnsupportedDtype
from .model import OrientedBox3D

MAGIC = b"MELT"
VERSION = 1

DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<u4"), 3: np.dtype("u1")}
DTYPE_CODES = {v: k for k, v in DTYPES.items()}


def _dtype_code(dtype) -> int:
    dt = np.dtype(dtype).newbyteorder("<") if np.dtype(dtype).itemsize > 1 else np.dtype(dtype)
    try:
        return DTYPE_CODES[dt]
    except KeyError:
        raise UnsupportedDtype(f"dtype {dtype} cannot be stored (float32, uint32, uint8 only)") from None


def encode_tensor(tensor, meta=None) -> bytes:
    arr = np.asarray(tensor)
    code = _dtype_code(arr.dtype)
    meta_bytes = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = [MAGIC, struct.pack("<II", VERSION, arr.ndim)]
    header.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    header.append(struct.pack("<IQ", code, len(meta_bytes)))
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    return b"".join(header) + meta_bytes + payload


def decode_tensor(buf: bytes, source="<bytes>"):
    """Parse a container; return ``(array, meta)``."""
    mv = memoryview(buf)
    if len(buf) < 12 or bytes(mv[:4]) != MAGIC:
        raise FormatError(f"{source}: not a MELT tensor container")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported container version {version}")
    off = 12
    need = off + 8 * ndim + 12
    if len(buf) < need:
        raise TruncationError(f"{source}: header truncated ({len(buf)} < {need} bytes)")
    dims = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    code, meta_len = struct.unpack_from("<IQ", buf, off)
    off += 12
    if code not in DTYPES:
        raise UnsupportedDtype(f"{source}: unknown dtype code {code}")
    if len(buf) < off + meta_len:
        raise TruncationError(f"{source}: metadata truncated")
    try:
        meta = json.loads(bytes(mv[off : off + meta_len]).decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{source}: bad metadata: {e}") from None
    off += meta_len
    dtype = DTYPES[code]
    expected = math.prod(dims) * dtype.itemsize
    got = len(buf) - off
    if got < expected:
        raise TruncationError(f"{source}: payload has {got} bytes, header implies {expected}")
    if got > expected:
        raise FormatError(f"{source}: {got - expected} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=dtype, count=math.prod(dims), offset=off).reshape(dims).copy()
    return arr, meta


def write_tensor(path, tensor, meta=None) -> None:
    data = encode_tensor(tensor, meta)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read(), source=str(path))


def read_header(path) -> dict:
    """Header fields without loading the payload into an array."""
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise FormatError(f"{path}: not a MELT tensor container")
        version, ndim = struct.unpack_from("<II", head, 4)
        rest = fh.read(8 * ndim + 12)
        if len(rest) < 8 * ndim + 12:
            raise TruncationError(f"{path}: header truncated")
        dims = struct.unpack_from(f"<{ndim}Q", rest, 0)
        code, meta_len = struct.unpack_from("<IQ", rest, 8 * ndim)
        meta = json.loads(fh.read(meta_len).decode("utf-8")) if meta_len else {}
    size = os.path.getsize(path)
    return {
        "version": version,
        "dims": list(dims),
        "dtype": str(DTYPES[code]) if code in DTYPES else f"unknown({code})",
        "meta": meta,
        "bytes": size,
    }


# --- label files -----------------------------------------------------------

_REQUIRED = ("class", "cx", "cy", "cz", "h", "w", "l", "yaw")
_OPTIONAL = ("score", "height_px", "occlusion", "truncation", "frame")


def _box_from_record(rec: dict, lineno: int) -> OrientedBox3D:
    if not isinstance(rec, dict):
        raise ParseError("record is not a JSON object", lineno)
    for key in _REQUIRED:
        if key not in rec:
            raise ParseError(f"missing required field {key!r}", lineno)
    vals = {}
    for key in _REQUIRED[1:]:
        v = rec[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"field {key!r} must be a finite number", lineno)
        vals[key] = float(v)
    if vals["h"] <= 0 or vals["w"] <= 0 or vals["l"] <= 0:
        raise ParseError("box dimensions must be positive", lineno)
    extra = {}
    for key in ("score", "height_px", "truncation"):
        if rec.get(key) is not None:
            extra[key] = float(rec[key])
    if rec.get("occlusion") is not None:
        extra["occlusion"] = int(rec["occlusion"])
    return OrientedBox3D(label=str(rec["class"]), **vals, **extra)


def box_to_record(box: OrientedBox3D, frame=None) -> dict:
    rec = {"class": box.label, "cx": box.cx, "cy": box.cy, "cz": box.cz,
           "h": box.h, "w": box.w, "l": box.l, "yaw": box.yaw}
    for key in ("score", "height_px", "occlusion", "truncation"):
        v = getattr(box, key)
        if v is not None:
            rec[key] = v
    if frame is not None:
        rec["frame"] = frame
    return rec


def read_labels(path, with_frames: bool = False):
    """Parse a label file; optionally also return each record's frame id."""
    boxes, frames = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", lineno) from None
            boxes.append(_box_from_record(rec, lineno))
            frames.append(rec.get("frame", 0) if isinstance(rec, dict) else 0)
    return (boxes, frames) if with_frames else boxes


def write_labels(path, boxes, frames=None) -> None:
    # json.dumps uses repr() for floats, which round-trips exactly
    lines = []
    for i, b in enumerate(boxes):
        lines.append(json.dumps(box_to_record(b, None if frames is None else frames[i])))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))

"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"SAFCKPT\\0"
    version    u16       1
    hdr_len    u32
    header     hdr_len bytes of UTF-8 JSON {"architecture": ..., "manifest": ...}
    records    per weighted layer: weights, then bias; each record is
               dtype tag u8 (0=fp32, 1=fp16, 2=q25), ndim u8, dims u32[ndim],
               then the encoded values
    crc32      u32 over every preceding byte

Weights are stored raw (never passed through the SAF).
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import codec
from .codec import BitBuffer, StoredDType
from .errors import FormatError, StorageError
from .network import Model, build_model

MAGIC = b"SAFCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sHI")


def _record(arr: np.ndarray, dtype=StoredDType.FP32) -> bytes:
    buf = codec.encode(arr, dtype)
    head = struct.pack(f"<BB{arr.ndim}I", dtype.tag, arr.ndim, *arr.shape)
    return head + buf.words


def checkpoint_bytes(model: Model, manifest: dict | None = None) -> bytes:
    header = json.dumps(
        {"architecture": model.describe(), "manifest": manifest or {}}, sort_keys=True
    ).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(header)), header]
    for layer in model.weighted:
        parts.append(_record(layer.weights))
        parts.append(_record(layer.bias))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: Model, manifest: dict | None, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(checkpoint_bytes(model, manifest))
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from None
    return path


def _parse(raw: bytes, where: str):
    if len(raw) < _PREFIX.size + 4:
        raise FormatError(f"{where}: truncated checkpoint ({len(raw)} bytes)")
    magic, version, hdr_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{where}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{where}: unsupported checkpoint version {version} (expected {VERSION})")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise FormatError(f"{where}: checksum mismatch (truncated or corrupted)")
    off = _PREFIX.size
    try:
        header = json.loads(raw[off:off + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{where}: unreadable header: {exc}") from None
    off += hdr_len
    records = []
    end = len(raw) - 4
    while off < end:
        if off + 2 > end:
            raise FormatError(f"{where}: truncated record at byte offset {off}")
        tag, ndim = raw[off], raw[off + 1]
        dtype = StoredDType.from_tag(tag)
        if off + 2 + 4 * ndim > end:
            raise FormatError(f"{where}: truncated record header at byte offset {off}")
        dims = struct.unpack_from(f"<{ndim}I", raw, off + 2)
        off += 2 + 4 * ndim
        count = int(np.prod(dims, dtype=np.int64))
        nbytes = count * dtype.nbytes
        if off + nbytes > end:
            raise FormatError(f"{where}: truncated tensor data at byte offset {off}")
        buf = BitBuffer(dtype, raw[off:off + nbytes], count)
        records.append(codec.decode(buf).reshape(dims))
        off += nbytes
    return header, records


def read_checkpoint(path) -> tuple[Model, dict]:
    """``(model, header)`` where header holds architecture and manifest."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    header, records = _parse(raw, str(path))
    model = build_model(header.get("architecture") or {})
    weighted = model.weighted
    if len(records) != 2 * len(weighted):
        raise FormatError(f"{path}: {len(records)} tensors for {len(weighted)} weighted layers")
    for i, layer in enumerate(weighted):
        w, b = records[2 * i], records[2 * i + 1]
        if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
            raise FormatError(
                f"{path}: layer {i} tensors {w.shape}/{b.shape} do not match architecture "
                f"{layer.weights.shape}/{layer.bias.shape}"
            )
        layer.weights, layer.bias = w, b
    model.meta = header.get("manifest") or {}
    return model, header


def load_checkpoint(path) -> Model:
    return read_checkpoint(path)[0]


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def inspect_checkpoint(path) -> dict:
    model, header = read_checkpoint(path)
    raw_size = Path(path).stat().st_size
    return {
        "path": str(path),
        "bytes": raw_size,
        "sha256": file_sha256(path),
        "version": VERSION,
        "architecture": header["architecture"],
        "weight_count": model.weight_count(),
        "param_count": model.param_count(),
        "layers": [
            {"index": i, "kind": l.kind, "weights": list(l.weights.shape), "saf": l.saf.name,
             "max_abs_raw_weight": float(np.max(np.abs(l.weights)))}
            for i, l in enumerate(model.weighted)
        ],
        "manifest": header.get("manifest", {}),
    }

"""Binary tensor files, JSON manifests and the model container.

TensorFile layout (all integers little-endian)::

    offset  size    field
    0       4       magic b"WFT1"
    4       1       dtype code: 0 = u8, 1 = f32, 2 = f64
    5       1       rank r
    6       4*r     dims, u32 each
    6+4r    ...     row-major payload, prod(dims) * itemsize bytes

The model container concatenates a JSON header and TensorFile blobs::

    b"WFM1" | u32 version | u32 header length | header (UTF-8 JSON) | blobs...
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np

TENSOR_MAGIC = b"WFT1"
MODEL_MAGIC = b"WFM1"
MODEL_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1

_DTYPE_CODES = {np.dtype(np.uint8): 0, np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


class TensorFormatError(ValueError):
    """Raised for malformed tensor or model files."""


def _normalize_dtype(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.bool_:
        return arr.astype(np.uint8)
    if arr.dtype == np.uint8:
        return arr
    if arr.dtype.kind == "f" and arr.dtype.itemsize in (4, 8):
        return arr.astype(f"<f{arr.dtype.itemsize}", copy=False)
    raise TensorFormatError(f"unsupported dtype {arr.dtype}; use uint8, float32 or float64")


def write_tensor_stream(fh: BinaryIO, array: np.ndarray) -> None:
    arr = _normalize_dtype(np.asarray(array))
    if arr.ndim > 255:
        raise TensorFormatError("rank exceeds 255")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr).tobytes(order="C"))


def read_tensor_stream(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise TensorFormatError(f"bad tensor magic {magic!r}")
    head = fh.read(2)
    if len(head) != 2:
        raise TensorFormatError("truncated tensor header")
    code, rank = struct.unpack("<BB", head)
    if code not in _CODE_DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    raw_dims = fh.read(4 * rank)
    if len(raw_dims) != 4 * rank:
        raise TensorFormatError("truncated dims")
    dims = struct.unpack(f"<{rank}I", raw_dims)
    dtype = _CODE_DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise TensorFormatError(f"payload length {len(payload)} != expected {nbytes}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def save_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor_stream(fh, array)


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_tensor_stream(fh)
        if fh.read(1):
            raise TensorFormatError(f"trailing bytes after tensor in {path}")
    return arr


def tensor_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor_stream(buf, array)
    return buf.getvalue()


# --- model container ---------------------------------------------------------


def write_container(path: str | os.PathLike, header: dict[str, Any], tensors: list[np.ndarray]) -> None:
    """Write a JSON header followed by ``len(tensors)`` TensorFile blobs."""
    header = dict(header, tensor_count=len(tensors))
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        fh.write(blob)
        for t in tensors:
            write_tensor_stream(fh, t)


def read_container(path: str | os.PathLike) -> tuple[dict[str, Any], list[np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise TensorFormatError(f"{path} is not a model container")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != MODEL_VERSION:
            raise TensorFormatError(f"unsupported container version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        tensors = [read_tensor_stream(fh) for _ in range(header["tensor_count"])]
        if fh.read(1):
            raise TensorFormatError("trailing bytes in model container")
    return header, tensors


# --- manifests ---------------------------------------------------------------


@dataclass
class ManifestRecord:
    image: str
    wf: str | None = None
    sinogram: str | None = None
    sinogram_wf: str | None = None
    meta: dict[str, Any] = field(default_factory=dict)
    shapes: dict[str, list[int]] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"image": self.image}
        for key in ("wf", "sinogram", "sinogram_wf"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        out["meta"] = self.meta
        out["shapes"] = self.shapes
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ManifestRecord":
        return cls(
            image=obj["image"],
            wf=obj.get("wf"),
            sinogram=obj.get("sinogram"),
            sinogram_wf=obj.get("sinogram_wf"),
            meta=obj.get("meta", {}),
            shapes={k: list(v) for k, v in obj.get("shapes", {}).items()},
        )


@dataclass
class Manifest:
    records: list[ManifestRecord]
    info: dict[str, Any] = field(default_factory=dict)
    schema_version: int = MANIFEST_SCHEMA_VERSION
    root: Path = field(default_factory=Path)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def save(self, path: str | os.PathLike) -> None:
        doc = {
            "schema_version": self.schema_version,
            "info": self.info,
            "records": [r.to_json() for r in self.records],
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike, validate: bool = True) -> "Manifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
            raise TensorFormatError(f"unsupported manifest schema {doc.get('schema_version')}")
        man = cls(
            records=[ManifestRecord.from_json(r) for r in doc["records"]],
            info=doc.get("info", {}),
            root=path.parent,
        )
        if validate:
            man.validate()
        return man

    def validate(self) -> None:
        """Check that referenced files exist and match the declared shapes."""
        for rec in self.records:
            for key in ("image", "wf", "sinogram", "sinogram_wf"):
                rel = getattr(rec, key)
                if rel is None:
                    continue
                p = self.path(rel)
                if not p.exists():
                    raise FileNotFoundError(f"manifest references missing file {p}")
                declared = rec.shapes.get(key)
                if declared is not None:
                    shape = peek_shape(p)
                    if list(shape) != list(declared):
                        raise TensorFormatError(f"{p}: shape {shape} != declared {declared}")


def peek_shape(path: str | os.PathLike) -> tuple[int, ...]:
    with open(path, "rb") as fh:
        if fh.read(4) != TENSOR_MAGIC:
            raise TensorFormatError(f"bad tensor magic in {path}")
        _, rank = struct.unpack("<BB", fh.read(2))
        return struct.unpack(f"<{rank}I", fh.read(4 * rank))

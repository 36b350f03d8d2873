"""On-disk formats: the sample dataset file and the checkpoint container.

Dataset file (all integers little-endian)::

    b"SAOTDS1"            7-byte magic
    uint8  dtype tag      1 = float64 little-endian
    uint64 sample count
    per sample:
        uint32 H, W, d_a, d_u
        H*W*d_a float64   input field, row-major (H, W, d_a)
        H*W*d_u float64   output field, row-major (H, W, d_u)
    32 bytes              SHA-256 of every preceding byte

Checkpoint file::

    b"SAOTCK1"            7-byte magic
    uint8  format version
    uint64 header length
    header                UTF-8 JSON; lists tensor names and shapes in order
    tensors               float64 little-endian, row-major, in header order
    32 bytes              SHA-256 of every preceding byte
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .darcy import GridSample
from .errors import FormatError

DATASET_MAGIC = b"SAOTDS1"
CHECKPOINT_MAGIC = b"SAOTCK1"
DTYPE_FLOAT64 = 1
CHECKPOINT_VERSION = 1
_LE_F64 = np.dtype("<f8")
_DIGEST_SIZE = 32


class _HashingWriter:
    def __init__(self, fh: BinaryIO):
        self.fh = fh
        self.hash = hashlib.sha256()

    def write(self, data: bytes) -> None:
        self.hash.update(data)
        self.fh.write(data)

    def finish(self) -> str:
        digest = self.hash.digest()
        self.fh.write(digest)
        return digest.hex()


class _HashingReader:
    def __init__(self, fh: BinaryIO, path):
        self.fh = fh
        self.path = path
        self.hash = hashlib.sha256()

    def read(self, n: int, what: str) -> bytes:
        data = self.fh.read(n)
        if len(data) != n:
            raise FormatError(f"{self.path}: truncated while reading {what}")
        self.hash.update(data)
        return data

    def verify(self) -> str:
        stored = self.fh.read(_DIGEST_SIZE)
        if len(stored) != _DIGEST_SIZE:
            raise FormatError(f"{self.path}: truncated checksum")
        if self.fh.read(1):
            raise FormatError(f"{self.path}: trailing bytes after checksum")
        if stored != self.hash.digest():
            raise FormatError(f"{self.path}: checksum mismatch (file is corrupted)")
        return stored.hex()


def _array_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()


def _read_array(reader: _HashingReader, shape, what: str) -> np.ndarray:
    count = int(np.prod(shape, dtype=np.int64))
    raw = reader.read(count * 8, what)
    return np.frombuffer(raw, dtype=_LE_F64).astype(np.float64).reshape(shape)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def write_dataset(samples: Iterable[GridSample], path) -> str:
    """Write samples and return the hex SHA-256 stored in the trailer."""
    samples = list(samples)
    path = Path(path)
    with open(path, "wb") as fh:
        w = _HashingWriter(fh)
        w.write(DATASET_MAGIC + struct.pack("<BQ", DTYPE_FLOAT64, len(samples)))
        for s in samples:
            h, wd, da = s.a.shape
            du = s.u.shape[2]
            w.write(struct.pack("<4I", h, wd, da, du))
            w.write(_array_bytes(s.a))
            w.write(_array_bytes(s.u))
        return w.finish()


def _open_dataset(fh, path) -> tuple[_HashingReader, int]:
    reader = _HashingReader(fh, path)
    magic = fh.read(len(DATASET_MAGIC))
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: not a dataset file (bad magic {magic!r})")
    reader.hash.update(magic)
    tag, count = struct.unpack("<BQ", reader.read(9, "header"))
    if tag != DTYPE_FLOAT64:
        raise FormatError(f"{path}: unsupported element type tag {tag}")
    return reader, count


def iter_dataset(path) -> Iterator[GridSample]:
    """Yield samples one at a time.

    The checksum is verified after the last sample, so a consumer that
    stops early has not validated the file; :func:`read_dataset` always
    validates before returning.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        reader, count = _open_dataset(fh, path)
        for i in range(count):
            h, w, da, du = struct.unpack("<4I", reader.read(16, f"shape of sample {i}"))
            a = _read_array(reader, (h, w, da), f"input of sample {i}")
            u = _read_array(reader, (h, w, du), f"output of sample {i}")
            yield GridSample(a, u)
        reader.verify()


def read_dataset(path) -> list[GridSample]:
    return list(iter_dataset(path))


def dataset_checksum(path) -> str:
    """Hex digest stored in a dataset's trailer (after validating it)."""
    path = Path(path)
    with open(path, "rb") as fh:
        reader, count = _open_dataset(fh, path)
        for i in range(count):
            h, w, da, du = struct.unpack("<4I", reader.read(16, f"shape of sample {i}"))
            reader.read(8 * h * w * (da + du), f"payload of sample {i}")
        return reader.verify()


# ---------------------------------------------------------------------------
# tensor container (checkpoints)
# ---------------------------------------------------------------------------

def write_container(path, header: dict, tensors: dict[str, np.ndarray]) -> str:
    """Write a JSON header plus named float64 arrays; returns the hex checksum."""
    header = dict(header)
    header["tensors"] = [
        {"name": name, "shape": list(np.shape(arr))} for name, arr in tensors.items()
    ]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        w = _HashingWriter(fh)
        w.write(CHECKPOINT_MAGIC + struct.pack("<BQ", CHECKPOINT_VERSION, len(blob)))
        w.write(blob)
        for arr in tensors.values():
            w.write(_array_bytes(arr))
        return w.finish()


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read and fully validate a container; nothing is returned on any error."""
    path = Path(path)
    with open(path, "rb") as fh:
        reader = _HashingReader(fh, path)
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        reader.hash.update(magic)
        version, size = struct.unpack("<BQ", reader.read(9, "header size"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        try:
            header = json.loads(reader.read(size, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: unreadable header ({exc})") from None
        tensors = {}
        for entry in header.get("tensors", []):
            tensors[entry["name"]] = _read_array(reader, tuple(entry["shape"]), entry["name"])
        reader.verify()
    return header, tensors


def write_sidecar(path, values: dict) -> None:
    """Flat ``key = value`` text echo of a configuration."""
    lines = [f"{k} = {_format_value(v)}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _format_value(v) -> str:
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v)

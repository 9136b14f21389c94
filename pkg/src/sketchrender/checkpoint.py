"""Binary checkpoint container.

Layout (little-endian): magic ``SKRG``, u32 format version, then until EOF a
sequence of records::

    u32 name length | name (utf-8) | u8 dtype tag | u32 rank | u32 extents[rank] | raw data

Dtype tags: ``f`` float32 (parameters, optimizer moments), ``u`` uint32
(counters and seeds), ``b`` uint8 (embedded text such as the config).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SKRG"
VERSION = 1
_TAGS = {b"f": np.dtype("<f4"), b"u": np.dtype("<u4"), b"b": np.dtype("u1")}
_KIND_TO_TAG = {"f": b"f", "u": b"u", "i": b"u"}


def _tag_for(arr: np.ndarray) -> bytes:
    if arr.dtype == np.uint8:
        return b"b"
    tag = _KIND_TO_TAG.get(arr.dtype.kind)
    if tag is None:
        raise TypeError(f"cannot store dtype {arr.dtype}")
    return tag


def encode(arrays: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _tag_for(arr)
        if tag == b"u" and arr.size and (arr.min() < 0 or arr.max() > 0xFFFFFFFF):
            raise ValueError(f"{name}: integer values outside uint32")
        data = np.ascontiguousarray(arr, dtype=_TAGS[tag])
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)) + key + tag + struct.pack("<I", data.ndim))
        out.append(struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(data.tobytes())
    return b"".join(out)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 8
    arrays: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        tag = blob[pos : pos + 1]
        pos += 1
        if tag not in _TAGS:
            raise ValueError(f"{name}: unknown dtype tag {tag!r}")
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        dt = _TAGS[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(blob):
            raise ValueError(f"{name}: truncated checkpoint")
        arrays[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
        pos += nbytes
    return arrays


def save(path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(arrays))


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def text_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def array_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")

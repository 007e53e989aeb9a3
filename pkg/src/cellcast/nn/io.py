"""Versioned binary weight files: named float64 arrays, little-endian."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import MissingInputError, ParseError

MAGIC = b"CCWEIGHT"
VERSION = 1


def save_weights(params: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name in params:
            arr = np.asarray(params[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_weights(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"weight file {path} does not exist")
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a weight file (bad magic)")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, pos)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported weight file version {version}")
    pos += 8
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated weight file ({exc})") from None
    return out

"""Binary parameter snapshot format.

Layout (stable across versions, all integers little-endian):

    bytes 0..7    magic ``METATL01``
    bytes 8..15   uint64  embedding dimension d
    bytes 16..23  uint64  item count P
    then float64 arrays in C (row-major) order, back to back:
        embeddings  P * d values
        transform   d * 2d values
        bias        d values

Total file size is therefore ``24 + 8 * (P*d + 2*d*d + d)`` bytes; a size
mismatch or a bad magic raises :class:`SnapshotError`.
"""

import struct

import numpy as np

from .model import Params

MAGIC = b"METATL01"
_HEADER = struct.Struct("<8sQQ")


class SnapshotError(Exception):
    """Raised when a snapshot file cannot be read or does not fit."""


def save_params(params: Params, path):
    params.validate()
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, params.dim, params.n_items))
        f.write(params.embeddings.astype(np.float64).tobytes(order="C"))
        f.write(params.transform.astype(np.float64).tobytes(order="C"))
        f.write(params.bias.astype(np.float64).tobytes(order="C"))


def load_params(path) -> Params:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, dim, n_items = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    counts = (n_items * dim, 2 * dim * dim, dim)
    expected = _HEADER.size + 8 * sum(counts)
    if len(raw) != expected:
        raise SnapshotError(f"{path}: size {len(raw)} != expected {expected} "
                            f"for dim={dim}, items={n_items}")
    offset = _HEADER.size
    arrays = []
    for count in counts:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count,
                                    offset=offset).copy())
        offset += 8 * count
    params = Params(arrays[0].reshape(n_items, dim),
                    arrays[1].reshape(dim, 2 * dim),
                    arrays[2])
    try:
        params.validate()
    except ValueError as exc:
        raise SnapshotError(f"{path}: {exc}") from exc
    return params

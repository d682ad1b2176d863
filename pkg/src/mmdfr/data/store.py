"""Keyed single-precision feature vectors and their binary file.

Layout: "MMFS", u32 version, u32 dimension, u64 count, then per record
u16 key length, UTF-8 key and ``dimension`` little-endian float32 values.
"""

import struct

import numpy as np

from mmdfr.binio import Reader
from mmdfr.errors import DataError, DimensionError

MAGIC = b"MMFS"
VERSION = 1


class FeatureStore:
    def __init__(self, dim):
        if dim < 1:
            raise DimensionError("feature dimension must be positive")
        self.dim = int(dim)
        self._rows = {}

    def add(self, key, vector):
        v = np.asarray(vector, dtype=np.float32)
        if v.shape != (self.dim,):
            raise DimensionError(f"{key}: expected a {self.dim}-dim vector, got shape {v.shape}")
        if key in self._rows:
            raise DataError(f"duplicate feature key {key!r}")
        if len(key.encode("utf-8")) > 0xFFFF:
            raise DataError("feature keys are limited to 65535 bytes")
        self._rows[key] = v.copy()

    def __getitem__(self, key):
        return self._rows[key]

    def __contains__(self, key):
        return key in self._rows

    def __len__(self):
        return len(self._rows)

    def keys(self):
        return list(self._rows)

    def items(self):
        return self._rows.items()

    def matrix(self, keys=None):
        keys = self.keys() if keys is None else keys
        if not keys:
            return np.zeros((0, self.dim), np.float32)
        return np.stack([self._rows[k] for k in keys])

    @classmethod
    def from_arrays(cls, keys, matrix):
        m = np.asarray(matrix, dtype=np.float32)
        store = cls(m.shape[1])
        for k, row in zip(keys, m):
            store.add(k, row)
        return store


def feature_store_write(store, path):
    parts = [MAGIC, struct.pack("<IIQ", VERSION, store.dim, len(store))]
    for key, v in store.items():
        kb = key.encode("utf-8")
        parts.append(struct.pack("<H", len(kb)))
        parts.append(kb)
        parts.append(v.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def feature_store_read(path):
    r = Reader.open(path, MAGIC)
    r.version({VERSION})
    dim = r.u32()
    count = r.u64()
    store = FeatureStore(dim)
    for _ in range(count):
        key = r.take(r.u16()).decode("utf-8")
        store.add(key, np.frombuffer(r.take(4 * dim), dtype="<f4"))
    r.done()
    return store

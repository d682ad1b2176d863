"""Little-endian binary record helpers shared by the checkpoint formats."""

import struct

import numpy as np

from mmdfr.errors import FormatError


class Writer:
    def __init__(self, magic):
        self.parts = [magic]

    def u16(self, v):
        self.parts.append(struct.pack("<H", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v):
        self.parts.append(struct.pack("<Q", v))

    def raw(self, b):
        self.parts.append(bytes(b))

    def text(self, s):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.raw(b)

    def array(self, a, dtype):
        """Shape-prefixed array: ndim (u32), dims (u32 each), then values."""
        a = np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<"))
        self.u32(a.ndim)
        for d in a.shape:
            self.u32(d)
        self.raw(a.tobytes())

    def bytes(self):
        return b"".join(self.parts)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.bytes())


class Reader:
    def __init__(self, data, magic, source="<bytes>"):
        self.data = data
        self.source = source
        if data[:len(magic)] != magic:
            raise FormatError(f"{source}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
        self.pos = len(magic)

    @classmethod
    def open(cls, path, magic):
        with open(path, "rb") as f:
            return cls(f.read(), magic, str(path))

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.source}: truncated file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def text(self):
        return self.take(self.u32()).decode("utf-8")

    def array(self, dtype):
        dt = np.dtype(dtype).newbyteorder("<")
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        buf = self.take(count * dt.itemsize)
        return np.frombuffer(buf, dtype=dt).reshape(shape).astype(np.dtype(dtype).newbyteorder("="))

    def version(self, supported):
        v = self.u32()
        if v not in supported:
            raise FormatError(f"{self.source}: unsupported format version {v}")
        return v

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.source}: {len(self.data) - self.pos} trailing bytes")

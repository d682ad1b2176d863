"""Network checkpoint: magic ``MMNN``, version, spec text, per-layer float32 blobs.

Layout (little endian)::

    "MMNN"  u32 version  u32 len  <spec text bytes>
    u32 blob count
    per blob: u32 name len, name, u32 ndim, u32 dims..., float32 values

Blobs follow the network spec's layer order, weight before bias.
"""

import numpy as np

from mmdfr.binio import Reader, Writer
from mmdfr.errors import FormatError
from mmdfr.nn.network import Network
from mmdfr.nn.spec import format_netspec, parse_netspec, trace_shapes

MAGIC = b"MMNN"
VERSION = 1


def _ordered_names(spec):
    names = []
    for layer in spec.layers:
        if layer.kind in ("conv", "fc"):
            names += [layer.name + ".W", layer.name + ".b"]
    return names


def to_bytes(net):
    w = Writer(MAGIC)
    w.u32(VERSION)
    w.text(format_netspec(net.spec))
    names = _ordered_names(net.spec)
    w.u32(len(names))
    for name in names:
        w.text(name)
        w.array(net.params[name], np.float32)
    return w.bytes()


def save_network(net, path):
    with open(path, "wb") as f:
        f.write(to_bytes(net))


def from_bytes(data, source="<bytes>"):
    r = Reader(data, MAGIC, source)
    r.version({VERSION})
    spec = parse_netspec(r.text())
    trace = trace_shapes(spec)
    expected = _ordered_names(spec)
    count = r.u32()
    if count != len(expected):
        raise FormatError(f"{source}: {count} parameter blobs, spec needs {len(expected)}")
    params = {}
    probe = _shapes(trace)
    for name in expected:
        got = r.text()
        if got != name:
            raise FormatError(f"{source}: blob {got!r} where {name!r} was expected")
        arr = r.array(np.float32)
        if arr.shape != probe[name]:
            raise FormatError(f"{source}: {name} has shape {arr.shape}, spec needs {probe[name]}")
        params[name] = arr.copy()
    r.done()
    return Network(spec, trace, params, dtype=np.float32)


def load_network(path):
    with open(path, "rb") as f:
        return from_bytes(f.read(), str(path))


def _shapes(trace):
    out = {}
    for row in trace:
        l = row.layer
        if l.kind == "conv":
            out[l.name + ".W"] = (l.filters, row.in_shape[0], l.k, l.k)
            out[l.name + ".b"] = (l.filters,)
        elif l.kind == "fc":
            out[l.name + ".W"] = (int(np.prod(row.in_shape)), row.out_shape[0])
            out[l.name + ".b"] = (row.out_shape[0],)
    return out

"""Declarative network tables.

A NetSpec text file has one layer per line, mirroring the architecture
tables::

    name kind inH inW filters k stride pad relu

``kind`` is one of conv, maxpool, meanpool, dropout, fc, softmax.  For
conv/pool rows ``inH inW`` is the layer's input extent; for vector rows it is
the vector length followed by 1 (the fc width is taken from it).  ``-`` marks
a non-applicable cell.  Lines starting with ``#`` are comments; an optional
``channels C`` line sets the input channel count (default 1).
"""

from dataclasses import dataclass, replace

from mmdfr.errors import BuildError, ParseError
from mmdfr.nn.layers import out_extent

KINDS = ("conv", "maxpool", "meanpool", "dropout", "fc", "softmax")
SPATIAL = ("conv", "maxpool", "meanpool")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    size: tuple  # table cell: (inH, inW) for spatial rows, (length, 1) for vector rows
    filters: int = None
    k: int = None
    stride: int = None
    pad: int = None
    relu: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BuildError(f"layer {self.name}: unknown kind {self.kind!r}")
        if self.kind == "conv" and (self.filters is None or self.k is None):
            raise BuildError(f"layer {self.name}: conv needs a filter count and size")
        if self.kind in ("maxpool", "meanpool") and self.filters is not None:
            raise BuildError(f"layer {self.name}: pool layers have no filter count")


@dataclass(frozen=True)
class NetSpec:
    layers: tuple
    channels: int = 1

    @property
    def input_shape(self):
        return tuple(self.layers[0].size)

    @property
    def fc_layers(self):
        return [l for l in self.layers if l.kind == "fc"]

    @property
    def feature_dim(self):
        return self.fc_layers[0].size[0]

    @property
    def class_count(self):
        return self.fc_layers[-1].size[0]

    def _last_conv_index(self):
        return max(i for i, l in enumerate(self.layers) if l.kind == "conv")

    @property
    def variant_flags(self):
        i = self._last_conv_index()
        pools = [l for l in self.layers[i + 1:] if l.kind in ("maxpool", "meanpool")]
        return {
            "reluAfterLastConv": self.layers[i].relu,
            "reluAfterFc6": self.fc_layers[0].relu,
            "lastPoolKind": pools[0].kind.replace("pool", "") if pools else None,
        }

    def with_classes(self, n):
        """Copy with the classifier (last fc and softmax) resized to ``n`` classes."""
        last_fc = self.layers.index(self.fc_layers[-1])
        layers = list(self.layers)
        for i in range(last_fc, len(layers)):
            if layers[i].kind in ("fc", "softmax"):
                layers[i] = replace(layers[i], size=(n, 1))
        return replace(self, layers=tuple(layers))


@dataclass(frozen=True)
class TraceRow:
    layer: LayerSpec
    in_shape: tuple
    out_shape: tuple

    @property
    def table_cell(self):
        if self.layer.kind in SPATIAL:
            return self.in_shape[1:]
        return (self.out_shape[0], 1)


def trace_shapes(spec):
    """Forward shape trace; raises ``BuildError`` naming the first layer that does not fit."""
    h, w = spec.input_shape
    shape = (spec.channels, h, w)
    rows = []
    for layer in spec.layers:
        if layer.kind in SPATIAL:
            if len(shape) != 3:
                raise BuildError(f"layer {layer.name}: spatial layer after flattening")
            c, h, w = shape
            k, s, p = layer.k, layer.stride or 1, layer.pad or 0
            if h + 2 * p < k or w + 2 * p < k:
                raise BuildError(f"layer {layer.name}: {h}x{w} input too small for {k}x{k} window")
            oc = layer.filters if layer.kind == "conv" else c
            out = (oc, out_extent(h, k, s, p), out_extent(w, k, s, p))
        elif layer.kind == "fc":
            out = (layer.size[0],)
        else:
            out = (int(_prod(shape)),)
        row = TraceRow(layer, shape, out)
        if tuple(layer.size) != tuple(row.table_cell):
            raise BuildError(f"layer {layer.name}: declared size {layer.size[0]}x{layer.size[1]} "
                             f"but the trace gives {row.table_cell[0]}x{row.table_cell[1]}")
        rows.append(row)
        shape = out
    return rows


def _prod(shape):
    out = 1
    for s in shape:
        out *= s
    return out


def _cell(tok, cast=int):
    return None if tok in ("-", "N/A") else cast(tok)


def parse_netspec(text):
    layers = []
    channels = 1
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "channels" and len(parts) == 2:
            channels = int(parts[1])
            continue
        if len(parts) != 9:
            raise ParseError(f"expected 9 columns, got {len(parts)}", lineno)
        name, kind, ih, iw, filters, k, stride, pad, relu = parts
        if relu not in ("yes", "no", "-"):
            raise ParseError(f"relu column must be yes/no/-, got {relu!r}", lineno)
        try:
            layers.append(LayerSpec(name, kind, (int(ih), int(iw)), _cell(filters), _cell(k),
                                    _cell(stride), _cell(pad), relu == "yes"))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    if not layers:
        raise ParseError("net spec has no layers")
    return NetSpec(tuple(layers), channels)


def format_netspec(spec):
    def c(v):
        return "-" if v is None else str(v)

    lines = ["# name kind inH inW filters k stride pad relu"]
    if spec.channels != 1:
        lines.append(f"channels {spec.channels}")
    for l in spec.layers:
        if l.kind in ("dropout", "softmax"):
            relu = "-"
        else:
            relu = "yes" if l.relu else "no"
        lines.append(" ".join([l.name, l.kind, str(l.size[0]), str(l.size[1]), c(l.filters),
                               c(l.k), c(l.stride), c(l.pad), relu]))
    return "\n".join(lines) + "\n"


NN1_TEXT = """\
# name kind inH inW filters k stride pad relu
Conv11  conv     165 120 64  3 1 0 yes
Conv12  conv     163 118 128 3 1 0 yes
Pool1   maxpool  161 116 -   2 2 0 no
Conv21  conv     80  58  64  3 1 0 yes
Conv22  conv     78  56  128 3 1 0 yes
Pool2   maxpool  76  54  -   2 2 0 no
Conv31  conv     38  27  64  3 1 1 yes
Conv32  conv     38  27  128 3 1 1 yes
Pool3   maxpool  38  27  -   2 2 1 no
Conv41  conv     20  14  128 3 1 1 yes
Conv42  conv     20  14  256 3 1 1 yes
Pool4   maxpool  20  14  -   2 2 0 no
Conv51  conv     10  7   128 3 1 1 yes
Conv52  conv     10  7   256 3 1 1 no
Pool5   meanpool 10  7   -   2 2 1 no
Dropout dropout  6144 1  -   - - - -
Fc6     fc       512  1  -   - - - no
Fc7     fc       9000 1  -   - - - no
Softmax softmax  9000 1  -   - - - -
"""

NN2_TEXT = """\
# name kind inH inW filters k stride pad relu
Conv11  conv     165 120 64  3 1 0 yes
Conv12  conv     163 118 128 3 1 0 yes
Pool1   maxpool  161 116 -   2 2 0 no
Conv21  conv     80  58  64  3 1 0 yes
Conv22  conv     78  56  128 3 1 0 yes
Pool2   maxpool  76  54  -   2 2 0 no
Conv31  conv     38  27  128 3 1 1 yes
Conv32  conv     38  27  128 3 1 1 yes
Pool3   maxpool  38  27  -   2 2 1 no
Conv41  conv     20  14  256 3 1 1 yes
Conv42  conv     20  14  256 3 1 1 yes
Conv43  conv     20  14  256 3 1 1 yes
Pool4   maxpool  20  14  -   2 2 0 no
Conv51  conv     10  7   256 3 1 1 yes
Conv52  conv     10  7   256 3 1 1 yes
Conv53  conv     10  7   256 3 1 1 no
Pool5   meanpool 10  7   -   2 2 1 no
Dropout dropout  6144 1  -   - - - -
Fc6     fc       512  1  -   - - - no
Fc7     fc       9000 1  -   - - - no
Softmax softmax  9000 1  -   - - - -
"""

# Same layer vocabulary and ReLU placement as NN1, reduced for CPU-scale runs.
TINY_TEXT = """\
# name kind inH inW filters k stride pad relu
Conv11  conv     32 24 8  3 1 1 yes
Pool1   maxpool  32 24 -  2 2 0 no
Conv21  conv     16 12 16 3 1 1 yes
Pool2   maxpool  16 12 -  2 2 0 no
Conv31  conv     8  6  16 3 1 1 yes
Conv32  conv     8  6  32 3 1 1 no
Pool3   meanpool 8  6  -  2 2 1 no
Dropout dropout  640 1 -  - - - -
Fc6     fc       64  1 -  - - - no
Fc7     fc       10  1 -  - - - no
Softmax softmax  10  1 -  - - - -
"""

# Patch-sized tiny net (square input).
TINY_PATCH_TEXT = """\
# name kind inH inW filters k stride pad relu
Conv11  conv     24 24 8  3 1 1 yes
Pool1   maxpool  24 24 -  2 2 0 no
Conv21  conv     12 12 16 3 1 1 yes
Pool2   maxpool  12 12 -  2 2 0 no
Conv31  conv     6  6  16 3 1 1 yes
Conv32  conv     6  6  32 3 1 1 no
Pool3   meanpool 6  6  -  2 2 1 no
Dropout dropout  512 1 -  - - - -
Fc6     fc       64  1 -  - - - no
Fc7     fc       10  1 -  - - - no
Softmax softmax  10  1 -  - - - -
"""

SHIPPED = {"nn1": NN1_TEXT, "nn2": NN2_TEXT, "tiny": TINY_TEXT, "tiny-patch": TINY_PATCH_TEXT}


def shipped_spec(name):
    try:
        return parse_netspec(SHIPPED[name.lower()])
    except KeyError:
        raise BuildError(f"unknown shipped spec {name!r}; choose from {sorted(SHIPPED)}") from None


VARIANTS = ("NN1", "NN1+C52R", "NN1+C52R+Fc6R")


def make_ablation_variant(spec, variant):
    """ReLU-placement variants of an NN1-form spec.

    ``+C52R`` adds ReLU after the last conv and switches the following mean
    pool to max pooling; ``+Fc6R`` additionally adds ReLU after Fc6.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    flags = spec.variant_flags
    if flags["reluAfterLastConv"] or flags["reluAfterFc6"] or flags["lastPoolKind"] != "mean":
        raise BuildError("ablation variants are defined relative to an NN1-form base spec")
    relu_conv = variant != "NN1"
    relu_fc6 = variant == "NN1+C52R+Fc6R"
    last = spec._last_conv_index()
    fc6 = spec.layers.index(spec.fc_layers[0])
    layers = list(spec.layers)
    layers[last] = replace(layers[last], relu=relu_conv)
    for i in range(last + 1, len(layers)):
        if layers[i].kind in ("maxpool", "meanpool"):
            layers[i] = replace(layers[i], kind="maxpool" if relu_conv else "meanpool")
            break
    layers[fc6] = replace(layers[fc6], relu=relu_fc6)
    return replace(spec, layers=tuple(layers))

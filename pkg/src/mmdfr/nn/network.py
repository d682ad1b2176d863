"""Networks built from a NetSpec."""

import numpy as np

from mmdfr.errors import DimensionError
from mmdfr.nn import layers as L
from mmdfr.nn.spec import trace_shapes

INPUT_SHIFT = 0.5  # images in [0, 1] are centered before the first conv


class Network:
    """Parameters and forward/backward passes for one NetSpec.

    ``params`` maps ``"<layer>.W"`` / ``"<layer>.b"`` to arrays.  Conv weights
    are (F, C, k, k); fully connected weights are (in, out) so that
    ``y = W^T x + b``.
    """

    def __init__(self, spec, trace, params, dtype=np.float32, dropout_ratio=0.4, seed=0):
        self.spec = spec
        self.trace = trace
        self.params = params
        self.dtype = np.dtype(dtype)
        self.dropout_ratio = dropout_ratio
        self.training = False
        self.rng = np.random.default_rng(seed)
        self._caches = None
        self._feature_index = spec.layers.index(spec.fc_layers[0])

    @property
    def feature_dim(self):
        return self.spec.feature_dim

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def param_names(self):
        return list(self.params)

    def prepare(self, images):
        """(N, H, W) or (N, C, H, W) images -> network input in the working dtype."""
        x = np.asarray(images, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        c, h, w = self.spec.channels, *self.spec.input_shape
        if x.shape[1:] != (c, h, w):
            raise DimensionError(f"network expects inputs of shape {(c, h, w)}, got {x.shape[1:]}")
        return x - self.dtype.type(INPUT_SHIFT)

    def forward(self, x, stop="logits"):
        """Run from a prepared input.

        ``stop="features"`` ends after Fc6 (including its ReLU when the net spec asks
        for one); ``stop="logits"`` runs through the classifier.
        """
        caches = []
        last = self._feature_index if stop == "features" else len(self.spec.layers) - 1
        for i, layer in enumerate(self.spec.layers[:last + 1]):
            kind = layer.kind
            if kind != "softmax" and kind not in ("conv", "maxpool", "meanpool") and x.ndim == 4:
                caches.append(("flatten", x.shape))
                x = x.reshape(len(x), -1)
            p = layer.name
            if kind == "conv":
                x, c = L.conv2d_forward(x, self.params[p + ".W"], self.params[p + ".b"],
                                        layer.stride or 1, layer.pad or 0)
                caches.append(("conv", c, layer))
            elif kind in ("maxpool", "meanpool"):
                x, c = L.pool2d_forward(x, kind[:-4], layer.k, layer.stride or layer.k, layer.pad or 0)
                caches.append(("pool", c, layer))
            elif kind == "dropout":
                x, c = L.dropout_forward(x, self.dropout_ratio, self.training, self.rng)
                caches.append(("dropout", c, layer))
            elif kind == "fc":
                x, c = L.fc_forward(x, self.params[p + ".W"], self.params[p + ".b"])
                caches.append(("fc", c, layer))
            else:
                continue
            if kind in ("conv", "fc") and layer.relu:
                x, m = L.relu_forward(x)
                caches.append(("relu", m, layer))
        self._caches = caches
        return x

    def backward(self, dout):
        """Back-propagate from whatever ``forward`` last stopped at; returns parameter grads."""
        if self._caches is None:
            raise RuntimeError("backward called before forward")
        grads = {}
        g = dout.astype(self.dtype, copy=False)
        for entry in reversed(self._caches):
            tag = entry[0]
            if tag == "flatten":
                g = g.reshape(entry[1])
                continue
            _, c, layer = entry
            if tag == "relu":
                g = L.relu_backward(g, c)
            elif tag == "conv":
                g, dw, db = L.conv2d_backward(g, c)
                grads[layer.name + ".W"] = dw
                grads[layer.name + ".b"] = db
            elif tag == "pool":
                g = L.pool2d_backward(g, c)
            elif tag == "dropout":
                g = L.dropout_backward(g, c)
            elif tag == "fc":
                g, dw, db = L.fc_backward(g, c)
                grads[layer.name + ".W"] = dw
                grads[layer.name + ".b"] = db
        for name, value in self.params.items():
            if name not in grads:
                grads[name] = np.zeros_like(value)
        return grads, g

    def extract_features(self, images, batch_size=64):
        """Fc6 outputs in eval mode, one row per image."""
        was = self.training
        self.eval()
        try:
            x = self.prepare(images)
            out = [self.forward(x[i:i + batch_size], stop="features")
                   for i in range(0, len(x), batch_size)]
        finally:
            self.training = was
        return np.concatenate(out) if out else np.zeros((0, self.feature_dim), self.dtype)

    def extract_feature(self, image):
        return self.extract_features(np.asarray(image)[None])[0]


def init_params(spec, trace, rng, dtype=np.float32):
    """Zero-mean Gaussian weights with std sqrt(2 / fan_in), zero biases."""
    params = {}
    for row in trace:
        layer = row.layer
        if layer.kind == "conv":
            c = row.in_shape[0]
            fan_in = c * layer.k * layer.k
            w = rng.standard_normal((layer.filters, c, layer.k, layer.k)) * np.sqrt(2.0 / fan_in)
            params[layer.name + ".W"] = w.astype(dtype)
            params[layer.name + ".b"] = np.zeros(layer.filters, dtype)
        elif layer.kind == "fc":
            fan_in = int(np.prod(row.in_shape))
            out = row.out_shape[0]
            w = rng.standard_normal((fan_in, out), dtype=np.float32) * np.float32(np.sqrt(2.0 / fan_in))
            params[layer.name + ".W"] = w.astype(dtype, copy=False)
            params[layer.name + ".b"] = np.zeros(out, dtype)
    return params


def build_network(spec, seed=0, dtype=np.float32, dropout_ratio=0.4):
    """Shape-check ``spec`` end to end and allocate initialized parameters."""
    trace = trace_shapes(spec)
    rng = np.random.default_rng(seed)
    params = init_params(spec, trace, rng, dtype)
    return Network(spec, trace, params, dtype=dtype, dropout_ratio=dropout_ratio, seed=seed + 1)

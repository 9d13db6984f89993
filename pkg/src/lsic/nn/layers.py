"""Layer forward/backward implementations over NHWC numpy arrays.

Every layer exposes trainable params and non-trainable state as name->array
dicts, a forward that returns (output, cache), and a backward that returns
(input gradient, param gradients). Gradients are exact; each layer is
checked against central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch, UnknownLayerKind

BN_EPS = 1e-5
BN_MOMENTUM = 0.9  # running = momentum * running + (1 - momentum) * batch


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.p: dict[str, np.ndarray] = {}   # trainable
        self.s: dict[str, np.ndarray] = {}   # non-trainable state

    def init_weights(self, rng: np.random.Generator, dtype) -> None:
        pass

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def out_shape(self, shape: tuple) -> tuple:
        return shape

    def spec(self) -> dict:
        return {"kind": self.kind, "name": self.name}


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """3x3 convolution, stride 1, same padding, via im2col."""

    kind = "conv2d"

    def __init__(self, name, in_channels, filters):
        super().__init__(name)
        self.in_channels = in_channels
        self.filters = filters
        self.p = {
            "w": np.zeros((3, 3, in_channels, filters), dtype=np.float32),
            "b": np.zeros(filters, dtype=np.float32),
        }

    def init_weights(self, rng, dtype):
        fan_in = 3 * 3 * self.in_channels
        self.p["w"] = _he_uniform(rng, (3, 3, self.in_channels, self.filters), fan_in, dtype)
        self.p["b"] = np.zeros(self.filters, dtype=dtype)

    def _im2col(self, x):
        n, h, w, c = x.shape
        pad = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
        pad[:, 1:h + 1, 1:w + 1, :] = x
        cols = np.empty((n, h, w, 3, 3, c), dtype=x.dtype)
        for ki in range(3):
            for kj in range(3):
                cols[:, :, :, ki, kj, :] = pad[:, ki:ki + h, kj:kj + w, :]
        return cols.reshape(n * h * w, 9 * c)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeMismatch(
                f"{self.name}: expected NHWC input with {self.in_channels} channels, "
                f"got {x.shape}"
            )
        n, h, w, _ = x.shape
        cols = self._im2col(x)
        out = cols @ self.p["w"].reshape(9 * self.in_channels, self.filters) + self.p["b"]
        return out.reshape(n, h, w, self.filters), (x.shape, cols)

    def backward(self, dy, cache):
        (n, h, w, c), cols = cache
        dy_flat = dy.reshape(n * h * w, self.filters)
        dw = (cols.T @ dy_flat).reshape(3, 3, c, self.filters)
        db = dy_flat.sum(axis=0)
        dcols = (dy_flat @ self.p["w"].reshape(9 * c, self.filters).T)
        dcols = dcols.reshape(n, h, w, 3, 3, c)
        dpad = np.zeros((n, h + 2, w + 2, c), dtype=dy.dtype)
        for ki in range(3):
            for kj in range(3):
                dpad[:, ki:ki + h, kj:kj + w, :] += dcols[:, :, :, ki, kj, :]
        return dpad[:, 1:h + 1, 1:w + 1, :], {"w": dw, "b": db}

    def out_shape(self, shape):
        h, w, c = shape
        if c != self.in_channels:
            raise ShapeMismatch(f"{self.name}: channel mismatch {c} != {self.in_channels}")
        return (h, w, self.filters)

    def spec(self):
        return {"kind": self.kind, "name": self.name,
                "in_channels": self.in_channels, "filters": self.filters}


class BatchNorm(Layer):
    """Per-channel batch normalization over all axes except the last."""

    kind = "batchnorm"

    def __init__(self, name, channels):
        super().__init__(name)
        self.channels = channels
        self.p = {
            "gamma": np.ones(channels, dtype=np.float32),
            "beta": np.zeros(channels, dtype=np.float32),
        }
        self.s = {
            "mean": np.zeros(channels, dtype=np.float32),
            "var": np.ones(channels, dtype=np.float32),
        }

    def init_weights(self, rng, dtype):
        self.p = {"gamma": np.ones(self.channels, dtype=dtype),
                  "beta": np.zeros(self.channels, dtype=dtype)}
        self.s = {"mean": np.zeros(self.channels, dtype=dtype),
                  "var": np.ones(self.channels, dtype=dtype)}

    def forward(self, x, train=False, rng=None):
        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)  # biased, matching eval-time use
            self.s["mean"] = (BN_MOMENTUM * self.s["mean"]
                              + (1.0 - BN_MOMENTUM) * mean).astype(x.dtype)
            self.s["var"] = (BN_MOMENTUM * self.s["var"]
                             + (1.0 - BN_MOMENTUM) * var).astype(x.dtype)
        else:
            mean, var = self.s["mean"], self.s["var"]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean) * inv_std
        out = self.p["gamma"] * xhat + self.p["beta"]
        return out, (xhat, inv_std, axes, train)

    def backward(self, dy, cache):
        xhat, inv_std, axes, train = cache
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        if not train:
            return dy * self.p["gamma"] * inv_std, {"gamma": dgamma, "beta": dbeta}
        m = np.prod([xhat.shape[a] for a in axes])
        # Backprop through the batch statistics themselves.
        dx = (self.p["gamma"] * inv_std / m) * (m * dy - dbeta - xhat * dgamma)
        return dx, {"gamma": dgamma, "beta": dbeta}

    def spec(self):
        return {"kind": self.kind, "name": self.name, "channels": self.channels}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        return np.maximum(x, 0), (x > 0)

    def backward(self, dy, cache):
        return dy * cache, {}


class MaxPool2x2(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool2x2"

    def forward(self, x, train=False, rng=None):
        n, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"{self.name}: input {x.shape} too small to pool")
        xc = x[:, :ho * 2, :wo * 2, :]
        windows = (xc.reshape(n, ho, 2, wo, 2, c)
                     .transpose(0, 1, 3, 2, 4, 5)
                     .reshape(n, ho, wo, 4, c))
        idx = windows.argmax(axis=3)
        out = np.take_along_axis(windows, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        return out, (x.shape, idx)

    def backward(self, dy, cache):
        (n, h, w, c), idx = cache
        ho, wo = h // 2, w // 2
        dwin = np.zeros((n, ho, wo, 4, c), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
        dx = np.zeros((n, h, w, c), dtype=dy.dtype)
        dx[:, :ho * 2, :wo * 2, :] = (dwin.reshape(n, ho, wo, 2, 2, c)
                                          .transpose(0, 1, 3, 2, 4, 5)
                                          .reshape(n, ho * 2, wo * 2, c))
        return dx, {}

    def out_shape(self, shape):
        h, w, c = shape
        if h // 2 < 1 or w // 2 < 1:
            raise ShapeMismatch(f"{self.name}: shape {shape} too small to pool")
        return (h // 2, w // 2, c)


class GlobalMaxPool(Layer):
    """Max over the spatial axes; output is (N, C) regardless of H, W."""

    kind = "global_max_pool"

    def forward(self, x, train=False, rng=None):
        n, h, w, c = x.shape
        flat = x.reshape(n, h * w, c)
        idx = flat.argmax(axis=1)
        out = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]
        return out, (x.shape, idx)

    def backward(self, dy, cache):
        (n, h, w, c), idx = cache
        dflat = np.zeros((n, h * w, c), dtype=dy.dtype)
        np.put_along_axis(dflat, idx[:, None, :], dy[:, None, :], axis=1)
        return dflat.reshape(n, h, w, c), {}

    def out_shape(self, shape):
        return (shape[2],)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), {}

    def out_shape(self, shape):
        return (int(np.prod(shape)),)


class Dropout(Layer):
    """Inverted dropout; identity in eval mode."""

    kind = "dropout"

    def __init__(self, name, rate):
        super().__init__(name)
        self.rate = float(rate)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate <= 0.0:
            return x, None
        if rng is None:
            raise ValueError(f"{self.name}: train-mode dropout needs an RNG")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        mask = mask.astype(x.dtype)
        return x * mask, mask

    def backward(self, dy, cache):
        if cache is None:
            return dy, {}
        return dy * cache, {}

    def spec(self):
        return {"kind": self.kind, "name": self.name, "rate": self.rate}


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, in_features, units):
        super().__init__(name)
        self.in_features = in_features
        self.units = units
        self.p = {
            "w": np.zeros((in_features, units), dtype=np.float32),
            "b": np.zeros(units, dtype=np.float32),
        }

    def init_weights(self, rng, dtype):
        self.p["w"] = _he_uniform(rng, (self.in_features, self.units),
                                  self.in_features, dtype)
        self.p["b"] = np.zeros(self.units, dtype=dtype)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(
                f"{self.name}: expected (N, {self.in_features}) input, got {x.shape}"
            )
        return x @ self.p["w"] + self.p["b"], x

    def backward(self, dy, cache):
        x = cache
        return dy @ self.p["w"].T, {"w": x.T @ dy, "b": dy.sum(axis=0)}

    def out_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeMismatch(f"{self.name}: expected ({self.in_features},), got {shape}")
        return (self.units,)

    def spec(self):
        return {"kind": self.kind, "name": self.name,
                "in_features": self.in_features, "units": self.units}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True), None

    def backward(self, dy, cache):
        # Training never backprops through this layer: cross-entropy
        # gradients are injected at the logits.
        raise NotImplementedError("softmax gradient is fused into the loss")


_LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv2D, BatchNorm, ReLU, MaxPool2x2, GlobalMaxPool,
                Flatten, Dropout, Dense, Softmax)
}

_CTOR_ARGS = {
    "conv2d": ("in_channels", "filters"),
    "batchnorm": ("channels",),
    "dropout": ("rate",),
    "dense": ("in_features", "units"),
}


def layer_from_spec(spec: dict) -> Layer:
    """Rebuild a layer from its spec dict (weights are loaded separately)."""
    kind = spec.get("kind")
    cls = _LAYER_KINDS.get(kind)
    if cls is None:
        raise UnknownLayerKind(f"unknown layer kind {kind!r}")
    args = [spec[a] for a in _CTOR_ARGS.get(kind, ())]
    return cls(spec["name"], *args)

"""Layer primitives for the convolutional regression network.

Activations are channels-last: ``(B, L, C)`` for 1D and ``(B, H, W, C)`` for
2D feature maps, ``(B, F)`` after flattening. Layers hold no parameters;
the network passes in views of its flat parameter buffer.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import InvalidConfigError


class Layer:
    kind = ""
    # set on the first layer: its input gradient is never used
    skip_dx = False

    def param_shapes(self, in_shape):
        return []

    def out_shape(self, in_shape):
        return in_shape

    def init(self, params, in_shape, rng):
        pass

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dy, cache, params, grads):
        raise NotImplementedError

    def spec(self) -> dict:
        return {"type": self.kind}


class Conv(Layer):
    """Valid (unpadded) convolution over 1 or 2 spatial axes, square kernels in 2D."""

    kind = "conv"

    def __init__(self, kernel, channels, stride=1):
        if kernel < 1 or channels < 1 or stride < 1:
            raise InvalidConfigError("conv kernel, channels and stride must be >= 1")
        self.kernel, self.channels, self.stride = int(kernel), int(channels), int(stride)

    def _dims(self, in_shape):
        if len(in_shape) not in (2, 3):
            raise InvalidConfigError(f"conv expects a 1D or 2D feature map, got shape {in_shape}")
        return len(in_shape) - 1

    def out_shape(self, in_shape):
        nd = self._dims(in_shape)
        spatial = [(s - self.kernel) // self.stride + 1 for s in in_shape[:nd]]
        if min(spatial) < 1:
            raise InvalidConfigError(f"conv kernel {self.kernel} larger than input {in_shape}")
        return (*spatial, self.channels)

    def param_shapes(self, in_shape):
        nd = self._dims(in_shape)
        fan_in = in_shape[-1] * self.kernel**nd
        return [(fan_in, self.channels), (self.channels,)]

    def init(self, params, in_shape, rng):
        w, b = params
        w[...] = rng.standard_normal(w.shape) * np.sqrt(2.0 / w.shape[0])
        b[...] = 0.0

    def _cols(self, x):
        """im2col as a strided view; each row is ``k`` runs of ``k * C`` (2D) or one run (1D)."""
        k, s = self.kernel, self.stride
        x = np.ascontiguousarray(x)
        it = x.itemsize
        if x.ndim == 3:
            b, n, c = x.shape
            lo = (n - k) // s + 1
            return as_strided(x, (b, lo, k * c), (n * c * it, s * c * it, it), writeable=False)
        b, h, w, c = x.shape
        ho, wo = (h - k) // s + 1, (w - k) // s + 1
        return as_strided(x, (b, ho, wo, k, k * c),
                          (h * w * c * it, s * w * c * it, s * c * it, w * c * it, it),
                          writeable=False)

    def forward(self, x, params):
        w, b = params
        win = self._cols(x)
        out_spatial = win.shape[1:x.ndim - 1]
        cols = win.reshape(-1, w.shape[0])
        y = cols @ w
        y += b
        return y.reshape(x.shape[0], *out_spatial, self.channels), (x.shape, cols)

    def backward(self, dy, cache, params, grads):
        w, _ = params
        gw, gb = grads
        x_shape, cols = cache
        dy2 = dy.reshape(-1, self.channels)
        gw += cols.T @ dy2
        gb += dy2.sum(axis=0)
        if self.skip_dx:
            return None
        k, s = self.kernel, self.stride
        cin = x_shape[-1]
        # one (Cout -> Cin) product per kernel offset, added into a contiguous slab of dx
        wk = w.reshape(-1, cin, self.channels)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        if len(x_shape) == 3:
            lo = dy.shape[1]
            for j in range(k):
                dx[:, j:j + s * (lo - 1) + 1:s, :] += (dy2 @ wk[j].T).reshape(x_shape[0], lo, cin)
        else:
            ho, wo = dy.shape[1], dy.shape[2]
            for i in range(k):
                for j in range(k):
                    dx[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += \
                        (dy2 @ wk[i * k + j].T).reshape(x_shape[0], ho, wo, cin)
        return dx

    def spec(self):
        return {"type": self.kind, "kernel": self.kernel, "channels": self.channels,
                "stride": self.stride}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, params):
        mask = x > 0
        return np.maximum(x, 0), mask

    def backward(self, dy, cache, params, grads):
        return np.where(cache, dy, 0)


class AvgPool(Layer):
    """Non-overlapping average pooling; a ragged tail is dropped."""

    kind = "pool"

    def __init__(self, width=2):
        if width < 1:
            raise InvalidConfigError("pool width must be >= 1")
        self.width = int(width)

    def out_shape(self, in_shape):
        if len(in_shape) not in (2, 3):
            raise InvalidConfigError(f"pool expects a 1D or 2D feature map, got shape {in_shape}")
        spatial = [s // self.width for s in in_shape[:-1]]
        if min(spatial) < 1:
            raise InvalidConfigError(f"pool width {self.width} larger than input {in_shape}")
        return (*spatial, in_shape[-1])

    def forward(self, x, params):
        p = self.width
        if x.ndim == 3:
            lo = x.shape[1] // p
            y = x[:, 0:lo * p:p].copy()
            for j in range(1, p):
                y += x[:, j:lo * p:p]
            y *= 1.0 / p
        else:
            ho, wo = x.shape[1] // p, x.shape[2] // p
            y = x[:, :ho * p, :wo * p].reshape(x.shape[0], ho, p, wo, p, x.shape[3]).mean(axis=(2, 4))
        return y, x.shape

    def backward(self, dy, cache, params, grads):
        p = self.width
        dx = np.zeros(cache, dtype=dy.dtype)
        g = dy / (p if dy.ndim == 3 else p * p)
        if dy.ndim == 3:
            lo = dy.shape[1]
            for j in range(p):
                dx[:, j:lo * p:p] = g
        else:
            ho, wo = dy.shape[1], dy.shape[2]
            dx[:, :ho * p, :wo * p] = np.repeat(np.repeat(g, p, axis=1), p, axis=2)
        return dx

    def spec(self):
        return {"type": self.kind, "width": self.width}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache, params, grads):
        return dy.reshape(cache)


class Dense(Layer):
    kind = "dense"

    def __init__(self, units):
        if units < 1:
            raise InvalidConfigError("dense units must be >= 1")
        self.units = int(units)

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise InvalidConfigError(f"dense expects a flat input, got shape {in_shape}; add flatten")
        return (self.units,)

    def param_shapes(self, in_shape):
        return [(in_shape[0], self.units), (self.units,)]

    def init(self, params, in_shape, rng):
        w, b = params
        w[...] = rng.standard_normal(w.shape) * np.sqrt(2.0 / w.shape[0])
        b[...] = 0.0

    def forward(self, x, params):
        w, b = params
        return x @ w + b, x

    def backward(self, dy, cache, params, grads):
        w, _ = params
        gw, gb = grads
        gw += cache.T @ dy
        gb += dy.sum(axis=0)
        return dy @ w.T

    def spec(self):
        return {"type": self.kind, "units": self.units}


def make_layer(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("type", None)
    try:
        if kind == "conv":
            return Conv(**spec)
        if kind == "relu":
            return ReLU()
        if kind == "pool":
            if spec.pop("mode", "avg") != "avg":
                raise InvalidConfigError("only average pooling is supported")
            return AvgPool(**spec)
        if kind == "flatten":
            return Flatten()
        if kind == "dense":
            return Dense(**spec)
    except TypeError as exc:
        raise InvalidConfigError(f"bad {kind} layer spec: {exc}") from exc
    raise InvalidConfigError(f"unknown layer type {kind!r}")

"""Network container: layer stack, flat parameter buffer, forward and backward passes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfigError, InvalidInputError
from .layers import Dense, Layer, make_layer
from .loss import loss_and_grad


@dataclass
class NetworkConfig:
    """``input_shape`` excludes the batch axis: ``(L,)`` for 1D, ``(H, W)`` for 2D spectra."""

    input_shape: tuple
    layers: list
    output_dim: int

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.layers = [dict(spec) for spec in self.layers]
        if len(self.input_shape) not in (1, 2):
            raise InvalidConfigError(f"input_shape must be 1D or 2D, got {self.input_shape}")
        built = self.build_layers()
        last = built[-1] if built else None
        if not isinstance(last, Dense) or last.units != self.output_dim:
            raise InvalidConfigError(f"last layer must be dense with {self.output_dim} units")
        self.shapes()

    def build_layers(self) -> list[Layer]:
        return [make_layer(s) for s in self.layers]

    def shapes(self) -> list[tuple]:
        """Activation shape before each layer plus the final output shape."""
        shape = (*self.input_shape, 1)
        out = [shape]
        for layer in self.build_layers():
            shape = layer.out_shape(shape)
            out.append(shape)
        return out

    def param_count(self) -> int:
        total = 0
        for layer, shape in zip(self.build_layers(), self.shapes()):
            total += sum(int(np.prod(s)) for s in layer.param_shapes(shape))
        return total

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": self.layers,
                "output_dim": self.output_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(tuple(d["input_shape"]), list(d["layers"]), int(d["output_dim"]))


def reference_config(n_sites: int = 20, n_tip: int = 512, grid: tuple | None = None) -> NetworkConfig:
    """Reference architecture; ``grid=(H, W)`` selects the 2D analog."""
    layers = [
        {"type": "conv", "kernel": 9, "channels": 16, "stride": 1},
        {"type": "relu"},
        {"type": "pool", "width": 2},
        {"type": "conv", "kernel": 9, "channels": 32, "stride": 1},
        {"type": "relu"},
        {"type": "pool", "width": 2},
        {"type": "conv", "kernel": 5, "channels": 32, "stride": 1},
        {"type": "relu"},
        {"type": "flatten"},
        {"type": "dense", "units": 256},
        {"type": "relu"},
        {"type": "dense", "units": n_sites},
    ]
    shape = (n_tip,) if grid is None else tuple(grid)
    return NetworkConfig(shape, layers, n_sites)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass
class Network:
    config: NetworkConfig
    params: np.ndarray
    adam: AdamState = field(default=None)

    def __post_init__(self):
        self.layers = self.config.build_layers()
        self.layers[0].skip_dx = True
        shapes = self.config.shapes()
        self._slots = []
        off = 0
        for layer, shape in zip(self.layers, shapes):
            slot = []
            for ps in layer.param_shapes(shape):
                size = int(np.prod(ps))
                slot.append((off, ps))
                off += size
            self._slots.append(slot)
        if self.params.shape != (off,):
            raise InvalidInputError(f"parameter buffer of size {self.params.size}, expected {off}")
        if self.adam is None:
            self.adam = AdamState(np.zeros_like(self.params), np.zeros_like(self.params))

    @classmethod
    def create(cls, config: NetworkConfig, seed: int = 0, dtype=np.float32) -> "Network":
        rng = np.random.default_rng(seed)
        params = np.zeros(config.param_count(), dtype=np.float64)
        net = cls(config, params)
        for layer, shape, views in zip(net.layers, config.shapes(), net._views(params)):
            layer.init(views, shape, rng)
        return cls(config, params.astype(dtype))

    @property
    def dtype(self):
        return self.params.dtype

    def astype(self, dtype) -> "Network":
        return Network(self.config, self.params.astype(dtype))

    def _views(self, buf):
        return [[buf[o:o + int(np.prod(s))].reshape(s) for o, s in slot] for slot in self._slots]

    def layer_params(self):
        """Per-layer lists of parameter views into ``params``."""
        return self._views(self.params)

    def _prepare(self, x):
        x = np.asarray(x, dtype=self.dtype)
        expect = self.config.input_shape
        if x.shape[1:] != expect:
            raise InvalidInputError(f"input batch of shape {x.shape}, expected (B, *{expect})")
        return x[..., None]

    def forward(self, x, keep_cache: bool = False):
        h = self._prepare(x)
        caches = []
        for layer, params in zip(self.layers, self.layer_params()):
            h, cache = layer.forward(h, params)
            if keep_cache:
                caches.append(cache)
        return (h, caches) if keep_cache else h

    def backward_raw(self, caches, dout) -> np.ndarray:
        """Backpropagate ``dL/d(raw output)`` and return the flat parameter gradient."""
        grad = np.zeros_like(self.params)
        gviews = self._views(grad)
        d = dout.astype(self.dtype, copy=False)
        for layer, params, grads, cache in zip(reversed(self.layers), reversed(self.layer_params()),
                                               reversed(gviews), reversed(caches)):
            d = layer.backward(d, cache, params, grads)
        return grad


def forward(net: Network, x) -> np.ndarray:
    """Raw (unnormalized) outputs for a batch."""
    return net.forward(x)


def backward(net: Network, x, targets) -> tuple[float, np.ndarray]:
    """Mean sign-resolved loss of the batch and its gradient w.r.t. all parameters."""
    raw, caches = net.forward(x, keep_cache=True)
    value, draw = loss_and_grad(raw, np.asarray(targets, dtype=net.dtype))
    return value, net.backward_raw(caches, draw)

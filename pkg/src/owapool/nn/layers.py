from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from owapool.owa import (Mode, OwaWeights, PoolPlan, global_plan, owa_pool_backward,
                         owa_pool_forward)
from owapool.tensor import ShapeError


class Layer:
    """Base layer: ``params`` and ``grads`` hold same-shaped arrays by name."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params.items()}
        return f"{type(self).__name__}({shapes})" if shapes else f"{type(self).__name__}()"


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def conv2d_forward(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Valid cross-correlation of ``x`` (N, C, H, W) with ``kernel`` (O, C, kh, kw)."""
    return _conv_cols(x, kernel, bias, stride, padding)[0]


def _conv_cols(x, kernel, bias, stride, padding):
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d needs rank-4 input and kernel, got {x.shape}, {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise ShapeError(f"kernel expects {kernel.shape[1]} channels, input has {x.shape[1]}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    kh, kw = kernel.shape[2:]
    if kh > x.shape[2] or kw > x.shape[3]:
        raise ShapeError(f"kernel {kernel.shape[2:]} larger than padded input {x.shape[2:]}")
    cols = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + np.asarray(bias)[None, :, None, None]
    return np.ascontiguousarray(out), cols, x.shape


class Conv2d(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1,
                 padding: int = 0, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        self.params["W"] = glorot_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in, fan_out)
        self.params["b"] = np.zeros(out_channels)
        self.zero_grad()

    def forward(self, x, train=False):
        out, self._cols, self._padded_shape = _conv_cols(x, self.params["W"], self.params["b"],
                                                         self.stride, self.padding)
        return out

    def backward(self, grad):
        W = self.params["W"]
        s, p = self.stride, self.padding
        kh, kw = W.shape[2:]
        oh, ow = grad.shape[2:]
        self.grads["W"] += np.tensordot(grad, self._cols, axes=([0, 2, 3], [0, 2, 3]))
        self.grads["b"] += grad.sum(axis=(0, 2, 3))
        dcols = np.tensordot(grad, W, axes=([1], [0]))  # (N, oh, ow, C, kh, kw)
        dx = np.zeros(self._padded_shape)
        for a in range(kh):
            for b in range(kw):
                dx[:, :, a : a + s * (oh - 1) + 1 : s, b : b + s * (ow - 1) + 1 : s] += \
                    dcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
        if p:
            dx = dx[:, :, p:-p, p:-p]
        return dx


class Relu(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class Pool(Layer):
    """Max, average or OWA pooling.

    ``plan=None`` means global pooling over whatever spatial extent arrives.
    OWA weights live in ``params["w"]`` (same array as ``weights.values``).
    """

    def __init__(self, plan: PoolPlan | None, weights: OwaWeights | None = None,
                 mode: Mode = Mode.OWA, trainable: bool = True):
        super().__init__()
        self.plan = plan
        self.mode = Mode(plan.mode if plan is not None else mode)
        self.weights = weights
        self.trainable = trainable
        if self.mode == Mode.OWA:
            if weights is None:
                raise ValueError("OWA pooling layer needs weights")
            self.params["w"] = weights.values
        self.zero_grad()

    @property
    def is_owa(self) -> bool:
        return self.mode == Mode.OWA

    def _plan_for(self, x) -> PoolPlan:
        if self.plan is not None:
            return self.plan
        return global_plan(x.shape[2], x.shape[3], self.mode)

    def forward(self, x, train=False):
        if self.is_owa:
            self.weights.values = self.params["w"]
        y, self._trace = owa_pool_forward(x, self._plan_for(x), self.weights)
        return y

    def backward(self, grad):
        gx, gw = owa_pool_backward(grad, self._trace, self.weights)
        if gw is not None:
            self.grads["w"] += gw
        return gx

    def __repr__(self):
        geom = "global" if self.plan is None else f"{self.plan.window}/{self.plan.stride}"
        extra = ""
        if self.is_owa:
            extra = f", {self.weights.scope.value}, {self.weights.regime.value}, w{self.params['w'].shape}"
        return f"Pool({self.mode.value}, {geom}{extra})"


class Dropout(Layer):
    """Inverted dropout; inactive unless ``enabled`` and in training mode."""

    def __init__(self, keep_prob: float = 0.5, enabled: bool = False,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.keep_prob = keep_prob
        self.enabled = enabled
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x, train=False):
        if not (train and self.enabled):
            self._mask = None
            return x
        self._mask = (self.rng.random(x.shape) < self.keep_prob) / self.keep_prob
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Flatten(Layer):
    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim)
        self.params["b"] = np.zeros(out_dim)
        self.zero_grad()

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.params["W"].shape[0]:
            raise ShapeError(f"dense layer expects (batch, {self.params['W'].shape[0]}), got {x.shape}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        self.grads["W"] += self._x.T @ grad
        self.grads["b"] += grad.sum(axis=0)
        return grad @ self.params["W"].T

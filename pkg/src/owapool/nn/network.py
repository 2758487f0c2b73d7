from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from owapool.nn.layers import Layer, Pool
from owapool.owa import Regime, RegularizationConfig, penalty_cost, penalty_grad


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of integer ``labels`` and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    m, k = logits.shape
    if labels.shape != (m,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be {m} integers in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(m), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(m), labels] -= 1.0
    return float(loss), grad / m


@dataclass
class LossParts:
    J: float
    J_CE: float
    penalty: float


class Network:
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def __repr__(self):
        body = "\n".join(f"  {i}: {layer!r}" for i, layer in enumerate(self.layers))
        return f"Network(\n{body}\n)"

    def forward(self, x, train: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self) -> Iterator[tuple[int, str, Layer]]:
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield i, name, layer

    def pool_layers(self) -> list[Pool]:
        return [l for l in self.layers if isinstance(l, Pool)]

    def owa_layers(self) -> list[Pool]:
        return [l for l in self.pool_layers() if l.is_owa]

    def penalty(self, reg: RegularizationConfig) -> float:
        return sum(penalty_cost(l.params["w"], reg) for l in self._penalized())

    def _penalized(self) -> list[Pool]:
        return [l for l in self.owa_layers() if l.trainable and l.weights.regime == Regime.PENALTY]

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out)

    def accuracy(self, x, y, batch_size: int = 256) -> float:
        return float((self.predict(x, batch_size) == np.asarray(y)).mean())


def network_forward_backward(net: Network, x, y, reg: RegularizationConfig | None = None,
                             train: bool = False) -> LossParts:
    """Loss J = J_CE + penalty over trainable penalty-regime OWA layers; fills grads."""
    reg = reg if reg is not None else RegularizationConfig()
    net.zero_grad()
    logits = net.forward(x, train)
    ce, g = softmax_cross_entropy(logits.reshape(len(logits), -1), y)
    net.backward(g.reshape(logits.shape))
    pen = 0.0
    for layer in net._penalized():
        pen += penalty_cost(layer.params["w"], reg)
        layer.grads["w"] += penalty_grad(layer.params["w"], reg)
    return LossParts(ce + pen, ce, pen)


def network_loss(net: Network, x, y, reg: RegularizationConfig | None = None) -> float:
    reg = reg if reg is not None else RegularizationConfig()
    logits = net.forward(x)
    ce, _ = softmax_cross_entropy(logits.reshape(len(logits), -1), y)
    return ce + net.penalty(reg)


ParamSelector = Callable[[int, str, Layer], bool]


def finite_diff_grad_check(net: Network, x, y, epsilon: float = 1e-6,
                           param_selector: ParamSelector | None = None,
                           reg: RegularizationConfig | None = None, n_samples: int = 30,
                           rng: np.random.Generator | None = None, floor: float = 1e-6,
                           grads: dict | None = None) -> float:
    """Max relative error of analytic vs central-difference gradients of J.

    Checks ``n_samples`` random entries per selected parameter.  ``grads``
    overrides the analytic gradients (keyed by ``(layer_index, name)``).
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    network_forward_backward(net, x, y, reg)
    analytic = {(i, name): layer.grads[name].copy() for i, name, layer in net.parameters()}
    if grads is not None:
        analytic.update(grads)

    worst = 0.0
    for i, name, layer in net.parameters():
        if param_selector is not None and not param_selector(i, name, layer):
            continue
        p = layer.params[name]
        flat = p.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
        for j in idx:
            old = flat[j]
            flat[j] = old + epsilon
            up = network_loss(net, x, y, reg)
            flat[j] = old - epsilon
            down = network_loss(net, x, y, reg)
            flat[j] = old
            num = (up - down) / (2 * epsilon)
            ana = analytic[(i, name)].reshape(-1)[j]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from owapool.nn.layers import Pool
from owapool.nn.network import Network, network_forward_backward
from owapool.owa import Regime, RegularizationConfig, project_rows


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 10
    batch_size: int = 32
    weight_lr_multiplier: float = 1.0  # OWA weights only
    reg: RegularizationConfig = field(default_factory=RegularizationConfig)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if isinstance(self.reg, dict):
            self.reg = RegularizationConfig(**self.reg)


class SGD:
    """Momentum SGD: ``v <- momentum*v - lr*g; p <- p + v``.

    OWA weights use ``lr * weight_lr_multiplier`` and projected-regime rows
    are clipped and renormalized after every step.
    """

    def __init__(self, learning_rate: float, momentum: float = 0.9, weight_lr_multiplier: float = 1.0):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_lr_multiplier = weight_lr_multiplier
        self.velocity: dict[tuple[int, str], np.ndarray] = {}
        self.degenerate_resets = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> SGD:
        return cls(cfg.learning_rate, cfg.momentum, cfg.weight_lr_multiplier)

    def step(self, net: Network):
        for i, name, layer in net.parameters():
            is_owa = isinstance(layer, Pool) and name == "w"
            if is_owa and not layer.trainable:
                continue
            lr = self.learning_rate * (self.weight_lr_multiplier if is_owa else 1.0)
            p, g = layer.params[name], layer.grads[name]
            v = self.velocity.get((i, name))
            if v is None:
                v = self.velocity[(i, name)] = np.zeros_like(p)
            v *= self.momentum
            v -= lr * g
            p += v
            if is_owa and layer.weights.regime == Regime.PROJECTED:
                p[...], n_reset = project_rows(p)
                self.degenerate_resets += n_reset


def sgd_step(net: Network, cfg: TrainConfig, optimizer: SGD | None = None) -> SGD:
    """One update from the gradients currently stored in ``net``."""
    optimizer = optimizer if optimizer is not None else SGD.from_config(cfg)
    optimizer.step(net)
    return optimizer


EpochCallback = Callable[[int, Network, dict], None]


def train(net: Network, x, y, cfg: TrainConfig, x_test=None, y_test=None,
          callback: EpochCallback | None = None, dropout: bool = False) -> list[dict]:
    """Minibatch training; returns one metrics dict per epoch.

    The shuffling order depends only on ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = SGD.from_config(cfg)
    history = []
    m = len(x)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(m)
        J = J_CE = pen = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            parts = network_forward_backward(net, x[idx], y[idx], cfg.reg, train=dropout)
            if not np.isfinite(parts.J):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            opt.step(net)
            frac = len(idx) / m
            J += parts.J * frac
            J_CE += parts.J_CE * frac
            pen += parts.penalty * frac
        row = {"epoch": epoch, "J": J, "J_CE": J_CE, "penalty": pen,
               "penalty_end": net.penalty(cfg.reg),
               "train_acc": net.accuracy(x, y)}
        if x_test is not None:
            row["test_acc"] = net.accuracy(x_test, y_test)
        history.append(row)
        if callback is not None:
            callback(epoch, net, row)
    return history

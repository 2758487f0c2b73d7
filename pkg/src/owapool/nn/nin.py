"""Network builders: Network-in-Network and a small one-pool testbed."""
from __future__ import annotations

import enum

import numpy as np

from owapool.nn.layers import Conv2d, Dense, Dropout, Flatten, Pool, Relu
from owapool.nn.network import Network
from owapool.owa import Mode, PoolPlan, Regime, Scope, init_weights


class Variant(str, enum.Enum):
    ORIG = "Orig"
    MAX = "Max"
    AVG = "Avg"
    OWAL = "OWAL"          # one weight vector per pooling layer, soft constraints
    OWALNR = "OWALnr"      # ... unconstrained
    OWALCO = "OWALco"      # ... clip-and-renormalize after each step
    OWALC = "OWALC"        # one weight vector per channel, soft constraints
    OWALCNR = "OWALCnr"
    OWALCCO = "OWALCco"

    @classmethod
    def parse(cls, name) -> Variant:
        if isinstance(name, cls):
            return name
        for v in cls:
            if v.value.lower() == str(name).lower():
                return v
        raise ValueError(f"unknown pooling variant {name!r}; choose from {[v.value for v in cls]}")

    @property
    def is_owa(self) -> bool:
        return self.value.startswith("OWA")

    @property
    def scope(self) -> Scope:
        return Scope.PER_CHANNEL if self.value.startswith("OWALC") else Scope.SHARED

    @property
    def regime(self) -> Regime:
        if self.value.endswith("nr"):
            return Regime.UNCONSTRAINED
        if self.value.endswith("co"):
            return Regime.PROJECTED
        return Regime.PENALTY


def make_pool(variant: Variant, channels: int, window, stride=None, fixed: Mode = Mode.MAX,
              global_hw: tuple[int, int] | None = None) -> Pool:
    """Pooling layer for ``variant``; ``fixed`` is the mode used by ``Orig``.

    ``global_hw`` makes the window span the whole (known) spatial extent.
    """
    if global_hw is not None:
        window = stride = global_hw
    if variant == Variant.MAX:
        mode = Mode.MAX
    elif variant == Variant.AVG:
        mode = Mode.AVG
    elif variant == Variant.ORIG:
        mode = fixed
    else:
        mode = Mode.OWA
    plan = PoolPlan(window, stride, mode)
    weights = None
    if mode == Mode.OWA:
        weights = init_weights(plan.n, channels, variant.scope, variant.regime)
    return Pool(plan, weights)


def build_nin(num_classes: int = 10, variant: Variant | str = Variant.ORIG, seed: int = 0,
              in_channels: int = 3, dropout: bool = False) -> Network:
    """NiN for 32x32 inputs with pooling sites 3x3/2, 3x3/2 and global 8x8.

    The first 5x5 convolution of blocks one and two pads by 3 so that unpadded
    3x3 stride-2 pooling maps 34 -> 16 and 18 -> 8.
    """
    if num_classes not in (10, 100):
        raise ValueError("num_classes must be 10 or 100")
    variant = Variant.parse(variant)
    rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng(seed + 1)

    def conv(cin, cout, k, pad=0):
        return [Conv2d(cin, cout, k, padding=pad, rng=rng), Relu()]

    layers = [
        *conv(in_channels, 192, 5, pad=3),
        *conv(192, 160, 1),
        *conv(160, 96, 1),
        make_pool(variant, 96, 3, 2, fixed=Mode.MAX),
        Dropout(0.5, enabled=dropout, rng=drop_rng),
        *conv(96, 192, 5, pad=3),
        *conv(192, 192, 1),
        *conv(192, 192, 1),
        make_pool(variant, 192, 3, 2, fixed=Mode.AVG),
        Dropout(0.5, enabled=dropout, rng=drop_rng),
        *conv(192, 192, 5, pad=2),
        *conv(192, 192, 1),
        *conv(192, num_classes, 1),
        make_pool(variant, num_classes, 8, 8, fixed=Mode.AVG),
        Flatten(),
    ]
    return Network(layers)


def build_small_net(variant: Variant | str, in_channels: int = 1, image_size: int = 16,
                    filters: int = 4, kernel: int = 3, num_classes: int = 2, seed: int = 0,
                    pool_window: int | None = None) -> Network:
    """conv -> relu -> pool -> dense.

    Pooling is global unless ``pool_window`` is given (then stride = window).
    """
    variant = Variant.parse(variant)
    rng = np.random.default_rng(seed)
    fmap = image_size - kernel + 1
    if pool_window is None:
        pool = make_pool(variant, filters, None, global_hw=(fmap, fmap))
        out_hw = 1
    else:
        pool = make_pool(variant, filters, pool_window, pool_window)
        out_hw = (fmap - pool_window) // pool_window + 1
    return Network([
        Conv2d(in_channels, filters, kernel, rng=rng),
        Relu(),
        pool,
        Flatten(),
        Dense(filters * out_hw * out_hw, num_classes, rng=rng),
    ])


def freeze_degenerate(net: Network, mode: Mode = Mode.MAX) -> Network:
    """Pin every OWA layer to the max (or mean) weights and stop learning them."""
    for layer in net.owa_layers():
        w = layer.params["w"]
        if mode == Mode.MAX:
            w[...] = 0.0
            w[:, 0] = 1.0
        else:
            w[...] = 1.0 / w.shape[1]
        layer.trainable = False
    return net

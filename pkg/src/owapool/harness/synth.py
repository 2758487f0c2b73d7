"""Synthetic datasets whose class signal favours a known pooling operator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "blob"        # "blob": sparse bright spot; "texture": grating frequency
    n: int = 1000
    size: int = 20
    channels: int = 1
    noise: float = 0.4
    noise_spread: float = 0.5      # per-image noise scale drawn from noise * U(1 - spread, 1 + spread)
    blob_amplitude: float = 2.0
    offset: float = 0.5            # blob kind: per-image brightness offset drawn from U(-offset, offset)
    spike_amplitude: float = 10.0  # texture kind: outlier spikes that mislead max pooling
    spikes: int = 8
    n_classes: int = 2


def synth_dataset(spec: SynthSpec, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Images ``(n, channels, size, size)`` and balanced integer labels.

    ``blob``: class 1 images hold one small bright 2x2 spot at a random
    location, class 0 none; every image gets a random brightness offset, so
    the class is visible in the strongest local response but barely in the mean.

    ``texture``: a sinusoidal grating whose frequency encodes the class, plus
    a few isolated spikes of large amplitude and random sign in every image;
    the class is spread over the whole image while the maximum is dominated
    by the spikes.
    """
    rng = np.random.default_rng(seed)
    n, s = spec.n, spec.size
    y = np.arange(n) % spec.n_classes
    rng.shuffle(y)
    scale = spec.noise * rng.uniform(1 - spec.noise_spread, 1 + spec.noise_spread, (n, 1, 1, 1))
    x = scale * rng.standard_normal((n, spec.channels, s, s))
    if spec.kind == "blob":
        x += rng.uniform(-spec.offset, spec.offset, (n, 1, 1, 1))
        for i in np.flatnonzero(y > 0):
            r, c = rng.integers(0, s - 1, size=2)
            x[i, :, r : r + 2, c : c + 2] += spec.blob_amplitude
    elif spec.kind == "texture":
        rr, cc = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
        freqs = np.linspace(0.5, 1.5, spec.n_classes) * (2 * np.pi / 4)
        for i in range(n):
            theta = rng.uniform(0, 2 * np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            u = rr * np.cos(theta) + cc * np.sin(theta)
            x[i] += np.sin(freqs[y[i]] * u + phase)
            for _ in range(spec.spikes):
                r, c = rng.integers(0, s, size=2)
                x[i, :, r, c] += spec.spike_amplitude * rng.uniform(0.5, 1.0) * rng.choice((-1.0, 1.0))
    else:
        raise ValueError(f"unknown synthetic kind {spec.kind!r}")
    return x, y


def spurious_codes(n_images: int = 200, K: int = 16, cells: int = 16, seed: int = 0,
                   strong: tuple[float, float] = (0.9, 1.5),
                   moderate: tuple[float, float] = (0.4, 0.6),
                   positive_moderate: int = 7, negative_moderate: int = 1
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Coded BoW images ``(n, cells, K)`` where max pooling is fooled.

    Word 0 is discriminative: positives (label 1) activate it moderately in
    many cells, negatives in few.  Both classes carry exactly one strong
    activation of word 0 (genuine for positives, spurious for negatives) drawn
    from the same range, so the per-image maximum of word 0 carries no class
    information.  Word 1 is a constant background word acting as a bias.
    """
    if K < 2 or max(positive_moderate, negative_moderate) >= cells:
        raise ValueError(f"need K >= 2 and more than {max(positive_moderate, negative_moderate)} cells")
    rng = np.random.default_rng(seed)
    y = np.arange(n_images) % 2
    rng.shuffle(y)
    codes = rng.uniform(0.0, 0.3, (n_images, cells, K)) * (rng.random((n_images, cells, K)) < 0.3)
    codes[:, :, 0] = 0.0
    codes[:, :, 1] = rng.uniform(0.4, 0.6, (n_images, cells))
    for i in range(n_images):
        order = rng.permutation(cells)
        codes[i, order[0], 0] = rng.uniform(*strong)
        k = positive_moderate if y[i] == 1 else negative_moderate
        codes[i, order[1 : 1 + k], 0] = rng.uniform(*moderate, size=k)
    return codes, y


def separable_codes(n_images: int = 20, K: int = 4, cells: int = 4, seed: int = 0
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Small linearly separable toy: class 1 has one high activation of word 0."""
    rng = np.random.default_rng(seed)
    y = np.arange(n_images) % 2
    codes = rng.uniform(0.0, 0.2, (n_images, cells, K))
    codes[:, :, 1] = rng.uniform(0.4, 0.6, (n_images, cells))
    for i in np.flatnonzero(y == 1):
        codes[i, rng.integers(cells), 0] = rng.uniform(1.0, 1.5)
    return codes, y

"""Dense float64 arrays with fixed (n, c, h, w) layout.

Everything downstream works on plain numpy arrays; ``Tensor4`` and ``Matrix``
are thin validated wrappers used at API boundaries.
"""
from __future__ import annotations

from typing import Callable

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor4:
    """Rank-4 float64 array, row-major in (batch, channel, height, width)."""

    __slots__ = ("data",)

    def __init__(self, data, shape: tuple[int, int, int, int] | None = None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if shape is not None:
            if arr.size != int(np.prod(shape)):
                raise ShapeError(f"{arr.size} values cannot fill shape {tuple(shape)}")
            arr = arr.reshape(shape)
        if arr.ndim != 4:
            raise ShapeError(f"expected rank 4, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}")
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor4):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"Tensor4(shape={self.shape})"

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def reshape(self, new_shape) -> Tensor4:
        return reshape(self, new_shape)

    def map(self, f: Callable[[np.ndarray], np.ndarray]) -> Tensor4:
        return elementwise(self, f)


class Matrix:
    """Rank-2 float64 array (rows, cols)."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"expected rank 2, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape  # type: ignore[return-value]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        return f"Matrix(shape={self.shape})"


def reshape(t: Tensor4, new_shape) -> Tensor4:
    new_shape = tuple(int(s) for s in new_shape)
    if len(new_shape) != 4 or int(np.prod(new_shape)) != t.data.size:
        raise ShapeError(f"cannot reshape {t.shape} into {new_shape}")
    return Tensor4(t.data.reshape(new_shape))


def elementwise(t: Tensor4, f: Callable) -> Tensor4:
    """Apply ``f`` to every element.

    ``f`` may be a numpy ufunc-style callable taking the whole array; a plain
    scalar function is vectorized as a fallback.
    """
    try:
        out = np.asarray(f(t.data), dtype=np.float64)
        if out.shape != t.shape:
            raise TypeError
    except (TypeError, ValueError):
        out = np.vectorize(f, otypes=[np.float64])(t.data)
    return Tensor4(out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)

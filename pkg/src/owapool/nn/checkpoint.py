"""Flat binary checkpoints.

Layout (little-endian): magic ``OWANN1``, u32 layer count, then per layer a
u32 parameter count followed, per parameter, by u32 ndim, ndim u32 dims and
the raw float64 values.  Parameters are written in layer order and, within a
layer, in insertion order of ``layer.params``.
"""
from __future__ import annotations

import struct

import numpy as np

from owapool.nn.network import Network

MAGIC = b"OWANN1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            fh.write(struct.pack("<I", len(layer.params)))
            for arr in layer.params.values():
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path) -> list[list[np.ndarray]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not an OWANN1 checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (n_layers,) = take("<I")
    layers = []
    for _ in range(n_layers):
        (n_params,) = take("<I")
        params = []
        for _ in range(n_params):
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I")
            count = int(np.prod(shape))
            if pos + 8 * count > len(buf):
                raise CheckpointError(f"truncated checkpoint at byte {pos}")
            params.append(np.frombuffer(buf, "<f8", count, pos).reshape(shape).astype(np.float64))
            pos += 8 * count
        layers.append(params)
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes")
    return layers


def load_checkpoint(net: Network, path) -> Network:
    """Copy parameters from ``path`` into an identically built ``net``."""
    stored = read_checkpoint(path)
    if len(stored) != len(net.layers):
        raise CheckpointError(f"checkpoint has {len(stored)} layers, network {len(net.layers)}")
    for layer, params in zip(net.layers, stored):
        if len(params) != len(layer.params):
            raise CheckpointError(f"parameter count mismatch in {layer!r}")
        for (name, dst), src in zip(layer.params.items(), params):
            if dst.shape != src.shape:
                raise CheckpointError(f"{layer!r}.{name}: shape {src.shape} != {dst.shape}")
            dst[...] = src
    return net

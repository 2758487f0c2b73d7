"""CIFAR-10 binary batches: 3073-byte records, label byte then R, G, B planes."""
from __future__ import annotations

import glob
import os

import numpy as np

RECORD = 3073
IMAGE_SHAPE = (3, 32, 32)


class CifarFormatError(ValueError):
    pass


def parse_records(buf: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Raw uint8 images ``(n, 3, 32, 32)`` and labels from one batch file's bytes."""
    if len(buf) % RECORD:
        offset = len(buf) - len(buf) % RECORD
        raise CifarFormatError(f"{source}: truncated record at byte offset {offset} "
                               f"({len(buf) % RECORD} of {RECORD} bytes)")
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, RECORD)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise CifarFormatError(f"{source}: label byte {labels[bad[0]]} > 9 at byte offset {bad[0] * RECORD}")
    return raw[:, 1:].reshape(-1, *IMAGE_SHAPE), labels


def batch_files(path, split: str = "train") -> list[str]:
    if os.path.isfile(path):
        return [path]
    pattern = "data_batch_*.bin" if split == "train" else "test_batch.bin"
    files = sorted(glob.glob(os.path.join(path, pattern)))
    if not files:
        files = sorted(glob.glob(os.path.join(path, "cifar-10-batches-bin", pattern)))
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 {split} batches under {path}")
    return files


def load_cifar10(path, n_samples: int | None = None, class_filter=None, split: str = "train",
                 mean: np.ndarray | None = None, seed: int = 0
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Images scaled to [0, 1] with per-channel mean subtracted.

    ``mean`` defaults to the per-channel mean of the returned subset (pass the
    training mean when loading the test split).  ``class_filter`` keeps only
    the listed labels, relabelled to 0..len-1 in sorted order.  A random
    subset of ``n_samples`` is drawn with ``seed``.
    """
    images, labels = [], []
    for f in batch_files(path, split):
        with open(f, "rb") as fh:
            x, y = parse_records(fh.read(), f)
        images.append(x)
        labels.append(y)
    x = np.concatenate(images)
    y = np.concatenate(labels)
    if class_filter is not None:
        keep = sorted(int(c) for c in class_filter)
        mask = np.isin(y, keep)
        x, y = x[mask], np.searchsorted(keep, y[mask])
    if n_samples is not None:
        if n_samples > len(y):
            raise ValueError(f"asked for {n_samples} samples, only {len(y)} available")
        idx = np.sort(np.random.default_rng(seed).choice(len(y), n_samples, replace=False))
        x, y = x[idx], y[idx]
    x = x.astype(np.float64) / 255.0
    if mean is None:
        mean = x.mean(axis=(0, 2, 3))
    x -= np.asarray(mean)[None, :, None, None]
    return x, y, mean


def write_records(path, images_uint8: np.ndarray, labels) -> None:
    """Write images ``(n, 3, 32, 32)`` uint8 in the binary batch layout."""
    images_uint8 = np.asarray(images_uint8, dtype=np.uint8).reshape(len(labels), -1)
    out = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images_uint8], axis=1)
    with open(path, "wb") as fh:
        fh.write(out.tobytes())

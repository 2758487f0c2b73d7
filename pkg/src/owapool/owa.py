"""Ordered weighted average (OWA) aggregation and pooling.

An OWA operator attaches its weights to ranks rather than positions: the
inputs are sorted in descending order and dotted with ``w``.  With
``w = (1, 0, ..., 0)`` it is the maximum, with uniform ``w`` the mean.
"""
from __future__ import annotations

import csv
import enum
import io
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from owapool.tensor import ShapeError


class Mode(str, enum.Enum):
    MAX = "max"
    AVG = "avg"
    OWA = "owa"


class Scope(str, enum.Enum):
    SHARED = "shared"
    PER_CHANNEL = "per_channel"


class Regime(str, enum.Enum):
    PENALTY = "penalty"
    PROJECTED = "projected"
    UNCONSTRAINED = "unconstrained"


@dataclass(frozen=True)
class RegularizationConfig:
    """Coefficients of the three soft simplex terms on the OWA weights.

    c1 penalizes negative weights, c2 the squared deviation of the sum
    from one, and c3 squared differences between consecutive weights.
    """

    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.01

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise ValueError(f"regularization coefficients must be >= 0: {self}")


@dataclass
class OwaWeights:
    values: np.ndarray  # (rows, n); rows == 1 when shared
    scope: Scope = Scope.SHARED
    regime: Regime = Regime.PENALTY

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64, ndmin=2)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ShapeError(f"weights must be (rows, n>=1), got {self.values.shape}")
        if self.scope == Scope.SHARED and self.values.shape[0] != 1:
            raise ShapeError("shared weights must have exactly one row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("weights must be finite")

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    def row_for_channels(self, channels: int) -> np.ndarray:
        """Weight matrix broadcast to ``(channels, n)``."""
        if self.scope == Scope.SHARED:
            return np.broadcast_to(self.values, (channels, self.n))
        if self.rows != channels:
            raise ShapeError(f"per-channel weights have {self.rows} rows, input has {channels} channels")
        return self.values

    def copy(self) -> OwaWeights:
        return replace(self, values=self.values.copy())


def init_weights(n: int, channels: int = 1, scope: Scope = Scope.SHARED,
                 regime: Regime = Regime.PENALTY) -> OwaWeights:
    if n < 1:
        raise ValueError("region size must be >= 1")
    rows = 1 if Scope(scope) == Scope.SHARED else channels
    return OwaWeights(np.full((rows, n), 1.0 / n), Scope(scope), Regime(regime))


# ---------------------------------------------------------------- aggregation

def sort_desc(values) -> tuple[np.ndarray, np.ndarray]:
    """Descending sort along the last axis; ties keep ascending index order."""
    values = np.asarray(values, dtype=np.float64)
    perm = np.argsort(-values, axis=-1, kind="stable")
    return np.take_along_axis(values, perm, axis=-1), perm


def owa_aggregate(values, w) -> float:
    values = np.asarray(values, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if values.shape != w.shape or values.ndim != 1:
        raise ShapeError(f"length mismatch: {values.shape} vs {w.shape}")
    sorted_values, _ = sort_desc(values)
    return float(sorted_values @ w)


# -------------------------------------------------------------------- pooling

@dataclass(frozen=True)
class PoolPlan:
    window: tuple[int, int]
    stride: tuple[int, int] | None = None  # defaults to the window
    mode: Mode = Mode.OWA

    def __post_init__(self):
        object.__setattr__(self, "window", _pair(self.window))
        object.__setattr__(self, "stride", _pair(self.stride if self.stride is not None else self.window))
        object.__setattr__(self, "mode", Mode(self.mode))
        if min(self.window) < 1 or min(self.stride) < 1:
            raise ValueError(f"window and stride must be positive: {self}")

    @property
    def n(self) -> int:
        return self.window[0] * self.window[1]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.window
        sh, sw = self.stride
        if kh > h or kw > w:
            raise ShapeError(f"window {self.window} does not fit input {h}x{w}")
        return (h - kh) // sh + 1, (w - kw) // sw + 1


def global_plan(h: int, w: int, mode: Mode = Mode.OWA) -> PoolPlan:
    return PoolPlan((h, w), (h, w), mode)


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


@dataclass
class PoolTrace:
    """What the backward pass needs from the forward pass.

    ``perm[..., k]`` is the in-window index of the k-th largest value.  Only
    populated in OWA mode; max mode keeps ``argmax`` and mean mode nothing.
    """

    input_shape: tuple[int, int, int, int]
    plan: PoolPlan
    perm: np.ndarray | None = None
    sorted_values: np.ndarray | None = field(default=None, repr=False)
    argmax: np.ndarray | None = None


def windows(x: np.ndarray, plan: PoolPlan) -> np.ndarray:
    """Gather pooling windows as ``(N, C, oh, ow, kh*kw)`` (row-major in-window)."""
    kh, kw = plan.window
    sh, sw = plan.stride
    oh, ow = plan.output_hw(x.shape[2], x.shape[3])
    v = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, : sh * (oh - 1) + 1 : sh, : sw * (ow - 1) + 1 : sw]
    return v.reshape(x.shape[0], x.shape[1], oh, ow, kh * kw)


def owa_pool_forward(x, plan: PoolPlan, w: OwaWeights | None = None) -> tuple[np.ndarray, PoolTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"expected (n, c, h, w) input, got {x.shape}")
    win = windows(x, plan)
    trace = PoolTrace(x.shape, plan)
    if plan.mode == Mode.MAX:
        trace.argmax = win.argmax(axis=-1)
        return np.take_along_axis(win, trace.argmax[..., None], -1)[..., 0], trace
    if plan.mode == Mode.AVG:
        return win.mean(axis=-1), trace

    if w is None:
        raise ValueError("OWA pooling needs weights")
    if w.n != plan.n:
        raise ShapeError(f"{w.n} weights for a window of {plan.n} values")
    wm = w.row_for_channels(x.shape[1])
    perm = np.argsort(-win, axis=-1, kind="stable")
    s = np.take_along_axis(win, perm, axis=-1)
    if w.scope == Scope.SHARED:
        y = s @ wm[0]
    else:
        y = np.einsum("ncijk,ck->ncij", s, wm)
    trace.perm = perm
    trace.sorted_values = s
    return y, trace


def owa_pool_infer(x, plan: PoolPlan, w: OwaWeights) -> np.ndarray:
    """Forward OWA pooling without a trace.

    When only the leading ``r`` weights of every row are nonzero, the top ``r``
    values are selected with a partial partition before sorting.
    """
    x = np.asarray(x, dtype=np.float64)
    win = windows(x, plan)
    wm = w.row_for_channels(x.shape[1])
    nz = np.flatnonzero(np.any(wm != 0, axis=0))
    r = int(nz[-1]) + 1 if nz.size else 1
    if r < plan.n:
        top = -np.partition(-win, r - 1, axis=-1)[..., :r]
        s = -np.sort(-top, axis=-1)
    else:
        s = -np.sort(-win, axis=-1)
    if w.scope == Scope.SHARED:
        return s @ wm[0, :r]
    return np.einsum("ncijk,ck->ncij", s, wm[:, :r])


def owa_pool_backward(grad_y, trace: PoolTrace, w: OwaWeights | None = None
                      ) -> tuple[np.ndarray, np.ndarray | None]:
    """Gradients w.r.t. the pooled input and (OWA mode) the weights.

    Overlapping windows accumulate into ``grad_x``.  ``grad_w`` has the shape
    of ``w.values``: summed over channels when shared.
    """
    grad_y = np.asarray(grad_y, dtype=np.float64)
    plan = trace.plan
    N, C, H, W = trace.input_shape
    oh, ow = plan.output_hw(H, W)
    if grad_y.shape != (N, C, oh, ow):
        raise ShapeError(f"grad_y {grad_y.shape} does not match forward output {(N, C, oh, ow)}")

    n = plan.n
    grad_w = None
    if plan.mode == Mode.MAX:
        g_win = np.zeros((N, C, oh, ow, n))
        np.put_along_axis(g_win, trace.argmax[..., None], grad_y[..., None], axis=-1)
    elif plan.mode == Mode.AVG:
        g_win = np.broadcast_to(grad_y[..., None] / n, (N, C, oh, ow, n))
    else:
        if w is None or trace.perm is None:
            raise ValueError("OWA backward needs weights and a forward trace")
        wm = w.row_for_channels(C)
        g_sorted = grad_y[..., None] * wm[None, :, None, None, :]
        g_win = np.empty_like(g_sorted)
        np.put_along_axis(g_win, trace.perm, g_sorted, axis=-1)
        if w.scope == Scope.SHARED:
            grad_w = np.einsum("ncijk,ncij->k", trace.sorted_values, grad_y)[None, :]
        else:
            grad_w = np.einsum("ncijk,ncij->ck", trace.sorted_values, grad_y)

    grad_x = _fold(g_win, trace.input_shape, plan)
    return grad_x, grad_w


def _fold(g_win: np.ndarray, input_shape, plan: PoolPlan) -> np.ndarray:
    """Scatter-add per-window gradients back onto the input grid."""
    kh, kw = plan.window
    sh, sw = plan.stride
    oh, ow = g_win.shape[2:4]
    grad_x = np.zeros(input_shape)
    for di in range(kh):
        for dj in range(kw):
            grad_x[:, :, di : di + sh * (oh - 1) + 1 : sh, dj : dj + sw * (ow - 1) + 1 : sw] += g_win[..., di * kw + dj]
    return grad_x


# ---------------------------------------------------------------- constraints

def penalty_cost(w: OwaWeights | np.ndarray, cfg: RegularizationConfig) -> float:
    v = _values(w)
    neg = np.maximum(0.0, -v).sum()
    dev = ((v.sum(axis=1) - 1.0) ** 2).sum()
    smooth = (np.diff(v, axis=1) ** 2).sum()
    return float(cfg.c1 * neg + cfg.c2 * dev + cfg.c3 * smooth)


def penalty_grad(w: OwaWeights | np.ndarray, cfg: RegularizationConfig) -> np.ndarray:
    """Exact gradient of :func:`penalty_cost` (subgradient 0 at w_i = 0)."""
    v = _values(w)
    g = -cfg.c1 * (v < 0)
    g = g + 2.0 * cfg.c2 * (v.sum(axis=1, keepdims=True) - 1.0)
    d = v[:, :-1] - v[:, 1:]
    g[:, :-1] += 2.0 * cfg.c3 * d
    g[:, 1:] -= 2.0 * cfg.c3 * d
    return g


def _values(w) -> np.ndarray:
    v = w.values if isinstance(w, OwaWeights) else w
    return np.array(v, dtype=np.float64, ndmin=2)


def project_rows(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Clip each row at zero and renormalize it to sum one.

    Rows with no positive entry are reset to uniform; their count is returned.
    """
    v = np.maximum(np.array(values, dtype=np.float64, ndmin=2), 0.0)
    s = v.sum(axis=1, keepdims=True)
    bad = (s[:, 0] <= 0) | ~np.isfinite(s[:, 0])
    out = np.empty_like(v)
    out[~bad] = v[~bad] / s[~bad]
    out[bad] = 1.0 / v.shape[1]
    return out, int(bad.sum())


def project_weights(w: OwaWeights) -> OwaWeights:
    if w.regime != Regime.PROJECTED:
        raise ValueError(f"projection applies to projected-regime weights, not {w.regime.value}")
    values, n_reset = project_rows(w.values)
    if n_reset:
        warnings.warn(f"{n_reset} degenerate weight row(s) reset to uniform", RuntimeWarning, stacklevel=2)
    return replace(w, values=values)


def simplex_violation(w: OwaWeights | np.ndarray) -> float:
    """Largest of |row sum - 1| and -min(entry), over all rows."""
    v = _values(w)
    return float(max(np.abs(v.sum(axis=1) - 1.0).max(), -v.min(), 0.0))


# ------------------------------------------------------------------------ csv

CSV_HEADER = ("channel", "k", "weight")


def weights_to_csv(w: OwaWeights | np.ndarray, path=None) -> str:
    """Rows ``channel,k,weight``; k = 0 multiplies the largest value."""
    v = _values(w)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for c in range(v.shape[0]):
        for k in range(v.shape[1]):
            writer.writerow([c, k, repr(float(v[c, k]))])
    text = buf.getvalue()
    if path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def weights_from_csv(source) -> np.ndarray:
    """Parse a weight CSV (path or text) back into a ``(rows, n)`` array."""
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source):
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        text = source
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ValueError(f"bad weight CSV header: {header}")
    entries = [(int(c), int(k), float(v)) for c, k, v in reader]
    rows = max(c for c, _, _ in entries) + 1
    n = max(k for _, k, _ in entries) + 1
    out = np.full((rows, n), np.nan)
    for c, k, v in entries:
        out[c, k] = v
    if np.isnan(out).any():
        raise ValueError("weight CSV is missing entries")
    return out

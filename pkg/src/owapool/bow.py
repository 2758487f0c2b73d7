"""Bag-of-words image classification with learned OWA image pooling.

Pipeline: dense orientation-histogram descriptors -> k-means dictionary ->
triangle coding -> OWA pooling of each code dimension over the image cells ->
one-vs-rest L2-SVM.  The SVM parameters and the pooling weights are learned
alternately; the simplex constraints on the pooling weights are handled with
Lagrange multipliers (gradient descent on the primal block, projected
gradient ascent on the multipliers).
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from owapool.tensor import ShapeError


# ---------------------------------------------------------------- descriptors

def dense_descriptors(image, patch: int = 32, step: int | None = None, grid: int = 4,
                      bins: int = 8) -> np.ndarray:
    """SIFT-shaped descriptors on a dense grid of ``patch`` x ``patch`` cells.

    Each patch is split into ``grid x grid`` subcells holding a ``bins``-way
    histogram of gradient orientation weighted by magnitude.  Output rows are
    cells in row-major order, ``grid*grid*bins`` columns, L2-normalized with
    the usual 0.2 clipping.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    step = step or patch
    gy, gx = np.gradient(img)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    b = np.minimum((ang / (2 * np.pi) * bins).astype(int), bins - 1)
    H, W = img.shape
    sub = patch // grid
    out = []
    for top in range(0, H - patch + 1, step):
        for left in range(0, W - patch + 1, step):
            d = np.zeros((grid, grid, bins))
            pm = mag[top : top + patch, left : left + patch]
            pb = b[top : top + patch, left : left + patch]
            for i in range(grid):
                for j in range(grid):
                    sl = (slice(i * sub, (i + 1) * sub), slice(j * sub, (j + 1) * sub))
                    d[i, j] = np.bincount(pb[sl].ravel(), weights=pm[sl].ravel(), minlength=bins)
            out.append(_sift_normalize(d.ravel()))
    return np.array(out)


def _sift_normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        return v
    v = np.minimum(v / n, 0.2)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


# ----------------------------------------------------------------- dictionary

@dataclass
class Dictionary:
    centers: np.ndarray  # (K, d)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 2 or self.centers.shape[0] < 2:
            raise ShapeError("a dictionary needs at least two centers")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("dictionary centers must be finite")

    @property
    def K(self) -> int:
        return self.centers.shape[0]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_fit(descriptors, K: int, iters: int = 50, seed: int = 0) -> tuple[Dictionary, float]:
    """Lloyd's algorithm from k-means++ seeding; returns (dictionary, inertia).

    An empty cluster is re-seeded with the point farthest from its center.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    m = X.shape[0]
    if K > m:
        raise ValueError(f"K={K} exceeds the {m} available descriptors")
    rng = np.random.default_rng(seed)

    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(m)]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for k in range(1, K):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(m)
        else:
            idx = min(int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right")), m - 1)
        centers[k] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[k : k + 1])[:, 0])

    for _ in range(iters):
        d = _sq_dists(X, centers)
        assign = d.argmin(axis=1)
        point_d = d[np.arange(m), assign]
        new = centers.copy()
        for k in range(K):
            members = assign == k
            if members.any():
                new[k] = X[members].mean(axis=0)
            else:
                far = int(point_d.argmax())
                new[k] = X[far]
                point_d[far] = 0.0
        if np.array_equal(new, centers):
            break
        centers = new
    d = _sq_dists(X, centers)
    return Dictionary(centers), float(d.min(axis=1).sum())


def triangle_encode(x, dictionary: Dictionary) -> np.ndarray:
    """``max(0, mean_k(z) - z_k)`` with ``z_k`` the distance to center k.

    ``x`` may be one descriptor or a matrix of descriptors (one per row).
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != dictionary.centers.shape[1]:
        raise ShapeError(f"descriptor dim {X.shape[1]} != dictionary dim {dictionary.centers.shape[1]}")
    z = np.sqrt(_sq_dists(X, dictionary.centers))
    codes = np.maximum(0.0, z.mean(axis=1, keepdims=True) - z)
    return codes[0] if single else codes


# -------------------------------------------------------------------- pooling

@dataclass
class CodedImage:
    codes: np.ndarray  # (cells, K)
    label: int

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        if self.codes.ndim != 2:
            raise ShapeError("codes must be (cells, K)")


def sorted_codes(codes) -> np.ndarray:
    """Per code dimension, cell activations in descending order: ``(..., K, cells)``."""
    a = np.asarray(codes, dtype=np.float64)
    return -np.sort(-np.swapaxes(a, -1, -2), axis=-1)


def pool_image(codes, w) -> np.ndarray:
    """OWA-pool each code dimension over the image cells."""
    if isinstance(codes, CodedImage):
        codes = codes.codes
    w = np.asarray(w, dtype=np.float64)
    codes = np.asarray(codes, dtype=np.float64)
    if w.shape != (codes.shape[-2],):
        raise ShapeError(f"{w.size} weights for {codes.shape[-2]} cells")
    return sorted_codes(codes) @ w


def stack_sorted(images) -> np.ndarray:
    """``(m, K, cells)`` ordered codes from CodedImages or a ``(m, cells, K)`` array."""
    if isinstance(images, np.ndarray):
        return sorted_codes(images)
    return sorted_codes(np.stack([im.codes for im in images]))


# ------------------------------------------------------------------ objective

@dataclass(frozen=True)
class BowRegularization:
    C1: float = 1.0  # squared-hinge weight
    C2: float = 0.0  # smoothness of consecutive pooling weights

    def __post_init__(self):
        if self.C1 <= 0 or self.C2 < 0:
            raise ValueError(f"need C1 > 0 and C2 >= 0: {self}")


def svm_cost(theta_c, Z, y, C1: float) -> float:
    """L2-SVM cost ``C1/m * sum(max(0, 1 - y theta.z)^2) + theta.theta / 2``."""
    theta_c = np.asarray(theta_c, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slack = np.maximum(0.0, 1.0 - (Z @ theta_c) * y)
    return float(C1 / len(y) * (slack ** 2).sum() + 0.5 * (theta_c ** 2).sum())


def smoothness(w) -> float:
    return float((np.diff(np.asarray(w, dtype=np.float64)) ** 2).sum())


def _as_multi(theta, y):
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.atleast_2d(theta), np.atleast_2d(y)


def joint_cost(theta, w, images, y, reg: BowRegularization, S: np.ndarray | None = None) -> float:
    """SVM cost on OWA-pooled features plus ``C2 * sum((w_i - w_{i+1})^2)``.

    ``theta`` is one classifier ``(K,)`` with ``y`` in {-1, +1}, or a one-vs-rest
    stack ``(classes, K)`` with ``y`` of shape ``(classes, m)``; per-class SVM
    costs are summed and the smoothness term counted once.
    """
    S = stack_sorted(images) if S is None else S
    Z = S @ np.asarray(w, dtype=np.float64)
    th, Y = _as_multi(theta, y)
    return sum(svm_cost(th[c], Z, Y[c], reg.C1) for c in range(th.shape[0])) + reg.C2 * smoothness(w)


def lagrangian(theta, w, images, y, reg: BowRegularization, lam: float, mu, S=None) -> float:
    w = np.asarray(w, dtype=np.float64)
    return joint_cost(theta, w, images, y, reg, S) + lam * (w.sum() - 1.0) - float(np.dot(mu, w))


def joint_grads(theta, w, images, y, reg: BowRegularization, lam: float, mu, S=None):
    """Partial derivatives of the Lagrangian: (theta, w, lambda, mu).

    The ordered-code matrices do not depend on ``w`` so the pooling is linear
    in ``w`` and the derivative is exact.
    """
    S = stack_sorted(images) if S is None else S
    w = np.asarray(w, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    th, Y = _as_multi(theta, y)
    m = S.shape[0]
    Z = S @ w
    slack = np.maximum(0.0, 1.0 - (th @ Z.T) * Y)  # (classes, m)
    a = slack * Y
    g_theta = -2.0 * reg.C1 / m * (a @ Z) + th
    V = a.T @ th  # (m, K): sum_c a_ci theta_c
    g_w = -2.0 * reg.C1 / m * np.einsum("ikn,ik->n", S, V)
    d = w[:-1] - w[1:]
    g_w[:-1] += 2.0 * reg.C2 * d
    g_w[1:] -= 2.0 * reg.C2 * d
    g_w += lam - mu
    g_lam = w.sum() - 1.0
    g_mu = -w
    if np.ndim(theta) == 1:
        g_theta = g_theta[0]
    return g_theta, g_w, g_lam, g_mu


# ------------------------------------------------------------------- training

@dataclass
class SvmModel:
    theta: np.ndarray  # (classes, K)
    lam: float = 0.0
    mu: np.ndarray | None = None

    def decision(self, Z) -> np.ndarray:
        return np.asarray(Z) @ self.theta.T

    def predict(self, Z) -> np.ndarray:
        return self.decision(Z).argmax(axis=1)


@dataclass
class BowSchedule:
    theta_lr: float = 1.0       # initial step for backtracking line search
    w_lr: float = 0.1
    dual_lr: float = 0.5
    max_phase_epochs: int = 200
    phase_tol: float = 1e-7     # stop a phase when the per-epoch decrease drops below
    outer_tol: float = 1e-5
    max_outer: int = 50
    train_w: bool = True
    armijo: float = 1e-4
    max_halvings: int = 40


@dataclass
class PhaseRecord:
    phase: str                 # "theta" or "w"
    outer: int
    values: list[float] = field(default_factory=list)  # objective after each accepted step
    steps: list[tuple[float, float]] = field(default_factory=list)  # (before, after) per accepted step


@dataclass
class BowResult:
    model: SvmModel
    w: np.ndarray
    history: list[PhaseRecord]
    outer_iterations: int
    converged: bool


class TrainingAborted(RuntimeError):
    pass


def one_vs_rest_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    Y = -np.ones((n_classes, len(labels)))
    Y[labels, np.arange(len(labels))] = 1.0
    return Y


def _descend(f, grad, x0, lr, sched: BowSchedule, record: PhaseRecord):
    """Backtracking gradient descent; only steps that decrease ``f`` are taken."""
    x = x0.copy()
    fx = f(x)
    step = lr
    for _ in range(sched.max_phase_epochs):
        g = grad(x)
        gg = float((g * g).sum())
        if gg == 0.0:
            break
        accepted = False
        for _ in range(sched.max_halvings):
            cand = x - step * g
            fc = f(cand)
            if not math.isfinite(fc):
                step *= 0.5
                continue
            if fc <= fx - sched.armijo * step * gg:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        record.steps.append((fx, fc))
        record.values.append(fc)
        decrease = fx - fc
        x, fx = cand, fc
        step = min(step * 1.5, lr)
        if decrease < sched.phase_tol:
            break
    if not math.isfinite(fx):
        raise TrainingAborted(f"non-finite objective in {record.phase} phase")
    return x


def fit_svm(Z, Y, C1: float, theta0=None, schedule: BowSchedule | None = None,
            record: PhaseRecord | None = None) -> np.ndarray:
    """One-vs-rest L2-SVM on fixed features ``Z (m, K)``; ``Y`` is ``(classes, m)`` in {-1, +1}."""
    sched = schedule or BowSchedule()
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    m = Z.shape[0]
    theta0 = np.zeros((Y.shape[0], Z.shape[1])) if theta0 is None else theta0
    record = record if record is not None else PhaseRecord("theta", 0)

    def f(th):
        slack = np.maximum(0.0, 1.0 - (th @ Z.T) * Y)
        return float(C1 / m * (slack ** 2).sum() + 0.5 * (th ** 2).sum())

    def grad(th):
        slack = np.maximum(0.0, 1.0 - (th @ Z.T) * Y)
        return -2.0 * C1 / m * ((slack * Y) @ Z) + th

    return _descend(f, grad, theta0, sched.theta_lr, sched, record)


def alternating_train(images, labels, n_classes: int, reg: BowRegularization,
                      schedule: BowSchedule | None = None, w0=None) -> BowResult:
    """Alternate SVM training with pooling fixed and pooling-weight training with
    the SVM fixed, until neither block moves by more than ``outer_tol``.

    ``w0`` defaults to uniform weights.  During the w-phase each accepted
    primal step (which must decrease the Lagrangian at the current
    multipliers) is followed by one ascent step on ``lambda`` and ``mu >= 0``.
    """
    sched = schedule or BowSchedule()
    S = stack_sorted(images)
    m, K, N = S.shape
    Y = one_vs_rest_labels(labels, n_classes)
    w = np.full(N, 1.0 / N) if w0 is None else np.array(w0, dtype=np.float64)
    theta = np.zeros((n_classes, K))
    lam, mu = 0.0, np.zeros(N)
    history: list[PhaseRecord] = []
    converged = False

    outer = 0
    for outer in range(1, sched.max_outer + 1):
        theta_prev, w_prev = theta.copy(), w.copy()

        rec = PhaseRecord("theta", outer)
        theta = fit_svm(S @ w, Y, reg.C1, theta, sched, rec)
        history.append(rec)

        if sched.train_w:
            rec = PhaseRecord("w", outer)
            w, lam, mu = _w_phase(theta, w, S, Y, reg, lam, mu, sched, rec)
            history.append(rec)

        dth = float(np.abs(theta - theta_prev).max())
        dw = float(np.abs(w - w_prev).max())
        if not (math.isfinite(dth) and math.isfinite(dw)):
            raise TrainingAborted(f"non-finite parameters at outer iteration {outer}")
        if dth < sched.outer_tol and dw < sched.outer_tol:
            converged = True
            break
    return BowResult(SvmModel(theta, lam, mu), w, history, outer, converged)


def _w_phase(theta, w, S, Y, reg, lam, mu, sched: BowSchedule, record: PhaseRecord):
    step = sched.w_lr
    fx_prev = None
    for _ in range(sched.max_phase_epochs):
        def f(v):
            return lagrangian(theta, v, None, Y, reg, lam, mu, S)
        fx = f(w)
        if not math.isfinite(fx):
            raise TrainingAborted("non-finite objective in w phase")
        _, g, _, _ = joint_grads(theta, w, None, Y, reg, lam, mu, S)
        gg = float(g @ g)
        accepted = False
        if gg > 0:
            for _ in range(sched.max_halvings):
                cand = w - step * g
                fc = f(cand)
                if math.isfinite(fc) and fc <= fx - sched.armijo * step * gg:
                    accepted = True
                    break
                step *= 0.5
        if accepted:
            record.steps.append((fx, fc))
            record.values.append(fc)
            w = cand
            step = min(step * 1.5, sched.w_lr)
        # dual ascent on the multipliers, mu kept feasible
        lam = lam + sched.dual_lr * (w.sum() - 1.0)
        mu = np.maximum(0.0, mu - sched.dual_lr * w)
        residual = max(abs(w.sum() - 1.0), float(np.maximum(0.0, -w).max()))
        moved = fx - fc if accepted else 0.0
        if moved < sched.phase_tol and residual < sched.outer_tol and fx_prev is not None:
            break
        fx_prev = fx
    return w, lam, mu


def evaluate(model: SvmModel, w, images, labels) -> float:
    Z = stack_sorted(images) @ np.asarray(w)
    return float((model.predict(Z) == np.asarray(labels)).mean())


# ----------------------------------------------------------------- exchange

def write_descriptor_csv(path, rows) -> None:
    """``rows``: iterable of (image_id, cell, label, feature vector)."""
    rows = list(rows)
    d = len(rows[0][3]) if rows else 0
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["image_id", "cell", "label", *[f"f{i}" for i in range(d)]])
        for image_id, cell, label, feats in rows:
            wr.writerow([image_id, int(cell), int(label), *[repr(float(v)) for v in feats]])


def read_descriptor_csv(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Returns (image ids, labels, features of shape (images, cells, d))."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["image_id", "cell", "label"] or any(
                h != f"f{i}" for i, h in enumerate(header[3:])):
            raise ValueError(f"bad descriptor CSV header: {header[:4]}...")
        per_image: dict[str, dict[int, np.ndarray]] = {}
        labels: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            image_id, cell, label = row[0], int(row[1]), int(row[2])
            if labels.setdefault(image_id, label) != label:
                raise ValueError(f"line {lineno}: inconsistent label for image {image_id}")
            per_image.setdefault(image_id, {})[cell] = np.array(row[3:], dtype=np.float64)
    ids = list(per_image)
    n_cells = {len(v) for v in per_image.values()}
    if len(n_cells) != 1:
        raise ValueError(f"images have differing cell counts: {sorted(n_cells)}")
    feats = np.stack([np.stack([per_image[i][c] for c in sorted(per_image[i])]) for i in ids])
    return ids, np.array([labels[i] for i in ids]), feats


def model_to_json(path, dictionary: Dictionary | None, result: BowResult) -> str:
    payload = {
        "dictionary": None if dictionary is None else dictionary.centers.tolist(),
        "theta": result.model.theta.tolist(),
        "w": np.asarray(result.w).tolist(),
        "lambda": result.model.lam,
        "mu": None if result.model.mu is None else np.asarray(result.model.mu).tolist(),
        "outer_iterations": result.outer_iterations,
        "converged": result.converged,
        "history": [asdict(r) for r in result.history],
    }
    text = json.dumps(payload)
    if path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text)
    return text


def model_from_json(source) -> tuple[Dictionary | None, SvmModel, np.ndarray, dict]:
    if isinstance(source, os.PathLike) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        with open(source) as fh:
            payload = json.load(fh)
    else:
        payload = json.loads(source)
    dictionary = None if payload["dictionary"] is None else Dictionary(np.array(payload["dictionary"]))
    mu = None if payload["mu"] is None else np.array(payload["mu"])
    model = SvmModel(np.array(payload["theta"]), payload["lambda"], mu)
    return dictionary, model, np.array(payload["w"]), payload

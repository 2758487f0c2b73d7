"""Experiment runners behind the CLI."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from owapool import bow
from owapool.harness.cifar import load_cifar10
from owapool.harness.config import ExperimentConfig
from owapool.harness.synth import SynthSpec, spurious_codes, synth_dataset
from owapool.nn import Network, TrainConfig, Variant, build_nin, build_small_net, train
from owapool.owa import (Mode, OwaWeights, PoolPlan, Regime, RegularizationConfig, init_weights,
                         owa_pool_backward, owa_pool_forward, owa_pool_infer, penalty_cost,
                         simplex_violation, weights_to_csv)

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "variant", "train_acc", "test_acc", "J", "J_CE", "penalty")


@dataclass
class Report:
    task: str
    config: dict
    variants: dict = field(default_factory=dict)   # name -> metrics
    table: list = field(default_factory=list)      # Table-style rows (bow sweep, bench, robustness)
    weights: dict = field(default_factory=dict)    # name -> per pooling layer final weights

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> Report:
        return cls(**json.loads(text))

    def save(self, out_dir) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            fh.write(self.to_json())
        return path

    def without_timings(self) -> dict:
        """The report with every wall-clock field removed (for reproducibility checks)."""
        def strip(obj):
            if isinstance(obj, dict):
                return {k: strip(v) for k, v in obj.items()
                        if not (k.startswith("seconds") or k.endswith("_ratio_to_max"))}
            if isinstance(obj, list):
                return [strip(v) for v in obj]
            return obj
        return strip(json.loads(self.to_json()))


# ----------------------------------------------------------------------- data

def synth_spec(cfg: ExperimentConfig, n: int) -> SynthSpec:
    d = cfg.data
    return SynthSpec(kind=d.kind, n=n, size=d.size, noise=d.noise, noise_spread=d.noise_spread,
                     blob_amplitude=d.blob_amplitude, offset=d.offset, spike_amplitude=d.spike_amplitude,
                     spikes=d.spikes, n_classes=cfg.model.num_classes)


def load_image_data(cfg: ExperimentConfig):
    """(x_train, y_train, x_test, y_test, num_classes)."""
    d = cfg.data
    if d.source == "synth":
        x, y = synth_dataset(synth_spec(cfg, d.n_train + d.n_test), cfg.seed)
        return x[: d.n_train], y[: d.n_train], x[d.n_train :], y[d.n_train :], cfg.model.num_classes
    if d.source == "cifar10":
        filt = d.class_filter or None
        x, y, mean = load_cifar10(d.path, d.n_train, filt, "train", seed=cfg.seed)
        xt, yt, _ = load_cifar10(d.path, d.n_test, filt, "test", mean=mean, seed=cfg.seed)
        return x, y, xt, yt, len(filt) if filt else 10
    raise ValueError(f"image experiments need data.source synth or cifar10, not {d.source!r}")


def build_net(cfg: ExperimentConfig, variant: str, in_channels: int, image_size: int,
              num_classes: int) -> Network:
    m = cfg.model
    if m.arch == "nin":
        return build_nin(num_classes, variant, seed=cfg.seed, in_channels=in_channels)
    return build_small_net(variant, in_channels=in_channels, image_size=image_size, filters=m.filters,
                           kernel=m.kernel, num_classes=num_classes, seed=cfg.seed,
                           pool_window=m.pool_window or None)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(learning_rate=t.learning_rate, momentum=t.momentum, epochs=t.epochs,
                       batch_size=t.batch_size, weight_lr_multiplier=t.weight_lr_multiplier,
                       reg=RegularizationConfig(t.c1, t.c2, t.c3), seed=cfg.seed)


# ------------------------------------------------------------------------ cnn

def weight_invariants(net: Network, reg: RegularizationConfig) -> list[dict]:
    """Per OWA layer: regime plus the quantity its invariant is stated on."""
    out = []
    for layer in net.owa_layers():
        w = layer.params["w"]
        out.append({"regime": layer.weights.regime.value,
                    "simplex_violation": simplex_violation(w),
                    "penalty": penalty_cost(w, reg),
                    "finite": bool(np.all(np.isfinite(w)))})
    return out


def train_variants(cfg: ExperimentConfig, data=None, out_dir: str | None = None):
    """Train one network per variant on identical data and shuffling; returns (report, nets)."""
    x, y, xt, yt, k = data if data is not None else load_image_data(cfg)
    tcfg = train_config(cfg)
    report = Report(cfg.task, cfg.to_dict())
    metric_rows = []
    nets = {}
    for name in cfg.model.variants:
        variant = Variant.parse(name)
        net = build_net(cfg, variant, x.shape[1], x.shape[2], k)
        invariant_log = []

        def on_epoch(epoch, net, row, _name=variant.value, _log=invariant_log):
            metric_rows.append({"epoch": epoch, "variant": _name, **{f: row.get(f) for f in METRIC_FIELDS[2:]}})
            _log.append(weight_invariants(net, tcfg.reg))
            if out_dir is not None and cfg.train.export_weights:
                for li, layer in enumerate(net.owa_layers()):
                    weights_to_csv(layer.params["w"],
                                   os.path.join(out_dir, _name, f"pool{li}", f"weights_epoch{epoch}.csv"))

        t0 = time.perf_counter()
        history = train(net, x, y, tcfg, xt if len(xt) else None, yt if len(yt) else None, on_epoch)
        elapsed = time.perf_counter() - t0
        last = history[-1]
        report.variants[variant.value] = {
            "train_acc": last["train_acc"],
            "test_acc": last.get("test_acc"),
            "final_J": last["J"],
            "final_J_CE": last["J_CE"],
            "final_penalty": last["penalty_end"],
            "test_acc_curve": [h.get("test_acc") for h in history],
            "invariants": invariant_log,
            "seconds_per_epoch": elapsed / len(history),
        }
        report.weights[variant.value] = [l.params["w"].tolist() for l in net.owa_layers()]
        nets[variant.value] = net
        log.info("%s: train %.3f test %s", variant.value, last["train_acc"], last.get("test_acc"))
    if out_dir is not None:
        write_metrics(os.path.join(out_dir, "metrics.csv"), metric_rows)
    return report, nets


def write_metrics(path, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: r[k] for k in METRIC_FIELDS})


def run_cnn_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> Report:
    report, _ = train_variants(cfg, out_dir=out_dir)
    if out_dir is not None:
        report.save(out_dir)
    return report


# ------------------------------------------------------------------ robustness

def rotate_images(x: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the image centre; bilinear, edge pixels replicated."""
    if angle == 0:
        return np.array(x, copy=True)
    return ndimage.rotate(x, angle, axes=(3, 2), reshape=False, order=1, mode="nearest")


def rotation_robustness(net: Network, x, y, angles) -> list[tuple[float, float]]:
    return [(float(a), net.accuracy(rotate_images(x, a), y)) for a in angles]


def run_robustness_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> Report:
    data = load_image_data(cfg)
    report, nets = train_variants(cfg, data, out_dir)
    xt, yt = data[2], data[3]
    for name, net in nets.items():
        for angle, acc in rotation_robustness(net, xt, yt, cfg.robust.angles):
            report.table.append({"variant": name, "angle": angle, "test_acc": acc})
    if out_dir is not None:
        report.save(out_dir)
    return report


# ------------------------------------------------------------------------ bow

def bow_coded_data(cfg: ExperimentConfig, K: int):
    """(codes_train, y_train, codes_test, y_test, dictionary or None) for dictionary size K."""
    b, d = cfg.bow, cfg.data
    if d.source == "codes":
        codes, y = spurious_codes(b.n_images, K=K, cells=b.cells, seed=cfg.seed)
        half = _train_count(d.n_train, len(y))
        return codes[:half], y[:half], codes[half:], y[half:], None
    if d.source == "synth":
        side = int(round(math.sqrt(b.cells))) * b.patch
        spec = SynthSpec(kind=d.kind, n=b.n_images, size=side, noise=d.noise, noise_spread=d.noise_spread,
                         blob_amplitude=d.blob_amplitude, offset=d.offset, spike_amplitude=d.spike_amplitude,
                         spikes=d.spikes, n_classes=cfg.model.num_classes)
        imgs, y = synth_dataset(spec, cfg.seed)
        feats = np.stack([bow.dense_descriptors(im, patch=b.patch, grid=4 if b.patch >= 8 else 2)
                          for im in imgs])
    elif d.source == "csv":
        _, y, feats = bow.read_descriptor_csv(d.path)
    else:
        raise ValueError(f"bow experiments need data.source codes, synth or csv, not {d.source!r}")
    half = _train_count(d.n_train, len(y))
    dictionary, _ = bow.kmeans_fit(feats[:half].reshape(-1, feats.shape[-1]), K, b.kmeans_iters, cfg.seed)
    codes = np.stack([bow.triangle_encode(f, dictionary) for f in feats])
    return codes[:half], y[:half], codes[half:], y[half:], dictionary


def _train_count(n_train: int, total: int) -> int:
    """First ``n_train`` images train, the rest test; half/half when n_train is too large."""
    return n_train if n_train < total else total // 2


def bow_schedule(cfg: ExperimentConfig, train_w: bool) -> bow.BowSchedule:
    b = cfg.bow
    return bow.BowSchedule(theta_lr=b.theta_lr, w_lr=b.w_lr, dual_lr=b.dual_lr, max_outer=b.max_outer,
                           max_phase_epochs=b.max_phase_epochs, train_w=train_w)


def run_bow_pipelines(codes_tr, y_tr, codes_te, y_te, n_classes, reg, cfg: ExperimentConfig):
    """MAX, MEAN (frozen-weight runs) and learned OWA; returns {name: (result, train_acc, test_acc)}."""
    N = codes_tr.shape[1]
    runs = {"MAX": (np.eye(N)[0], False), "MEAN": (np.full(N, 1.0 / N), False), "OWA": (None, True)}
    out = {}
    for name, (w0, learn) in runs.items():
        res = bow.alternating_train(codes_tr, y_tr, n_classes, reg, bow_schedule(cfg, learn), w0=w0)
        out[name] = (res, bow.evaluate(res.model, res.w, codes_tr, y_tr),
                     bow.evaluate(res.model, res.w, codes_te, y_te) if len(y_te) else None)
    return out


def run_bow_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> Report:
    report = Report(cfg.task, cfg.to_dict())
    reg = bow.BowRegularization(cfg.bow.C1, cfg.bow.C2)
    for K in cfg.bow.dictionary_sizes:
        t0 = time.perf_counter()
        ctr, ytr, cte, yte, dictionary = bow_coded_data(cfg, K)
        n_classes = int(max(ytr.max(), yte.max() if len(yte) else 0)) + 1
        runs = run_bow_pipelines(ctr, ytr, cte, yte, n_classes, reg, cfg)
        row = {"dictionary_size": K, "seconds": time.perf_counter() - t0}
        for name, (res, tr_acc, te_acc) in runs.items():
            row[name] = te_acc
            row[f"{name}_train"] = tr_acc
            monotone = all(after <= before + 1e-9 for rec in res.history for before, after in rec.steps)
            report.variants[f"{name}@{K}"] = {"train_acc": tr_acc, "test_acc": te_acc,
                                              "outer_iterations": res.outer_iterations,
                                              "converged": res.converged, "monotone_phases": monotone,
                                              "w": np.asarray(res.w).tolist()}
            if out_dir is not None:
                bow.model_to_json(os.path.join(out_dir, f"bow_{name}_K{K}.json"), dictionary, res)
        report.weights[f"OWA@{K}"] = [np.asarray(runs["OWA"][0].w).tolist()]
        report.table.append(row)
        if out_dir is not None:
            weights_to_csv(runs["OWA"][0].w, os.path.join(out_dir, f"weights_K{K}.csv"))
    if out_dir is not None:
        report.save(out_dir)
    return report


# ---------------------------------------------------------------------- bench

def count_windows(shape, window, stride) -> int:
    n, c, h, w = shape
    oh, ow = PoolPlan(window, stride).output_hw(h, w)
    return n * c * oh * ow


def _median_time(fn, repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def benchmark_pooling(shapes, variants=("max", "avg", "owa", "owa_select"), repetitions: int = 11,
                      window=2, stride=2, seed: int = 0) -> list[dict]:
    """Median forward and forward+backward wall-clock per variant and shape,
    with ratios relative to max pooling."""
    rng = np.random.default_rng(seed)
    rows = []
    for shape in shapes:
        shape = tuple(int(s) for s in shape)
        x = rng.standard_normal(shape)
        n_windows = count_windows(shape, window, stride)
        plan_n = PoolPlan(window, stride).n
        w = init_weights(plan_n, shape[1])
        timings = {}
        for variant in variants:
            if variant in ("max", "avg"):
                plan = PoolPlan(window, stride, Mode(variant))
                fwd = lambda plan=plan: owa_pool_forward(x, plan)
            elif variant == "owa":
                plan = PoolPlan(window, stride, Mode.OWA)
                fwd = lambda plan=plan: owa_pool_forward(x, plan, w)
            elif variant == "owa_select":
                plan = PoolPlan(window, stride, Mode.OWA)
                fwd = lambda plan=plan: owa_pool_infer(x, plan, w)
            else:
                raise ValueError(f"unknown benchmark variant {variant!r}")
            y = fwd()
            y = y[0] if isinstance(y, tuple) else y
            g = np.ones_like(y)

            def fwd_bwd(fwd=fwd, variant=variant, plan=plan):
                if variant == "owa_select":
                    return None
                out, trace = fwd()
                owa_pool_backward(g, trace, w)

            t_f = _median_time(fwd, repetitions)
            t_fb = _median_time(fwd_bwd, repetitions) if variant != "owa_select" else None
            timings[variant] = (t_f, t_fb)
        base_f, base_fb = timings.get("max", (None, None))
        for variant, (t_f, t_fb) in timings.items():
            rows.append({
                "shape": list(shape), "variant": variant, "window_ops": n_windows,
                "seconds_forward": t_f, "seconds_forward_backward": t_fb,
                "forward_ratio_to_max": t_f / base_f if base_f else None,
                "forward_backward_ratio_to_max": (t_fb / base_fb) if (base_fb and t_fb) else None,
            })
    return rows


def run_bench_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> Report:
    b = cfg.bench
    report = Report(cfg.task, cfg.to_dict())
    report.table = benchmark_pooling(b.shapes, b.variants, b.repetitions, b.window, b.stride, cfg.seed)
    if out_dir is not None:
        report.save(out_dir)
    return report

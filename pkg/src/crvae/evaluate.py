"""Causal-discovery and generation metrics."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from . import numcore as nc
from .datagen import Dataset
from .numcore import ContractError, Rng, Tape, Tensor
from .optim import AdamState, adam_update

DEFAULT_BANDWIDTHS = (0.01, 0.1, 1.0, 10.0, 100.0)


class UndefinedMetricError(ValueError):
    pass


def auroc(scores, truth, include_diagonal: bool = True) -> float:
    """Area under the ROC curve via the Mann–Whitney statistic (average ranks for ties)."""
    scores = np.asarray(scores, dtype=float)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ContractError(f"scores {scores.shape} and truth {truth.shape} differ")
    keep = np.ones(scores.shape, dtype=bool)
    if not include_diagonal:
        if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
            raise ContractError("diagonal exclusion needs square matrices")
        np.fill_diagonal(keep, False)
    s, t = scores[keep], truth[keep].astype(bool)
    n_pos, n_neg = int(t.sum()), int((~t).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative entry")
    ranks = rankdata(s)
    return float((ranks[t].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def mmd(real, synth, bandwidths=DEFAULT_BANDWIDTHS) -> float:
    """Biased (V-statistic) squared MMD with Gaussian kernels, averaged over bandwidths.

    κ(a, b) = exp(−‖a − b‖² / (2σ²)) for each σ in ``bandwidths``. Both sets
    must hold the same number n of flattened samples.
    """
    x = np.asarray(real, dtype=float).reshape(len(real), -1)
    y = np.asarray(synth, dtype=float).reshape(len(synth), -1)
    if x.shape[0] != y.shape[0]:
        raise ContractError(f"sample counts differ: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[1] != y.shape[1]:
        raise ContractError(f"sample widths differ: {x.shape[1]} vs {y.shape[1]}")
    n = x.shape[0]
    dxx = cdist(x, x, "sqeuclidean")
    dyy = cdist(y, y, "sqeuclidean")
    dxy = cdist(x, y, "sqeuclidean")
    vals = []
    for s in bandwidths:
        c = 1.0 / (2.0 * s * s)
        v = (np.exp(-c * dxx).sum() + np.exp(-c * dyy).sum() - 2.0 * np.exp(-c * dxy).sum()) / n ** 2
        vals.append(v)
    return float(max(np.mean(vals), 0.0))


def sample_windows(series, length: int, count: int, rng: Rng) -> np.ndarray:
    """``count`` random contiguous windows (count×length×M) of a T×M series."""
    x = np.asarray(series, dtype=float)
    if x.shape[0] < length:
        raise ContractError(f"series of length {x.shape[0]} is shorter than {length}")
    starts = rng.integers(x.shape[0] - length + 1, count)
    return x[starts[:, None] + np.arange(length)]


def match_counts(a, b, rng: Rng):
    """Subsample the larger of two sample sets so both have the same count."""
    a, b = np.asarray(a), np.asarray(b)
    n = min(len(a), len(b))
    if len(a) > n:
        a = a[np.sort(rng.permutation(len(a))[:n])]
    if len(b) > n:
        b = b[np.sort(rng.permutation(len(b))[:n])]
    return a, b


# -- train on synthetic, test on real ----------------------------------------------


@dataclass
class Predictor:
    """Stacked GRU regressor mapping ``order`` past steps to the next step."""

    params: dict
    hidden: int
    layers: int

    @classmethod
    def init(cls, n_series: int, hidden: int, layers: int, rng: Rng) -> "Predictor":
        bound = 1.0 / math.sqrt(hidden)
        params = {}
        for k in range(layers):
            width = n_series if k == 0 else hidden
            for name, shape in ((f"l{k}.w_in", (width, 3 * hidden)),
                                (f"l{k}.w_h", (hidden, 3 * hidden)),
                                (f"l{k}.b_in", (1, 3 * hidden)),
                                (f"l{k}.b_h", (1, 3 * hidden))):
                params[name] = (2 * rng.uniform(shape) - 1) * bound
        params["w_out"] = (2 * rng.uniform((hidden, n_series)) - 1) * bound
        params["b_out"] = np.zeros(n_series)
        return cls(params, hidden, layers)

    def _forward(self, g, inputs):
        B, L, _ = inputs.shape
        states = [Tensor(np.zeros((B, self.hidden)))] * self.layers
        for t in range(L):
            x = Tensor(inputs[:, t])
            new = []
            for k in range(self.layers):
                p = f"l{k}"
                x = nc.gru_cell(x, states[k], g[f"{p}.w_in"], g[f"{p}.w_h"], g[f"{p}.b_in"],
                                g[f"{p}.b_h"])
                new.append(x)
            states = new
        return states[-1] @ g["w_out"] + g["b_out"]

    def predict(self, inputs) -> np.ndarray:
        consts = {k: Tensor(v) for k, v in self.params.items()}
        return self._forward(consts, np.asarray(inputs, dtype=float)).data

    def loss_and_grads(self, inputs, targets):
        tape = Tape()
        leaves = {k: tape.leaf(v) for k, v in self.params.items()}
        pred = self._forward(leaves, inputs)
        loss = nc.mean(nc.square(pred - targets))
        tape.backward(loss)
        return loss.item(), {k: tape.grad(t) for k, t in leaves.items()}


def one_step_pairs(series, order: int):
    """Split sequences into (order-step input, next value) pairs.

    ``series`` is one T×M array or a stack n×T×M of separate sequences;
    windows never cross sequence boundaries.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] < order + 1:
        raise ContractError(f"sequences need at least order+1 = {order + 1} steps")
    idx = np.arange(x.shape[1] - order)[:, None] + np.arange(order)[None]
    inputs = x[:, idx].reshape(-1, order, x.shape[2])
    targets = x[:, order:].reshape(-1, x.shape[2])
    return inputs, targets


def rmse(pred, target) -> float:
    """Per-series root-mean-square error, averaged over series."""
    err = np.asarray(pred) - np.asarray(target)
    return float(np.mean(np.sqrt(np.mean(err * err, axis=0))))


@dataclass
class TstrConfig:
    order: int = 10
    hidden: int = 64
    layers: int = 2
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    val_fraction: float = 0.1


def fit_predictor(series, cfg: TstrConfig, rng: Rng):
    """Train on one-step pairs with Adam, early-stopping on a held-out 10 %."""
    inputs, targets = one_step_pairs(series, cfg.order)
    n = len(inputs)
    perm = rng.child("split").permutation(n)
    n_val = max(1, int(round(cfg.val_fraction * n)))
    val, tr = perm[:n_val], perm[n_val:]
    if len(tr) == 0:
        raise ContractError("not enough synthetic pairs to train the predictor")
    model = Predictor.init(inputs.shape[2], cfg.hidden, cfg.layers, rng.child("init"))
    opt = AdamState(lr=cfg.lr)
    batch_rng = rng.child("batches")
    best, best_params, stale = math.inf, dict(model.params), 0
    history = []
    for epoch in range(cfg.max_epochs):
        order = tr[batch_rng.permutation(len(tr))]
        for start in range(0, len(order), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            _, grads = model.loss_and_grads(inputs[b], targets[b])
            adam_update(opt, model.params, grads)
        v = float(np.mean((model.predict(inputs[val]) - targets[val]) ** 2))
        history.append(v)
        if v < best - 1e-12:
            best, best_params, stale = v, {k: a.copy() for k, a in model.params.items()}, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.params = best_params
    return model, history


def tstr(synthetic, real, seed: int = 0, cfg: TstrConfig | None = None) -> float:
    """RMSE on real data of a one-step predictor trained only on ``synthetic``.

    Passing the real series as ``synthetic`` gives the TRTR reference.
    """
    cfg = cfg or TstrConfig()
    syn = synthetic.observations if isinstance(synthetic, Dataset) else np.asarray(synthetic, float)
    rl = real.observations if isinstance(real, Dataset) else np.asarray(real, float)
    if syn.shape[-1] != rl.shape[-1]:
        raise ContractError("synthetic and real data must have the same number of series")
    if syn.shape[-2] < cfg.order + 1:
        raise ContractError(f"synthetic data shorter than order+1 = {cfg.order + 1}")
    model, _ = fit_predictor(syn, cfg, Rng(seed).child("tstr"))
    inputs, targets = one_step_pairs(rl, cfg.order)
    return rmse(model.predict(inputs), targets)


# -- reports and exports ------------------------------------------------------------


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class EvalReport:
    metric: str
    value: float
    config: dict = field(default_factory=dict)
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"{self.metric} is not finite")

    def line(self) -> str:
        return f"{self.metric}\t{self.value:.6g}\t{config_hash(self.config)}"

    def to_dict(self) -> dict:
        return {"metric": self.metric, "value": self.value, "config": self.config,
                "config_hash": config_hash(self.config), "timestamp": self.timestamp}


def export_pointcloud(real_windows, synth_windows, path) -> int:
    """Write labelled, flattened windows as CSV (``label,v0,v1,...``); returns row count."""
    real = np.asarray(real_windows, dtype=float).reshape(len(real_windows), -1)
    synth = np.asarray(synth_windows, dtype=float).reshape(len(synth_windows), -1)
    if real.shape[1] != synth.shape[1]:
        raise ContractError("real and synthetic windows must have equal size")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"v{i}" for i in range(real.shape[1])])
        for label, block in (("real", real), ("synth", synth)):
            for row in block:
                w.writerow([label] + ["%.17g" % v for v in row])
    return len(real) + len(synth)

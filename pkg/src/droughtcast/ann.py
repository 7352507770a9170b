"""Small feed-forward regression networks trained by backpropagation.

Hidden units are logistic, the output unit is linear. Training minimises
E = sum((yhat - y)**2) / 2 over the full batch with resilient
backpropagation (iRprop-) or plain gradient descent, and stops once every
partial derivative is below a threshold or after ``max_steps`` steps.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
import pandas as pd
from numba import njit

from .errors import StageError, TrainingError, UsageError
from .features import NormParams, SplitPlan, denormalize, minmax_fit, normalize_array
from .metrics import MetricSet, overfit_index, regression_metrics
from .model_space import ModelSpec

DEFAULT_HIDDEN = (5, 3)
SEASON_COLUMN = "month_sine"
TARGET_COLUMN = "target"

_CONVERGED, _MAX_STEPS, _DIVERGED = 0, 1, 2
STATUS_NAMES = {_CONVERGED: "converged", _MAX_STEPS: "max_steps_reached"}


@dataclass(frozen=True)
class NetworkArch:
    n_inputs: int
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    n_outputs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_inputs < 1 or self.n_outputs < 1 or any(h < 1 for h in self.hidden):
            raise UsageError("all layer sizes must be >= 1")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.n_inputs, *self.hidden, self.n_outputs)

    @property
    def n_params(self) -> int:
        s = self.sizes
        return sum(s[i + 1] * (s[i] + 1) for i in range(len(s) - 1))


@dataclass
class Network:
    arch: NetworkArch
    weights: list[np.ndarray]  # layer l has shape (sizes[l+1], sizes[l])
    biases: list[np.ndarray]
    seed: int | None = None

    def flat(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, arch: NetworkArch, theta, seed=None) -> "Network":
        theta = np.asarray(theta, dtype=float)
        s = arch.sizes
        weights, biases, pos = [], [], 0
        for l in range(len(s) - 1):
            nin, nout = s[l], s[l + 1]
            weights.append(theta[pos: pos + nin * nout].reshape(nout, nin).copy())
            pos += nin * nout
            biases.append(theta[pos: pos + nout].copy())
            pos += nout
        if pos != theta.size:
            raise UsageError(f"expected {pos} parameters, got {theta.size}")
        return cls(arch, weights, biases, seed)

    def to_dict(self) -> dict:
        return {
            "arch": {"inputs": self.arch.n_inputs, "hidden": list(self.arch.hidden), "outputs": self.arch.n_outputs},
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "Network":
        a = d["arch"]
        arch = NetworkArch(int(a["inputs"]), tuple(a["hidden"]), int(a["outputs"]))
        return cls(
            arch,
            [np.asarray(W, dtype=float) for W in d["weights"]],
            [np.asarray(b, dtype=float) for b in d["biases"]],
            d.get("seed"),
        )


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 1_000_000
    threshold: float = 0.01
    optimizer: str = "rprop"
    learning_rate: float = 0.01
    initial_step: float = 0.1
    step_bounds: tuple[float, float] = (1e-6, 50.0)
    increase: float = 1.2
    decrease: float = 0.5

    def __post_init__(self):
        if self.max_steps < 1:
            raise UsageError("max_steps must be >= 1")
        if not self.threshold > 0:
            raise UsageError("threshold must be > 0")
        if self.optimizer not in ("rprop", "gd"):
            raise UsageError(f"unknown optimizer {self.optimizer!r}")


def hidden_nodes_rule(N: int, m: int = 1) -> tuple[int, int]:
    """Two-hidden-layer sizing rule of thumb for N samples and m outputs.

    h1 = sqrt(N(m+2)) + 2 sqrt(N/(m+2)),  h2 = m sqrt(N/(m+2)), rounded up.
    """
    if N < 1 or m < 1:
        raise ValueError("N and m must be >= 1")
    h1 = math.sqrt(N * (m + 2)) + 2.0 * math.sqrt(N / (m + 2))
    h2 = m * math.sqrt(N / (m + 2))
    # guard against sqrt(9.0) = 3.0000000000000004 style round-up
    return math.ceil(round(h1, 9)), math.ceil(round(h2, 9))


def init_network(arch: NetworkArch, seed: int) -> Network:
    """Weights and biases i.i.d. uniform on [-0.5, 0.5]."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-0.5, 0.5, size=arch.n_params)
    return Network.from_flat(arch, theta, seed)


def _logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(net: Network, x) -> np.ndarray | float:
    """Network output for one input row (returns a float) or a batch."""
    a = np.asarray(x, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != net.arch.n_inputs:
        raise UsageError(f"expected {net.arch.n_inputs} inputs, got {a.shape[1]}")
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        a = z if l == last else _logistic(z)
    out = a[:, 0] if net.arch.n_outputs == 1 else a
    return float(out[0]) if single and net.arch.n_outputs == 1 else out


# --------------------------------------------------------------------------
# compiled kernels over a flat parameter vector
# --------------------------------------------------------------------------

@njit(cache=True, fastmath={"reassoc", "contract"})
def _sse_grad(theta, sizes, XT, y, acts, delta, delta_next, grad):
    """SSE/2 over the batch and its gradient written into ``grad``.

    Inputs arrive transposed (features x rows); ``acts`` is (layers + 1,
    width, n) and the delta buffers are (width, n) so inner loops run over rows.
    """
    n = XT.shape[1]
    L = sizes.size - 1
    for i in range(sizes[0]):
        for r in range(n):
            acts[0, i, r] = XT[i, r]
    pos = 0
    for l in range(L):
        nin, nout = sizes[l], sizes[l + 1]
        boff = pos + nin * nout
        for o in range(nout):
            z = acts[l + 1, o]
            b = theta[boff + o]
            for r in range(n):
                z[r] = b
            for i in range(nin):
                w = theta[pos + o * nin + i]
                a = acts[l, i]
                for r in range(n):
                    z[r] += w * a[r]
            if l < L - 1:
                for r in range(n):
                    z[r] = 1.0 / (1.0 + math.exp(-z[r]))
        pos = boff + nout

    sse = 0.0
    for r in range(n):
        e = acts[L, 0, r] - y[r]
        sse += e * e
        delta[0, r] = e

    end = pos
    for l in range(L - 1, -1, -1):
        nin, nout = sizes[l], sizes[l + 1]
        boff = end - nout
        woff = boff - nin * nout
        for o in range(nout):
            d = delta[o]
            s = 0.0
            for r in range(n):
                s += d[r]
            grad[boff + o] = s
            for i in range(nin):
                a = acts[l, i]
                s = 0.0
                for r in range(n):
                    s += d[r] * a[r]
                grad[woff + o * nin + i] = s
        if l > 0:
            for i in range(nin):
                dn = delta_next[i]
                for r in range(n):
                    dn[r] = 0.0
                for o in range(nout):
                    w = theta[woff + o * nin + i]
                    d = delta[o]
                    for r in range(n):
                        dn[r] += w * d[r]
                a = acts[l, i]
                for r in range(n):
                    dn[r] *= a[r] * (1.0 - a[r])
            for i in range(nin):
                for r in range(n):
                    delta[i, r] = delta_next[i, r]
        end = woff
    return 0.5 * sse


@njit(cache=True)
def _train_kernel(theta, sizes, XT, y, max_steps, threshold, use_rprop, lr, step0,
                  step_min, step_max, inc, dec, losses):
    n = XT.shape[1]
    width = 0
    for s in sizes:
        width = max(width, s)
    acts = np.zeros((sizes.size, width, n))
    delta = np.zeros((width, n))
    delta_next = np.zeros((width, n))
    grad = np.zeros(theta.size)
    prev = np.zeros(theta.size)
    steps = np.full(theta.size, step0)
    for step in range(1, max_steps + 1):
        e = _sse_grad(theta, sizes, XT, y, acts, delta, delta_next, grad)
        if step <= losses.size:
            losses[step - 1] = e
        gmax = 0.0
        for j in range(grad.size):
            gmax = max(gmax, abs(grad[j]))
        if not (math.isfinite(e) and math.isfinite(gmax)):
            return step, 2
        if gmax < threshold:
            return step, 0
        if use_rprop:
            for j in range(theta.size):
                g = grad[j]
                p = g * prev[j]
                if p > 0.0:
                    steps[j] = min(steps[j] * inc, step_max)
                elif p < 0.0:
                    steps[j] = max(steps[j] * dec, step_min)
                    g = 0.0
                if g > 0.0:
                    theta[j] -= steps[j]
                elif g < 0.0:
                    theta[j] += steps[j]
                prev[j] = g
        else:
            for j in range(theta.size):
                theta[j] -= lr * grad[j]
    return max_steps, 1


def _batch(X, y, n_inputs):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    if X.shape[1] != n_inputs:
        raise UsageError(f"expected {n_inputs} inputs, got {X.shape[1]}")
    if X.shape[0] != y.size or y.size == 0:
        raise UsageError("batch must be non-empty with one target per row")
    return X, y


def sse_and_gradient(net: Network, X, y) -> tuple[float, np.ndarray]:
    """SSE/2 and its gradient as a flat vector (layer order, W row-major then b)."""
    X, y = _batch(X, y, net.arch.n_inputs)
    sizes = np.asarray(net.arch.sizes, dtype=np.int64)
    width = max(sizes)
    theta = net.flat()
    grad = np.zeros(theta.size)
    n = X.shape[0]
    acts = np.zeros((sizes.size, width, n))
    d1, d2 = np.zeros((width, n)), np.zeros((width, n))
    e = _sse_grad(theta, sizes, np.ascontiguousarray(X.T), y, acts, d1, d2, grad)
    return float(e), grad


def gradient(net: Network, X, y) -> Network:
    """Gradient of SSE/2 shaped like the network (weights and biases)."""
    _, g = sse_and_gradient(net, X, y)
    return Network.from_flat(net.arch, g)


@dataclass
class TrainResult:
    network: Network
    status: str
    steps: int
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))


def train(net: Network, X, y, config: TrainConfig = TrainConfig(), record: int = 0) -> TrainResult:
    """Train a copy of ``net``; the first ``record`` losses are kept."""
    X, y = _batch(X, y, net.arch.n_inputs)
    theta = net.flat().copy()
    sizes = np.asarray(net.arch.sizes, dtype=np.int64)
    losses = np.full(min(record, config.max_steps), np.nan)
    lo, hi = config.step_bounds
    steps, code = _train_kernel(
        theta, sizes, np.ascontiguousarray(X.T), y, int(config.max_steps), float(config.threshold),
        config.optimizer == "rprop", float(config.learning_rate), float(config.initial_step),
        float(lo), float(hi), float(config.increase), float(config.decrease), losses,
    )
    if code == _DIVERGED:
        raise TrainingError(f"loss became non-finite at step {steps}", step=int(steps))
    trained = Network.from_flat(net.arch, theta, net.seed)
    return TrainResult(trained, STATUS_NAMES[code], int(steps), losses[~np.isnan(losses)])


# --------------------------------------------------------------------------
# repeated-partition stage
# --------------------------------------------------------------------------

def cell_seed(seed: int, model_id: str, partition: int) -> int:
    digest = hashlib.sha256(f"{seed}|{model_id}|{partition}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def model_inputs(spec: ModelSpec) -> list[str]:
    return spec.columns + [SEASON_COLUMN]


@dataclass
class FittedCell:
    network: Network
    params: NormParams
    columns: list[str]
    partition: int

    def predict(self, rows: pd.DataFrame) -> np.ndarray:
        """Predictions on the VCI3M scale, clamped to [0, 100]."""
        Xn = normalize_array(self.params, self.columns, rows[self.columns].to_numpy(dtype=float))
        yhat = denormalize(self.params, TARGET_COLUMN, forward(self.network, Xn))
        return np.clip(yhat, 0.0, 100.0)


def _fit_cell(spec: ModelSpec, table: pd.DataFrame, train_idx, valid_idx, partition: int,
              hidden, config: TrainConfig, seed: int):
    cols = model_inputs(spec)
    train_rows, valid_rows = table.iloc[train_idx], table.iloc[valid_idx]
    params = minmax_fit(train_rows, cols + [TARGET_COLUMN])
    Xn = normalize_array(params, cols, train_rows[cols].to_numpy(dtype=float))
    yn = (train_rows[TARGET_COLUMN].to_numpy(dtype=float) - params.bounds[TARGET_COLUMN][0]) / (
        params.bounds[TARGET_COLUMN][1] - params.bounds[TARGET_COLUMN][0]
    )
    s = cell_seed(seed, spec.id, partition)
    net = init_network(NetworkArch(len(cols), tuple(hidden)), s)
    result = train(net, Xn, yn, config)
    cell = FittedCell(result.network, params, cols, partition)
    train_m = regression_metrics(train_rows[TARGET_COLUMN].to_numpy(float), cell.predict(train_rows))
    valid_m = regression_metrics(valid_rows[TARGET_COLUMN].to_numpy(float), cell.predict(valid_rows))
    record = {
        "partition": partition,
        "seed": s,
        "status": result.status,
        "steps": result.steps,
        "train": train_m.to_dict(),
        "validation": valid_m.to_dict(),
    }
    return record, cell


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    return {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}


def _run_model(spec: ModelSpec, table, plan: SplitPlan, hidden, config, seed):
    cells, fitted, failures = [], {}, []
    for i, (tr, va) in enumerate(plan.partitions):
        try:
            record, cell = _fit_cell(spec, table, tr, va, i, hidden, config, seed)
        except Exception as exc:  # the cell is excluded and flagged
            failures.append({"partition": i, "error": f"{type(exc).__name__}: {exc}"})
            continue
        cells.append(record)
        fitted[i] = cell
    result = {"id": spec.id, "lag": spec.lag, "spec": spec.to_dict(), "cells": cells,
              "failures": failures, "n_partitions": len(cells)}
    best = None
    if cells:
        r2t = [c["train"]["r2"] for c in cells]
        r2v = [c["validation"]["r2"] for c in cells]
        result["r2_train"] = _summary(r2t)
        result["r2_validation"] = _summary(r2v)
        keys = cells[0]["train"].keys()
        result["train"] = {k: float(np.mean([c["train"][k] for c in cells])) for k in keys}
        result["validation"] = {k: float(np.mean([c["validation"][k] for c in cells])) for k in keys}
        idx, over = overfit_index(result["r2_train"]["mean"], result["r2_validation"]["mean"])
        result["overfit_index"], result["overfit"] = idx, over
        # first partition with the best validation R^2
        best_pos = int(np.argmax(r2v))
        result["best_partition"] = cells[best_pos]["partition"]
        best = fitted[result["best_partition"]]
    return result, best


@dataclass
class Champion:
    model_id: str
    spec: ModelSpec
    cell: FittedCell

    @property
    def network(self) -> Network:
        return self.cell.network

    @property
    def params(self) -> NormParams:
        return self.cell.params

    @property
    def partition(self) -> int:
        return self.cell.partition

    def predict(self, rows: pd.DataFrame) -> np.ndarray:
        return self.cell.predict(rows)

    def to_dict(self) -> dict:
        return {
            "model": self.model_id,
            "spec": self.spec.to_dict(),
            "partition": self.partition,
            "inputs": self.cell.columns,
            "network": self.network.to_dict(),
            "norm_params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "Champion":
        cell = FittedCell(
            Network.from_dict(d["network"]),
            NormParams.from_dict(d["norm_params"]),
            list(d["inputs"]),
            int(d["partition"]),
        )
        return cls(d["model"], ModelSpec.from_dict(d["spec"]), cell)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def read(cls, path) -> "Champion":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class AnnStageReport:
    results: list[dict]
    hidden: tuple[int, ...]
    config: TrainConfig
    seed: int
    best_cells: dict[str, FittedCell] = field(default_factory=dict, repr=False)
    champion: Champion | None = None

    def by_id(self) -> dict[str, dict]:
        return {r["id"]: r for r in self.results}

    @property
    def n_networks(self) -> int:
        return sum(r["n_partitions"] for r in self.results)

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "train_config": {
                "max_steps": self.config.max_steps,
                "threshold": self.config.threshold,
                "optimizer": self.config.optimizer,
            },
            "seed": self.seed,
            "champion": None if self.champion is None else {
                "model": self.champion.model_id, "partition": self.champion.partition,
            },
            "results": self.results,
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def select_champion(report: AnnStageReport) -> Champion:
    """Best non-overfit model by mean validation R^2.

    Ties fall back to lower mean validation RMSE, then the smaller model id.
    The returned network is the one from the model's best-validation partition.
    """
    eligible = [r for r in report.results if r["n_partitions"] > 0 and not r["overfit"]]
    if not eligible:
        raise StageError("no non-overfit model with a successful partition", stage="ann")
    best = min(eligible, key=lambda r: (-r["r2_validation"]["mean"], r["validation"]["rmse"], r["id"]))
    spec = ModelSpec.from_dict(best["spec"])
    return Champion(best["id"], spec, report.best_cells[best["id"]])


def run_ann_stage(selected: list[ModelSpec], table: pd.DataFrame, plan: SplitPlan,
                  hidden=DEFAULT_HIDDEN, config: TrainConfig = TrainConfig(), seed: int = 0,
                  jobs: int = 1, pick_champion: bool = True) -> AnnStageReport:
    """Train every model on every partition and summarise min/max/mean R^2."""
    if not selected:
        raise UsageError("no models to train")
    if plan.k < 2:
        raise UsageError("the ANN stage needs at least 2 partitions")
    plan.check(table)
    ordered = sorted(selected, key=lambda s: s.id)
    work = partial(_run_model, table=table, plan=plan, hidden=tuple(hidden), config=config, seed=seed)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(work, ordered))
    else:
        outputs = [work(s) for s in ordered]
    ok = [(r, c) for r, c in outputs if r["n_partitions"] > 0]
    ok.sort(key=lambda rc: (-rc[0]["r2_validation"]["mean"], rc[0]["id"]))
    failed = [r for r, c in outputs if r["n_partitions"] == 0]
    results = [r for r, _ in ok] + failed
    report = AnnStageReport(results, tuple(hidden), config, seed, {r["id"]: c for r, c in ok})
    if pick_champion:
        report.champion = select_champion(report)
    return report

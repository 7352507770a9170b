"""Additive models with a cyclic seasonal spline, fitted by penalised least squares.

The default model is

    y = a + sum_j b_j * x_j + s(month) + e

where ``s`` is a cyclic cubic regression spline with one knot per month.
With ``smooth_all`` each predictor enters through its own cubic regression
spline instead of a linear term. Every smooth carries a sum-to-zero
constraint and a second-derivative penalty whose weight is chosen by GCV,

    GCV(lambda) = n * RSS / (n - edf)**2,

over a log-spaced grid (ties go to the larger, smoother lambda).
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve, solve

from .errors import SingularDesignError, UsageError
from .features import SplitPlan
from .metrics import MetricSet, overfit_index, regression_metrics
from .model_space import ModelSpec

DEFAULT_LAMBDA_GRID = np.logspace(-4, 6, 25)
MONTH_BASIS_DIM = 12
PREDICTOR_BASIS_DIM = 10
MIN_TRAIN_ROWS = 30


# --------------------------------------------------------------------------
# spline bases
# --------------------------------------------------------------------------

def _cubic_pieces(x, lo, hi):
    """Value coefficients for (beta_lo, beta_hi, delta_lo, delta_hi) on [lo, hi]."""
    h = hi - lo
    am = (hi - x) / h
    ap = (x - lo) / h
    cm = ((hi - x) ** 3 / h - h * (hi - x)) / 6.0
    cp = ((x - lo) ** 3 / h - h * (x - lo)) / 6.0
    return am, ap, cm, cp


@dataclass
class CyclicSplineBasis:
    """Cubic regression spline on a periodic domain [lower, lower + period).

    Coefficients are the function values at the k knots; the second
    derivatives follow from ``delta = F @ beta`` with wrap-around continuity.
    """

    knots: np.ndarray
    period: float
    F: np.ndarray
    penalty: np.ndarray
    design_matrix: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.knots.size

    @property
    def lower(self) -> float:
        return float(self.knots[0])

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = self.k
        u = self.lower + np.mod(x - self.lower, self.period)
        ext = np.append(self.knots, self.lower + self.period)
        j = np.clip(np.searchsorted(ext, u, side="right") - 1, 0, k - 1)
        am, ap, cm, cp = _cubic_pieces(u, ext[j], ext[j + 1])
        jn = (j + 1) % k
        X = cm[:, None] * self.F[j] + cp[:, None] * self.F[jn]
        rows = np.arange(u.size)
        X[rows, j] += am
        X[rows, jn] += ap
        return X


def build_cyclic_basis(months=None, k: int = MONTH_BASIS_DIM, lower: float = 1.0,
                       period: float = 12.0) -> CyclicSplineBasis:
    """Cyclic cubic basis with k equally spaced knots over one period."""
    if k < 4:
        raise ValueError(f"cyclic basis needs k >= 4, got {k}")
    knots = lower + period * np.arange(k) / k
    h = np.full(k, period / k)
    B = np.zeros((k, k))
    D = np.zeros((k, k))
    for i in range(k):
        prev, nxt = (i - 1) % k, (i + 1) % k
        hp, hn = h[prev], h[i]
        B[i, prev] += hp / 6.0
        B[i, i] += (hp + hn) / 3.0
        B[i, nxt] += hn / 6.0
        D[i, prev] += 1.0 / hp
        D[i, i] -= 1.0 / hp + 1.0 / hn
        D[i, nxt] += 1.0 / hn
    F = solve(B, D, assume_a="sym")
    S = D.T @ F
    S = (S + S.T) / 2.0
    basis = CyclicSplineBasis(knots, float(period), F, S)
    if months is not None:
        basis.design_matrix = basis.design(months)
    return basis


@dataclass
class CubicRegressionBasis:
    """Natural cubic regression spline with knots at data quantiles.

    Outside the knot range the function continues linearly.
    """

    knots: np.ndarray
    F: np.ndarray  # (k, k) with zero first and last rows
    penalty: np.ndarray

    @property
    def k(self) -> int:
        return self.knots.size

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = self.knots
        k = t.size
        X = np.zeros((x.size, k))
        inside = (x >= t[0]) & (x <= t[-1])
        xi = x[inside]
        j = np.clip(np.searchsorted(t, xi, side="right") - 1, 0, k - 2)
        am, ap, cm, cp = _cubic_pieces(xi, t[j], t[j + 1])
        Xi = cm[:, None] * self.F[j] + cp[:, None] * self.F[j + 1]
        rows = np.arange(xi.size)
        Xi[rows, j] += am
        Xi[rows, j + 1] += ap
        X[inside] = Xi

        below, above = x < t[0], x > t[-1]
        if below.any():
            h = t[1] - t[0]
            d = (-self.F[0] * h / 3.0) - self.F[1] * h / 6.0
            d[0] -= 1.0 / h
            d[1] += 1.0 / h
            v = np.zeros(k)
            v[0] = 1.0
            X[below] = v + (x[below] - t[0])[:, None] * d
        if above.any():
            h = t[-1] - t[-2]
            d = self.F[-2] * h / 6.0 + self.F[-1] * h / 3.0
            d[-2] -= 1.0 / h
            d[-1] += 1.0 / h
            v = np.zeros(k)
            v[-1] = 1.0
            X[above] = v + (x[above] - t[-1])[:, None] * d
        return X


def build_cr_basis(x, k: int = PREDICTOR_BASIS_DIM) -> CubicRegressionBasis:
    x = np.asarray(x, dtype=float)
    knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, k)))
    k = knots.size
    if k < 3:
        raise SingularDesignError("too few distinct values for a cubic regression spline")
    h = np.diff(knots)
    D = np.zeros((k - 2, k))
    B = np.zeros((k - 2, k - 2))
    for i in range(k - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < k - 2:
            B[i, i + 1] = B[i + 1, i] = h[i + 1] / 6.0
    inner = solve(B, D, assume_a="sym")
    F = np.zeros((k, k))
    F[1:-1] = inner
    S = D.T @ inner
    return CubicRegressionBasis(knots, F, (S + S.T) / 2.0)


def sum_to_zero_constraint(X: np.ndarray) -> np.ndarray:
    """Null-space basis Z (k x k-1) of the constraint 1' X beta = 0."""
    c = X.sum(axis=0)[:, None]
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


# --------------------------------------------------------------------------
# penalised least squares
# --------------------------------------------------------------------------

@dataclass
class SmoothTerm:
    name: str
    variable: str
    basis: object
    Z: np.ndarray
    scale: float
    coef: np.ndarray | None = None  # full length k, satisfies the constraint
    lam: float = math.nan
    edf: float = math.nan

    def design(self, x) -> np.ndarray:
        return self.basis.design(x) @ self.Z

    def evaluate(self, x) -> np.ndarray:
        return self.basis.design(x) @ self.coef


@dataclass
class PenalizedSystem:
    X: np.ndarray
    y: np.ndarray
    penalties: list[np.ndarray]  # each embedded in the full coefficient space
    blocks: list[slice]

    def __post_init__(self):
        self.G = self.X.T @ self.X
        self.b = self.X.T @ self.y

    def solve(self, lams):
        A = self.G.copy()
        for lam, S in zip(lams, self.penalties):
            A += lam * S
        try:
            cf = cho_factor(A)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError("penalised normal equations are not positive definite") from exc
        beta = cho_solve(cf, self.b)
        infl = cho_solve(cf, self.G)
        resid = self.y - self.X @ beta
        rss = float(resid @ resid)
        diag = np.diag(infl)
        n = self.y.size
        edf = float(diag.sum())
        gcv = n * rss / (n - edf) ** 2
        return beta, rss, edf, diag, gcv, cf

    def hat_diagonal(self, lams) -> np.ndarray:
        """diag(X (X'X + S)^-1 X'), computed row by row."""
        A = self.G.copy()
        for lam, S in zip(lams, self.penalties):
            A += lam * S
        W = np.linalg.solve(A, self.X.T)
        return np.einsum("ij,ji->i", self.X, W)


def _choose(grid, scores, scale):
    """Index of the GCV minimiser, preferring the largest lambda on ties."""
    scores = np.asarray(scores)
    best = scores.min()
    tol = 1e-9 * abs(best) + 1e-12 * scale
    return int(np.flatnonzero(scores <= best + tol).max())


@dataclass
class GamFit:
    spec_id: str
    intercept: float
    linear: dict[str, float]
    smooths: list[SmoothTerm]
    edf: float
    gcv: float
    rss: float
    n: int
    lambdas: dict[str, float] = field(default_factory=dict)
    train_metrics: MetricSet | None = None

    @property
    def month_smooth(self) -> SmoothTerm:
        return next(s for s in self.smooths if s.variable == "month")

    @property
    def spline_coef(self) -> np.ndarray:
        return self.month_smooth.coef

    @property
    def smoothing_parameter(self) -> float:
        return self.month_smooth.lam

    def to_dict(self) -> dict:
        return {
            "model": self.spec_id,
            "intercept": self.intercept,
            "linear": self.linear,
            "smooths": {
                s.name: {"lambda": s.lam, "edf": s.edf, "coef": s.coef.tolist()} for s in self.smooths
            },
            "edf": self.edf,
            "gcv": self.gcv,
        }


def _columns(spec) -> list[str]:
    return spec.columns if isinstance(spec, ModelSpec) else list(spec)


def _spec_id(spec) -> str:
    return spec.id if isinstance(spec, ModelSpec) else "+".join(spec)


def fit_gam(spec, rows: pd.DataFrame, target: str = "target", smooth_all: bool = False,
            lambda_grid=None, month_k: int = MONTH_BASIS_DIM,
            predictor_k: int = PREDICTOR_BASIS_DIM, max_sweeps: int = 4) -> GamFit:
    """Fit one additive model; ``spec`` is a ModelSpec or a list of column names."""
    grid = np.sort(np.asarray(DEFAULT_LAMBDA_GRID if lambda_grid is None else lambda_grid, float))
    if grid.size == 0 or np.any(grid < 0):
        raise UsageError("lambda grid must be non-empty and non-negative")
    cols = _columns(spec)
    missing = [c for c in cols + ["month", target] if c not in rows.columns]
    if missing:
        raise UsageError(f"rows are missing column(s) {missing}")
    n = len(rows)
    if n < MIN_TRAIN_ROWS:
        raise UsageError(f"need at least {MIN_TRAIN_ROWS} training rows, got {n}")
    y = rows[target].to_numpy(dtype=float)

    pieces = [np.ones((n, 1))]
    names = ["(Intercept)"]
    linear = [] if smooth_all else cols
    for c in linear:
        pieces.append(rows[[c]].to_numpy(dtype=float))
        names.append(c)

    smooths: list[SmoothTerm] = []
    smooth_inputs = [("s(month)", "month", build_cyclic_basis(k=month_k))]
    if smooth_all:
        for c in cols:
            smooth_inputs.append((f"s({c})", c, build_cr_basis(rows[c].to_numpy(float), predictor_k)))
    for name, var, basis in smooth_inputs:
        raw = basis.design(rows[var].to_numpy(dtype=float))
        Z = sum_to_zero_constraint(raw)
        Xs = raw @ Z
        Sz = Z.T @ basis.penalty @ Z
        # rescale so that lambda = 1 balances penalty and data
        scale = np.linalg.norm(Xs.T @ Xs) / np.linalg.norm(Sz)
        smooths.append(SmoothTerm(name, var, basis, Z, scale))
        pieces.append(Xs)

    X = np.hstack(pieces)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesignError(f"design for {_spec_id(spec)} is rank deficient")

    p = X.shape[1]
    blocks, penalties = [], []
    start = len(names)
    for term in smooths:
        width = term.Z.shape[1]
        block = slice(start, start + width)
        S = np.zeros((p, p))
        S[block, block] = term.scale * (term.Z.T @ term.basis.penalty @ term.Z)
        blocks.append(block)
        penalties.append(S)
        start += width
    system = PenalizedSystem(X, y, penalties, blocks)
    yscale = float(np.var(y)) if np.var(y) > 0 else 1.0

    # coordinate-wise grid search, one smoothing parameter at a time
    idx = [grid.size - 1] * len(smooths)
    cache = {}

    def score(ix):
        key = tuple(ix)
        if key not in cache:
            cache[key] = system.solve([grid[i] for i in ix])[4]
        return cache[key]

    for _ in range(max_sweeps if len(smooths) > 1 else 1):
        changed = False
        for t in range(len(smooths)):
            trial = []
            for g in range(grid.size):
                ix = list(idx)
                ix[t] = g
                trial.append(score(ix))
            best = _choose(grid, trial, yscale)
            if best != idx[t]:
                idx[t] = best
                changed = True
        if not changed:
            break

    lams = [grid[i] for i in idx]
    beta, rss, edf, diag, gcv, _ = system.solve(lams)
    for term, block, lam in zip(smooths, blocks, lams):
        term.coef = term.Z @ beta[block]
        term.lam = float(lam)
        term.edf = float(diag[block].sum())

    fit = GamFit(
        spec_id=_spec_id(spec),
        intercept=float(beta[0]),
        linear={c: float(beta[i + 1]) for i, c in enumerate(linear)},
        smooths=smooths,
        edf=edf,
        gcv=gcv,
        rss=rss,
        n=n,
        lambdas={t.name: t.lam for t in smooths},
    )
    fit.train_metrics = regression_metrics(y, predict_gam(fit, rows))
    return fit


def predict_gam(fit: GamFit, rows: pd.DataFrame) -> np.ndarray:
    needed = list(fit.linear) + [s.variable for s in fit.smooths]
    missing = [c for c in needed if c not in rows.columns]
    if missing:
        raise UsageError(f"rows are missing column(s) {missing}")
    yhat = np.full(len(rows), fit.intercept)
    for c, b in fit.linear.items():
        yhat += b * rows[c].to_numpy(dtype=float)
    for s in fit.smooths:
        yhat += s.evaluate(rows[s.variable].to_numpy(dtype=float))
    return yhat


# --------------------------------------------------------------------------
# screening stage
# --------------------------------------------------------------------------

def _mean_metrics(sets: list[MetricSet]) -> dict:
    keys = MetricSet.__dataclass_fields__.keys()
    return {k: float(np.mean([getattr(m, k) for m in sets])) for k in keys}


def _evaluate_model(spec: ModelSpec, table: pd.DataFrame, plan: SplitPlan, smooth_all: bool,
                    lambda_grid) -> dict:
    train_sets, valid_sets, failures, lams = [], [], [], []
    for i, (tr, va) in enumerate(plan.partitions):
        try:
            train, valid = table.iloc[tr], table.iloc[va]
            fit = fit_gam(spec, train, smooth_all=smooth_all, lambda_grid=lambda_grid)
            train_sets.append(fit.train_metrics)
            valid_sets.append(regression_metrics(valid["target"].to_numpy(float), predict_gam(fit, valid)))
            lams.append(fit.lambdas)
        except Exception as exc:  # recorded per model; the stage carries on
            failures.append({"partition": i, "error": f"{type(exc).__name__}: {exc}"})
    result = {"id": spec.id, "lag": spec.lag, "spec": spec.to_dict(), "failures": failures,
              "n_partitions": len(train_sets)}
    if train_sets:
        result["train"] = _mean_metrics(train_sets)
        result["validation"] = _mean_metrics(valid_sets)
        result["r2_train"] = result["train"]["r2"]
        result["r2_validation"] = result["validation"]["r2"]
        result["r2_train_partitions"] = [m.r2 for m in train_sets]
        result["r2_validation_partitions"] = [m.r2 for m in valid_sets]
        result["overfit_index"], result["overfit"] = overfit_index(result["r2_train"], result["r2_validation"])
        result["lambdas"] = lams
    return result


@dataclass
class GamStageReport:
    results: list[dict]
    selected: list[str]
    threshold: float
    smooth_all: bool

    def by_id(self) -> dict[str, dict]:
        return {r["id"]: r for r in self.results}

    def selected_specs(self) -> list[ModelSpec]:
        lookup = self.by_id()
        return [ModelSpec.from_dict(lookup[i]["spec"]) for i in self.selected]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "smooth_all": self.smooth_all,
            "selected": self.selected,
            "results": self.results,
        }

    @classmethod
    def from_dict(cls, d) -> "GamStageReport":
        return cls(d["results"], d["selected"], d["threshold"], d["smooth_all"])

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def read(cls, path) -> "GamStageReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def run_gam_stage(models: list[ModelSpec], table: pd.DataFrame, plan: SplitPlan,
                  threshold: float = 0.70, smooth_all: bool = False, lambda_grid=None,
                  jobs: int = 1) -> GamStageReport:
    """Fit every model on every partition and keep those with mean train R^2 >= threshold.

    Mean training R^2 is rounded to two decimals before the comparison.
    Results are sorted by mean training R^2, highest first, and ranked.
    """
    if not models:
        raise UsageError("no models to evaluate")
    plan.check(table)
    work = partial(_evaluate_model, table=table, plan=plan, smooth_all=smooth_all, lambda_grid=lambda_grid)
    ordered = sorted(models, key=lambda s: s.id)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, ordered))
    else:
        results = [work(s) for s in ordered]

    ok = [r for r in results if r["n_partitions"] > 0]
    failed = [r for r in results if r["n_partitions"] == 0]
    ok.sort(key=lambda r: (-r["r2_train"], r["id"]))
    for rank, r in enumerate(ok, start=1):
        r["rank"] = rank
        r["selected"] = round(r["r2_train"], 2) >= threshold
    for r in failed:
        r["rank"] = None
        r["selected"] = False
    results = ok + failed
    selected = [r["id"] for r in results if r["selected"]]
    return GamStageReport(results, selected, threshold, smooth_all)

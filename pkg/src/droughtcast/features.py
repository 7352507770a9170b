"""Model-ready feature table, normalisation and data partitioning."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import FeatureError
from .indices import INDEX_KINDS, TABLE_KEYS, TARGET_KIND
from .model_space import LAGS, lagged_name

LAG_COLUMNS = [lagged_name(idx, lag) for lag in LAGS for idx in INDEX_KINDS]
MODEL_COLUMNS = LAG_COLUMNS + ["month", "month_sine", "target"]
KEY_COLUMNS = ["county", "year"]


def encode_month_sine(month):
    """sin(2*pi*(month - 1)/12); month 1 maps to 0 and month 4 to 1."""
    m = np.asarray(month)
    if np.any((m < 1) | (m > 12)) or np.any(m != np.round(m)):
        raise FeatureError(f"month must be an integer in 1..12, got {month!r}")
    out = np.sin(2.0 * np.pi * (m - 1) / 12.0)
    return float(out) if out.ndim == 0 else out


def build_feature_table(indices: pd.DataFrame) -> pd.DataFrame:
    """Lag every index by 1-3 months and attach seasonality and the target.

    Lags are taken by calendar month within each county. Rows with any null
    are dropped and the unlagged index columns are not carried over. The
    result has key columns ``county, year`` followed by MODEL_COLUMNS.
    """
    frame = indices.copy()
    frame["ord"] = frame["year"] * 12 + frame["month"] - 1
    pieces = []
    for county, grp in frame.groupby("county", sort=True):
        grp = grp.set_index("ord").sort_index()
        if grp.index.max() - grp.index.min() + 1 < 7:
            raise FeatureError(f"county {county!r} spans fewer than 7 months")
        full = np.arange(grp.index.min(), grp.index.max() + 1)
        grp = grp.reindex(full)
        out = pd.DataFrame(
            {"county": county, "year": full // 12, "month": full % 12 + 1}, index=full
        )
        for lag in LAGS:
            shifted = grp[INDEX_KINDS].shift(lag)
            for idx in INDEX_KINDS:
                out[lagged_name(idx, lag)] = shifted[idx]
        out["month_sine"] = encode_month_sine(out["month"].to_numpy())
        out["target"] = grp[TARGET_KIND]
        pieces.append(out)
    table = pd.concat(pieces).dropna().reset_index(drop=True)
    table["year"] = table["year"].astype(int)
    table["month"] = table["month"].astype(int)
    return table[KEY_COLUMNS + MODEL_COLUMNS]


def write_feature_table(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False)


def read_feature_table(path) -> pd.DataFrame:
    table = pd.read_csv(path, dtype={"county": str}, float_precision="round_trip")
    missing = [c for c in KEY_COLUMNS + MODEL_COLUMNS if c not in table.columns]
    if missing:
        raise FeatureError(f"feature table is missing column(s) {missing}")
    return table[KEY_COLUMNS + MODEL_COLUMNS]


@dataclass
class NormParams:
    """Per-column (min, max) from the rows the parameters were fitted on."""

    bounds: dict[str, tuple[float, float]]

    def to_dict(self) -> dict:
        return {k: [lo, hi] for k, (lo, hi) in self.bounds.items()}

    @classmethod
    def from_dict(cls, d) -> "NormParams":
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


def minmax_fit(train: pd.DataFrame, columns) -> NormParams:
    """Fit min-max bounds; pass only the training rows."""
    bounds = {}
    for col in columns:
        values = train[col].to_numpy(dtype=float)
        lo, hi = float(values.min()), float(values.max())
        if hi == lo:
            raise FeatureError(f"column {col!r} is constant on the fitting rows")
        bounds[col] = (lo, hi)
    return NormParams(bounds)


def minmax_apply(params: NormParams, table: pd.DataFrame) -> pd.DataFrame:
    """Map fitted columns to [0, 1]; values outside the fitted range clamp."""
    out = table.copy()
    for col, (lo, hi) in params.bounds.items():
        out[col] = np.clip((table[col].to_numpy(dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    return out


def normalize_array(params: NormParams, columns, values: np.ndarray) -> np.ndarray:
    lo = np.array([params.bounds[c][0] for c in columns])
    hi = np.array([params.bounds[c][1] for c in columns])
    return np.clip((np.asarray(values, dtype=float) - lo) / (hi - lo), 0.0, 1.0)


def denormalize(params: NormParams, column: str, values):
    lo, hi = params.bounds[column]
    return lo + np.asarray(values, dtype=float) * (hi - lo)


@dataclass
class SplitPlan:
    """Row positions (into the feature table) for test, dev and partitions."""

    n_rows: int
    holdout_months: int
    seed: int
    test: np.ndarray
    dev: np.ndarray
    partitions: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.partitions)

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "holdout_months": self.holdout_months,
            "seed": self.seed,
            "test": self.test.tolist(),
            "dev": self.dev.tolist(),
            "partitions": [
                {"train": tr.tolist(), "validation": va.tolist()} for tr, va in self.partitions
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "SplitPlan":
        return cls(
            n_rows=int(d["n_rows"]),
            holdout_months=int(d["holdout_months"]),
            seed=int(d["seed"]),
            test=np.asarray(d["test"], dtype=int),
            dev=np.asarray(d["dev"], dtype=int),
            partitions=[
                (np.asarray(p["train"], dtype=int), np.asarray(p["validation"], dtype=int))
                for p in d["partitions"]
            ],
        )

    def check(self, table: pd.DataFrame) -> None:
        if len(table) != self.n_rows:
            raise FeatureError(
                f"split plan was made for {self.n_rows} rows, feature table has {len(table)}"
            )


def partition_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))


def make_split_plan(table: pd.DataFrame, holdout_months: int = 24, k: int = 10, seed: int = 0,
                    train_fraction: float = 0.7) -> SplitPlan:
    """Chronological test holdout plus k seeded 70:30 splits of the rest.

    The test set is the last ``holdout_months`` calendar months of each
    county. Partition i draws from a generator seeded by (seed, i).
    """
    if k < 1:
        raise FeatureError("k must be >= 1")
    ords = (table["year"] * 12 + table["month"] - 1).to_numpy()
    test_mask = np.zeros(len(table), dtype=bool)
    for county, idx in table.groupby("county", sort=True).indices.items():
        span = ords[idx].max() - ords[idx].min() + 1
        if holdout_months >= span:
            raise FeatureError(
                f"holdout of {holdout_months} months leaves no development data for {county!r}"
            )
        cutoff = ords[idx].max() - holdout_months
        test_mask[idx[ords[idx] > cutoff]] = True
    test = np.flatnonzero(test_mask)
    dev = np.flatnonzero(~test_mask)
    if dev.size < 2:
        raise FeatureError("development set is empty after the holdout")
    n_train = math.floor(train_fraction * dev.size)
    partitions = []
    for i in range(k):
        perm = partition_rng(seed, i).permutation(dev)
        partitions.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return SplitPlan(len(table), holdout_months, seed, test, dev, partitions)


def write_split_plan(plan: SplitPlan, path) -> None:
    with open(path, "w") as fh:
        json.dump(plan.to_dict(), fh)


def read_split_plan(path) -> SplitPlan:
    with open(path) as fh:
        return SplitPlan.from_dict(json.load(fh))

"""Regression metrics, overfitting flag, drought phases and multi-class AUC."""
from __future__ import annotations

import bisect
import math
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np
from scipy.stats import rankdata

OVERFIT_THRESHOLD = 0.03

# lower bounds of phases 2..5; intervals are [lower, upper), top closed at 100
PHASE_BOUNDS = (10.0, 20.0, 35.0, 50.0)
PHASE_LABELS = {
    1: "Extreme vegetation deficit",
    2: "Severe vegetation deficit",
    3: "Moderate vegetation deficit",
    4: "Normal vegetation conditions",
    5: "Above normal vegetation conditions",
}
_EDGES = (0.0,) + PHASE_BOUNDS + (100.0,)
PHASE_CENTERS = np.array([(a + b) / 2 for a, b in zip(_EDGES[:-1], _EDGES[1:])])
PHASE_WIDTHS = np.array([b - a for a, b in zip(_EDGES[:-1], _EDGES[1:])])
N_PHASES = 5


@dataclass
class MetricSet:
    mae: float
    mse: float
    rmse: float
    mape: float
    nmse: float
    nmae: float
    r2: float

    def to_dict(self) -> dict:
        return asdict(self)


def regression_metrics(actual, predicted) -> MetricSet:
    """MAE, MSE, RMSE, MAPE (%), NMSE, NMAE and R^2.

    MAPE skips rows with |actual| < 1 and is NaN if none remain. NMSE divides
    by the population variance of ``actual`` and NMAE by its mean absolute
    deviation.
    """
    y = np.asarray(actual, dtype=float)
    yhat = np.asarray(predicted, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.ndim != 1 or y.size < 2:
        raise ValueError("need at least two observations")
    err = yhat - y
    dev = y - y.mean()
    ss_tot = float(dev @ dev)
    if ss_tot == 0.0:
        raise ValueError("actual values are constant; R^2, NMSE and NMAE are undefined")
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err**2))
    keep = np.abs(y) >= 1.0
    mape = float(100.0 * np.mean(np.abs(err[keep] / y[keep]))) if keep.any() else math.nan
    return MetricSet(
        mae=mae,
        mse=mse,
        rmse=math.sqrt(mse),
        mape=mape,
        nmse=mse / (ss_tot / y.size),
        nmae=mae / float(np.mean(np.abs(dev))),
        r2=1.0 - float(err @ err) / ss_tot,
    )


def overfit_index(r2_train: float, r2_valid: float) -> tuple[float, bool]:
    """Train minus validation R^2, flagged when the gap reaches 0.03.

    The comparison is made on the difference rounded to 10 decimals so that
    decimal inputs such as (0.86, 0.83) land on the boundary as written.
    """
    index = r2_train - r2_valid
    return index, round(index, 10) >= OVERFIT_THRESHOLD


def classify_phase(vci3m: float) -> int:
    if vci3m != vci3m:
        raise ValueError("cannot classify a missing VCI value")
    v = min(max(float(vci3m), 0.0), 100.0)
    return 1 + bisect.bisect_right(PHASE_BOUNDS, v)


def classify_phases(values) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=float), 0.0, 100.0)
    if np.isnan(v).any():
        raise ValueError("cannot classify a missing VCI value")
    return 1 + np.searchsorted(PHASE_BOUNDS, v, side="right")


def confusion_and_accuracy(actual, predicted) -> tuple[np.ndarray, float]:
    """5x5 counts (rows actual, columns predicted) and trace/total."""
    a = np.asarray(actual, dtype=int)
    p = np.asarray(predicted, dtype=int)
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {p.shape}")
    if a.size == 0:
        raise ValueError("no rows to score")
    cm = np.zeros((N_PHASES, N_PHASES), dtype=int)
    np.add.at(cm, (a - 1, p - 1), 1)
    return cm, float(np.trace(cm) / a.size)


def class_scores_from_prediction(predicted_vci) -> np.ndarray:
    """Triangular-kernel pseudo-probabilities over the five phases.

    Each phase scores ``max(0, 1 - |v - center| / width)`` with the centre
    and width of its VCI interval; rows are normalised to sum to one.
    Accepts a scalar (returns shape (5,)) or a 1-d array (shape (n, 5)).
    """
    v = np.clip(np.asarray(predicted_vci, dtype=float), 0.0, 100.0)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    raw = np.maximum(0.0, 1.0 - np.abs(v[:, None] - PHASE_CENTERS) / PHASE_WIDTHS)
    total = raw.sum(axis=1)
    empty = total == 0
    if empty.any():
        raw[empty] = 0.0
        raw[empty, classify_phases(v[empty]) - 1] = 1.0
        total = raw.sum(axis=1)
    scores = raw / total[:, None]
    return scores[0] if scalar else scores


def _a_given(scores_i: np.ndarray, in_i: np.ndarray) -> float:
    """P(random class-i row outranks random class-j row) via rank sums.

    ``scores_i`` is the class-i score of the rows belonging to classes i and
    j; ``in_i`` marks the class-i rows. Ties count one half.
    """
    ranks = rankdata(scores_i, method="average")
    n_i = int(in_i.sum())
    n_j = in_i.size - n_i
    s_i = float(ranks[in_i].sum())
    return (s_i - n_i * (n_i + 1) / 2.0) / (n_i * n_j)


def hand_till_auroc(scores, actual) -> float:
    """Multi-class AUC M = 2/(c(c-1)) * sum_{i<j} (A(i|j) + A(j|i)) / 2.

    ``scores`` has one column per phase (column k-1 for phase k); only the
    phases present in ``actual`` enter c.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(actual, dtype=int)
    if s.ndim != 2 or s.shape[0] != y.size:
        raise ValueError("scores must be an (n, n_classes) array matching actual")
    present = np.unique(y)
    c = present.size
    if c < 2:
        raise ValueError("Hand-Till AUROC needs at least two classes in actual")
    total = 0.0
    for i, j in combinations(present, 2):
        rows = (y == i) | (y == j)
        in_i = y[rows] == i
        a_ij = _a_given(s[rows, i - 1], in_i)
        a_ji = _a_given(s[rows, j - 1], ~in_i)
        total += (a_ij + a_ji) / 2.0
    return 2.0 * total / (c * (c - 1))


def one_vs_all_roc(scores, actual) -> dict[int, dict[str, list[float]]]:
    """(fpr, tpr) points per phase present in ``actual``, thresholds descending."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(actual, dtype=int)
    curves = {}
    for k in np.unique(y):
        pos = y == k
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_neg == 0:
            continue
        col = s[:, k - 1]
        fpr, tpr = [0.0], [0.0]
        for thr in np.unique(col)[::-1]:
            hit = col >= thr
            tpr.append(float((hit & pos).sum() / n_pos))
            fpr.append(float((hit & ~pos).sum() / n_neg))
        curves[int(k)] = {"fpr": fpr, "tpr": tpr}
    return curves

"""Test-set scoring of a trained champion: regression and drought-phase analysis."""
from __future__ import annotations

import json

import numpy as np
import pandas as pd

from .ann import Champion
from .features import SplitPlan
from .metrics import (
    class_scores_from_prediction,
    classify_phases,
    confusion_and_accuracy,
    hand_till_auroc,
    one_vs_all_roc,
    regression_metrics,
)


def evaluate_predictions(rows: pd.DataFrame, predicted) -> dict:
    """Score predicted VCI3M against ``rows["target"]``.

    Returns regression metrics, overall and per-county phase accuracy, the
    5x5 confusion matrix, Hand-Till AUROC (None when only one phase occurs),
    one-vs-all ROC points and a per-month actual/predicted phase table.
    """
    actual = rows["target"].to_numpy(dtype=float)
    predicted = np.clip(np.asarray(predicted, dtype=float), 0.0, 100.0)
    actual_phase = classify_phases(actual)
    predicted_phase = classify_phases(predicted)
    cm, accuracy = confusion_and_accuracy(actual_phase, predicted_phase)

    scores = class_scores_from_prediction(predicted)
    auroc = hand_till_auroc(scores, actual_phase) if np.unique(actual_phase).size > 1 else None

    per_county = {}
    counties = rows["county"].to_numpy()
    for county in sorted(set(counties)):
        mask = counties == county
        per_county[str(county)] = float(np.mean(actual_phase[mask] == predicted_phase[mask]))

    monthly = pd.DataFrame({
        "county": counties,
        "year": rows["year"].to_numpy(dtype=int),
        "month": rows["month"].to_numpy(dtype=int),
        "actual": actual,
        "predicted": predicted,
        "actual_phase": actual_phase,
        "predicted_phase": predicted_phase,
    }).sort_values(["county", "year", "month"], kind="stable")

    return {
        "n_rows": int(actual.size),
        "metrics": regression_metrics(actual, predicted).to_dict(),
        "accuracy": accuracy,
        "accuracy_by_county": per_county,
        "confusion_matrix": cm.tolist(),
        "auroc": auroc,
        "roc": {str(k): v for k, v in one_vs_all_roc(scores, actual_phase).items()},
        "monthly": [
            {k: (v.item() if hasattr(v, "item") else v) for k, v in rec.items()}
            for rec in monthly.to_dict(orient="records")
        ],
    }


def evaluate_champion(champion: Champion, table: pd.DataFrame, plan: SplitPlan) -> dict:
    """Score the champion network on the chronological test rows."""
    plan.check(table)
    rows = table.iloc[plan.test]
    report = evaluate_predictions(rows, champion.predict(rows))
    report = {"model": champion.model_id, "partition": champion.partition, **report}
    return report


def write_evaluation(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)

"""Candidate model enumeration under the two-variable reduction rules.

A candidate uses one or two lagged predictors that share a lag level and
come from different categories (vegetation / precipitation). Seasonality
is attached to every model and is not counted as a predictor.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

VEGETATION = ("NDVI_Dekad", "VCI_Dekad", "VCI1M", "VCI3M")
PRECIPITATION = ("RFE1M", "RFE3M", "SPI1M", "SPI3M", "RCI1M", "RCI3M")
LAGS = (1, 2, 3)

# lagged column names follow the reporting style "VCIdekad_lag1"
_TOKEN = {"NDVI_Dekad": "NDVIdekad", "VCI_Dekad": "VCIdekad"}


def lagged_name(index: str, lag: int) -> str:
    return f"{_TOKEN.get(index, index)}_lag{lag}"


@dataclass(frozen=True, order=True)
class CatalogEntry:
    name: str
    index: str
    lag: int
    category: str


def variable_catalog(lags=LAGS) -> list[CatalogEntry]:
    entries = []
    for lag in lags:
        for idx in VEGETATION:
            entries.append(CatalogEntry(lagged_name(idx, lag), idx, lag, "vegetation"))
        for idx in PRECIPITATION:
            entries.append(CatalogEntry(lagged_name(idx, lag), idx, lag, "precipitation"))
    return entries


@dataclass(frozen=True)
class ModelSpec:
    predictors: tuple[CatalogEntry, ...]
    seasonality: bool = True

    def __post_init__(self):
        if not 1 <= len(self.predictors) <= 2:
            raise ValueError("a model has one or two predictors")
        if len({p.lag for p in self.predictors}) != 1:
            raise ValueError("predictors must share a single lag level")
        if len({p.category for p in self.predictors}) != len(self.predictors):
            raise ValueError("predictors must come from different categories")
        # vegetation first, then precipitation
        ordered = tuple(sorted(self.predictors, key=lambda p: (p.category != "vegetation", p.name)))
        object.__setattr__(self, "predictors", ordered)

    @property
    def id(self) -> str:
        return "+".join(p.name for p in self.predictors)

    @property
    def lag(self) -> int:
        return self.predictors[0].lag

    @property
    def columns(self) -> list[str]:
        return [p.name for p in self.predictors]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "lag": self.lag,
            "seasonality": self.seasonality,
            "predictors": [
                {"name": p.name, "index": p.index, "lag": p.lag, "category": p.category}
                for p in self.predictors
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        preds = tuple(
            CatalogEntry(p["name"], p["index"], int(p["lag"]), p["category"]) for p in d["predictors"]
        )
        return cls(preds, bool(d.get("seasonality", True)))


def unconstrained_count(n: int) -> int:
    """Number of non-empty subsets of n variables, 2**n - 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return sum(math.comb(n, r) for r in range(1, n + 1))


def two_variable_count(n: int) -> int:
    if n < 2:
        raise ValueError("n must be >= 2")
    return math.comb(n, 1) + math.comb(n, 2)


def is_admissible(entries) -> bool:
    entries = list(entries)
    return (
        1 <= len(entries) <= 2
        and len({e.lag for e in entries}) == 1
        and len({e.category for e in entries}) == len(entries)
    )


def enumerate_models(catalog: list[CatalogEntry] | None = None) -> list[ModelSpec]:
    """All admissible one- and two-predictor models, ordered by (lag, id)."""
    if catalog is None:
        catalog = variable_catalog()
    specs = []
    for lag in sorted({e.lag for e in catalog}):
        level = [e for e in catalog if e.lag == lag]
        veg = [e for e in level if e.category == "vegetation"]
        pre = [e for e in level if e.category == "precipitation"]
        specs.extend(ModelSpec((e,)) for e in level)
        specs.extend(ModelSpec((v, p)) for v, p in itertools.product(veg, pre))
    return sorted(specs, key=lambda s: (s.lag, s.id))


def write_models(specs, path) -> None:
    with open(path, "w") as fh:
        json.dump({"models": [s.to_dict() for s in specs]}, fh, indent=2)


def read_models(path) -> list[ModelSpec]:
    with open(path) as fh:
        doc = json.load(fh)
    if "models" in doc:
        return [ModelSpec.from_dict(d) for d in doc["models"]]
    # a GAM stage report: keep only the selected models
    by_id = {m["id"]: m["spec"] for m in doc["results"]}
    return [ModelSpec.from_dict(by_id[i]) for i in doc["selected"]]

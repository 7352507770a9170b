"""Vegetation and rainfall anomaly indices.

Every index is computed against a per-county, per-calendar-unit climatology
built over a baseline range of years. Calendar units are the month of year
for monthly series and (month, dekad) for dekadal series.

    VCI = 100 * (NDVI - NDVI_min) / (NDVI_max - NDVI_min)
    RCI = 100 * (RFE - RFE_min) / (RFE_max - RFE_min)
    SPI = (RFE - RFE_mean) / RFE_stdev

VCI and RCI are clamped to [0, 100]; a degenerate unit (max == min, or
stdev == 0 for SPI) yields null.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .data_ingest import RawPanel
from .errors import ClimatologyError, UsageError

INDEX_KINDS = [
    "NDVI_Dekad",
    "VCI_Dekad",
    "VCI1M",
    "VCI3M",
    "RFE1M",
    "RFE3M",
    "SPI1M",
    "SPI3M",
    "RCI1M",
    "RCI3M",
]
TARGET_KIND = "VCI3M"
TABLE_KEYS = ["county", "year", "month"]

# raw (non-index) series kinds a climatology can be built from
_SOURCE_KINDS = {"NDVI": "dekad", "NDVI1M": "month", "NDVI3M": "month", "RFE1M": "month", "RFE3M": "month"}


@dataclass
class IndexSeries:
    """A named series indexed by (county, year, month[, dekad])."""

    kind: str
    values: pd.Series

    @property
    def dekadal(self) -> bool:
        return self.values.index.nlevels == 4

    @property
    def variable(self) -> str:
        return "NDVI" if self.kind.startswith("NDVI") else "RFE"


@dataclass
class Climatology:
    kind: str
    baseline: tuple[int, int]
    stats: pd.DataFrame  # index (county, month[, dekad]); columns min, max, mean, std

    @property
    def units(self) -> list[str]:
        return list(self.stats.index.names[1:])


def ndvi_series(panel: RawPanel) -> IndexSeries:
    s = panel.ndvi.set_index(["county", "year", "month", "dekad"])["ndvi"]
    return IndexSeries("NDVI", s.rename("NDVI"))


def rfe_series(panel: RawPanel) -> IndexSeries:
    s = panel.rfe.set_index(TABLE_KEYS)["rfe"]
    return IndexSeries("RFE1M", s.rename("RFE1M"))


def _contiguous(values: pd.Series) -> pd.Series:
    """Reindex a monthly series so every county covers a gap-free month range."""
    frame = values.rename("v").reset_index()
    frame["ord"] = frame["year"] * 12 + frame["month"] - 1
    pieces = []
    for county, grp in frame.groupby("county", sort=True):
        full = np.arange(grp["ord"].min(), grp["ord"].max() + 1)
        g = grp.set_index("ord")["v"].reindex(full)
        pieces.append(
            pd.DataFrame({"county": county, "year": full // 12, "month": full % 12 + 1, "v": g.to_numpy()})
        )
    out = pd.concat(pieces, ignore_index=True).set_index(TABLE_KEYS)["v"]
    return out.rename(values.name)


def aggregate(series: IndexSeries, window: int) -> IndexSeries:
    """Aggregate raw NDVI or RFE to 1- or 3-month windows ending at each month.

    NDVI is a state and is averaged (3 dekads for 1M, 9 dekads for 3M).
    Rainfall accumulates and is summed over the window. Any null constituent
    makes the aggregate null.
    """
    if window not in (1, 3):
        raise UsageError(f"window must be 1 or 3, got {window}")
    if series.kind == "NDVI":
        grouped = series.values.groupby(level=TABLE_KEYS, sort=True)
        counts = grouped.count()
        monthly = grouped.mean().where(counts == 3)
        monthly = _contiguous(monthly)
        if window == 1:
            return IndexSeries("NDVI1M", monthly.rename("NDVI1M"))
        out = monthly.groupby(level="county", group_keys=False).apply(
            lambda s: s.rolling(3, min_periods=3).mean()
        )
        return IndexSeries("NDVI3M", out.rename("NDVI3M"))
    if series.kind == "RFE1M":
        monthly = _contiguous(series.values)
        if window == 1:
            return IndexSeries("RFE1M", monthly.rename("RFE1M"))
        out = monthly.groupby(level="county", group_keys=False).apply(
            lambda s: s.rolling(3, min_periods=3).sum()
        )
        return IndexSeries("RFE3M", out.rename("RFE3M"))
    raise UsageError(f"cannot aggregate series of kind {series.kind!r}")


def source_series(panel: RawPanel, kind: str) -> IndexSeries:
    if kind == "NDVI":
        return ndvi_series(panel)
    if kind in ("NDVI1M", "NDVI3M"):
        return aggregate(ndvi_series(panel), int(kind[4]))
    if kind in ("RFE1M", "RFE3M"):
        return aggregate(rfe_series(panel), int(kind[3]))
    raise UsageError(f"unknown series kind {kind!r}; expected one of {sorted(_SOURCE_KINDS)}")


def compute_climatology(source, baseline: tuple[int, int], kind: str | None = None) -> Climatology:
    """Per-county, per-calendar-unit min/max/mean/stdev over baseline years.

    ``source`` is either a RawPanel (then ``kind`` names the series to derive)
    or an IndexSeries. The standard deviation uses the n-1 denominator.
    """
    if isinstance(source, RawPanel):
        if kind is None:
            raise UsageError("kind is required when building a climatology from a panel")
        series = source_series(source, kind)
    else:
        series = source
        if kind is not None and kind != series.kind:
            raise UsageError(f"series kind {series.kind!r} does not match {kind!r}")
    y0, y1 = baseline
    if y0 > y1:
        raise ClimatologyError(f"empty baseline {y0}..{y1}")
    years = series.values.index.get_level_values("year")
    if y0 < years.min() or y1 > years.max():
        raise ClimatologyError(
            f"baseline {y0}..{y1} outside series span {years.min()}..{years.max()}"
        )
    in_base = series.values[(years >= y0) & (years <= y1)]
    units = ["county", "month", "dekad"] if series.dekadal else ["county", "month"]
    grouped = in_base.groupby(level=units, sort=True)
    stats = pd.DataFrame(
        {
            "min": grouped.min(),
            "max": grouped.max(),
            "mean": grouped.mean(),
            "std": grouped.std(ddof=1),
            "count": grouped.count(),
        }
    )
    short = stats[stats["count"] < 2]
    if len(short):
        unit = short.index[0]
        raise ClimatologyError(
            f"fewer than 2 baseline values for {series.kind} unit {dict(zip(units, unit))}"
        )
    expected = series.values.groupby(level=units).size().index
    missing = expected.difference(stats.index)
    if len(missing):
        raise ClimatologyError(
            f"no baseline values for {series.kind} unit {dict(zip(units, missing[0]))}"
        )
    return Climatology(series.kind, (y0, y1), stats.drop(columns="count"))


def _align(series: IndexSeries, clim: Climatology) -> pd.DataFrame:
    if series.kind != clim.kind:
        raise UsageError(
            f"climatology built for {clim.kind!r} cannot be applied to {series.kind!r}"
        )
    frame = series.values.rename("x").reset_index()
    on = ["county"] + clim.units
    return frame.merge(clim.stats.reset_index(), on=on, how="left")


def _rescale(series: IndexSeries, clim: Climatology, out_kind: str) -> IndexSeries:
    frame = _align(series, clim)
    span = frame["max"] - frame["min"]
    with np.errstate(divide="ignore", invalid="ignore"):
        value = 100.0 * ((frame["x"] - frame["min"]) / span)
    value = value.where(span > 0).clip(0.0, 100.0)
    keys = list(series.values.index.names)
    return IndexSeries(out_kind, pd.Series(value.to_numpy(), index=pd.MultiIndex.from_frame(frame[keys]), name=out_kind))


def compute_vci(ndvi: IndexSeries, clim: Climatology) -> IndexSeries:
    if ndvi.variable != "NDVI":
        raise UsageError(f"VCI needs an NDVI series, got {ndvi.kind!r}")
    suffix = {"NDVI": "_Dekad", "NDVI1M": "1M", "NDVI3M": "3M"}[ndvi.kind]
    return _rescale(ndvi, clim, "VCI" + suffix)


def compute_rci(rfe: IndexSeries, clim: Climatology) -> IndexSeries:
    if rfe.variable != "RFE":
        raise UsageError(f"RCI needs a rainfall series, got {rfe.kind!r}")
    return _rescale(rfe, clim, "RCI" + rfe.kind[3:])


def compute_spi(rfe: IndexSeries, clim: Climatology) -> IndexSeries:
    """Z-score of rainfall against its calendar-unit mean and sample stdev."""
    if rfe.variable != "RFE":
        raise UsageError(f"SPI needs a rainfall series, got {rfe.kind!r}")
    frame = _align(rfe, clim)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (frame["x"] - frame["mean"]) / frame["std"]
    z = z.where(frame["std"] > 0)
    kind = "SPI" + rfe.kind[3:]
    keys = list(rfe.values.index.names)
    return IndexSeries(kind, pd.Series(z.to_numpy(), index=pd.MultiIndex.from_frame(frame[keys]), name=kind))


def default_baseline(panel: RawPanel) -> tuple[int, int]:
    """All years except the last two."""
    first, last = panel.years
    return first, max(first, last - 2)


def build_index_table(panel: RawPanel, baseline: tuple[int, int] | None = None) -> pd.DataFrame:
    """One row per (county, year, month) with the ten index columns.

    The dekadal columns take the last dekad of each month. VCI3M doubles as
    the prediction target.
    """
    if baseline is None:
        baseline = default_baseline(panel)
    ndvi = ndvi_series(panel)
    ndvi1, ndvi3 = aggregate(ndvi, 1), aggregate(ndvi, 3)
    rfe1 = aggregate(rfe_series(panel), 1)
    rfe3 = aggregate(rfe1, 3)

    vci_dekad = compute_vci(ndvi, compute_climatology(ndvi, baseline))
    last_dekad = vci_dekad.values.xs(3, level="dekad")
    ndvi_last = ndvi.values.xs(3, level="dekad")

    clim = {s.kind: compute_climatology(s, baseline) for s in (ndvi1, ndvi3, rfe1, rfe3)}
    columns = {
        "NDVI_Dekad": ndvi_last,
        "VCI_Dekad": last_dekad,
        "VCI1M": compute_vci(ndvi1, clim["NDVI1M"]).values,
        "VCI3M": compute_vci(ndvi3, clim["NDVI3M"]).values,
        "RFE1M": rfe1.values,
        "RFE3M": rfe3.values,
        "SPI1M": compute_spi(rfe1, clim["RFE1M"]).values,
        "SPI3M": compute_spi(rfe3, clim["RFE3M"]).values,
        "RCI1M": compute_rci(rfe1, clim["RFE1M"]).values,
        "RCI3M": compute_rci(rfe3, clim["RFE3M"]).values,
    }
    index = rfe1.values.index.union(ndvi1.values.index).sort_values()
    table = pd.DataFrame({k: v.reindex(index) for k, v in columns.items()}, index=index)
    return table.reset_index()[TABLE_KEYS + INDEX_KINDS]


def write_index_table(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False, na_rep="")


def read_index_table(path) -> pd.DataFrame:
    table = pd.read_csv(Path(path), dtype={"county": str}, float_precision="round_trip")
    missing = [c for c in TABLE_KEYS + INDEX_KINDS if c not in table.columns]
    if missing:
        raise UsageError(f"index table is missing column(s) {missing}")
    return table[TABLE_KEYS + INDEX_KINDS]

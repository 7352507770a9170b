"""County panels of dekadal NDVI and monthly rainfall estimates.

A panel holds two tables:

* ``ndvi``: one row per (county, year, month, dekad) with dekad in {1, 2, 3}
* ``rfe``: one row per (county, year, month), rainfall in mm

Missing observations are kept as NaN rows, never as absent keys.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from .errors import ConfigError, PanelParseError, PanelStructureError, PanelValidationError

CSV_COLUMNS = ["county", "year", "month", "dekad", "ndvi", "rfe"]
NDVI_KEYS = ["county", "year", "month", "dekad"]
RFE_KEYS = ["county", "year", "month"]


@dataclass(eq=False)
class RawPanel:
    ndvi: pd.DataFrame
    rfe: pd.DataFrame

    def __post_init__(self):
        self.ndvi = (
            self.ndvi[NDVI_KEYS + ["ndvi"]]
            .astype({"county": str, "year": int, "month": int, "dekad": int, "ndvi": float})
            .sort_values(NDVI_KEYS)
            .reset_index(drop=True)
        )
        self.rfe = (
            self.rfe[RFE_KEYS + ["rfe"]]
            .astype({"county": str, "year": int, "month": int, "rfe": float})
            .sort_values(RFE_KEYS)
            .reset_index(drop=True)
        )

    @property
    def counties(self) -> list[str]:
        return sorted(self.rfe["county"].unique().tolist())

    @property
    def years(self) -> tuple[int, int]:
        return int(self.rfe["year"].min()), int(self.rfe["year"].max())

    def __eq__(self, other):
        if not isinstance(other, RawPanel):
            return NotImplemented
        return self.ndvi.equals(other.ndvi) and self.rfe.equals(other.rfe)

    def to_frame(self) -> pd.DataFrame:
        """Long CSV layout: RFE repeated on each dekad row of its month."""
        return self.ndvi.merge(self.rfe, on=RFE_KEYS, how="left")[CSV_COLUMNS]


class RangeViolation(NamedTuple):
    county: str
    date: tuple
    field: str
    value: float


class Gap(NamedTuple):
    county: str
    date: tuple
    field: str  # "ndvi", "rfe" or "month" for an absent month


@dataclass
class ValidationReport:
    n_rows: int
    n_gaps: int
    gaps: list[Gap]
    range_violations: list[RangeViolation]
    span_per_county: dict[str, tuple[tuple[int, int], tuple[int, int]]]

    @property
    def accepted(self) -> bool:
        return not self.range_violations

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_gaps": self.n_gaps,
            "accepted": self.accepted,
            "gaps": [g._asdict() for g in self.gaps],
            "range_violations": [v._asdict() for v in self.range_violations],
            "span_per_county": {
                c: {"first": list(a), "last": list(b)} for c, (a, b) in self.span_per_county.items()
            },
        }


@dataclass(frozen=True)
class SyntheticConfig:
    n_counties: int = 4
    n_years: int = 15
    seed: int = 2019
    seasonal_amplitude: float = 0.9
    noise_sd: float = 0.6
    rainfall_to_ndvi_lag: int = 1
    ar_coefficient: float = 0.2
    vegetation_memory: float = 0.3
    vegetation_noise: float = 0.25
    observation_noise: float = 0.01
    start_year: int = 2001

    def __post_init__(self):
        if self.n_counties < 1:
            raise ConfigError("n_counties must be >= 1")
        if self.n_years < 4:
            raise ConfigError("n_years must be >= 4 (3 baseline years plus an evaluation span)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.rainfall_to_ndvi_lag < 0:
            raise ConfigError("rainfall_to_ndvi_lag must be >= 0")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ConfigError("ar_coefficient must lie in [0, 1)")
        if self.noise_sd < 0 or self.seasonal_amplitude < 0:
            raise ConfigError("noise_sd and seasonal_amplitude must be non-negative")
        if not 0.0 <= self.vegetation_memory < 1.0:
            raise ConfigError("vegetation_memory must lie in [0, 1)")
        if self.vegetation_noise < 0 or self.observation_noise < 0:
            raise ConfigError("vegetation_noise and observation_noise must be non-negative")

    @classmethod
    def from_mapping(cls, mapping) -> "SyntheticConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - names
        if unknown:
            raise ConfigError(f"unknown synthetic config field(s): {sorted(unknown)}")
        return cls(**mapping)


def _month_ordinal(year, month):
    return np.asarray(year) * 12 + np.asarray(month) - 1


def parse_panel_csv(path) -> RawPanel:
    """Read a panel CSV with columns ``county, year, month, dekad, ndvi, rfe``.

    ``rfe`` may be repeated on all three dekad rows of a month or given on a
    single row; empty strings are nulls.
    """
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise PanelStructureError("no records")
    header = [h.strip() for h in text.splitlines()[0].split(",")]
    for col in CSV_COLUMNS:
        if col not in header:
            raise PanelParseError(f"missing column {col!r} in header")
    for col in header:
        if col not in CSV_COLUMNS:
            raise PanelParseError(f"unexpected column {col!r} in header")

    raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    if raw.empty:
        raise PanelStructureError("no records")
    raw = raw[CSV_COLUMNS]
    # line numbers as a reader sees them in the file (header is line 1)
    line_no = np.arange(len(raw)) + 2

    def _numeric(col, integer):
        values = raw[col].str.strip()
        if integer and (values == "").any():
            bad = int(line_no[(values == "").to_numpy()][0])
            raise PanelParseError(f"empty {col!r} on row {bad}")
        out = pd.to_numeric(values.replace("", np.nan), errors="coerce")
        bad_mask = out.isna() & (values != "")
        if bad_mask.any():
            bad = int(line_no[bad_mask.to_numpy()][0])
            raise PanelParseError(f"cannot parse {col!r} value on row {bad}")
        if integer:
            if (out != np.round(out)).any():
                bad = int(line_no[(out != np.round(out)).to_numpy()][0])
                raise PanelParseError(f"non-integer {col!r} on row {bad}")
            return out.astype(int)
        return out.astype(float)

    frame = pd.DataFrame(
        {
            "county": raw["county"].str.strip(),
            "year": _numeric("year", True),
            "month": _numeric("month", True),
            "dekad": _numeric("dekad", True),
            "ndvi": _numeric("ndvi", False),
            "rfe": _numeric("rfe", False),
        }
    )
    if (frame["county"] == "").any():
        bad = int(line_no[(frame["county"] == "").to_numpy()][0])
        raise PanelParseError(f"empty 'county' on row {bad}")

    checks = [
        (~frame["month"].between(1, 12), "month", "month outside 1..12"),
        (~frame["dekad"].isin([1, 2, 3]), "dekad", "dekad outside {1,2,3}"),
        (frame["ndvi"].notna() & ~frame["ndvi"].between(-1.0, 1.0), "ndvi", "NDVI outside [-1, 1]"),
        (frame["rfe"].notna() & (frame["rfe"] < 0), "rfe", "negative rainfall"),
    ]
    for mask, col, what in checks:
        if mask.any():
            i = int(np.flatnonzero(mask.to_numpy())[0])
            raise PanelValidationError(
                f"{what}: {col}={raw[col].iloc[i]!r} on row {line_no[i]}", row=int(line_no[i])
            )

    dup = frame.duplicated(NDVI_KEYS)
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise PanelStructureError(f"duplicate (county, year, month, dekad) on row {line_no[i]}")

    rfe_rows = []
    for (county, year, month), grp in frame.groupby(RFE_KEYS, sort=True):
        if len(grp) != 3:
            raise PanelStructureError(
                f"{county} {year}-{month:02d} has {len(grp)} dekad rows, expected 3"
            )
        vals = grp["rfe"].dropna().unique()
        if len(vals) > 1:
            i = int(grp.index[grp["rfe"].notna()][1])
            raise PanelParseError(
                f"conflicting rfe values for {county} {year}-{month:02d} (row {line_no[i]})"
            )
        rfe_rows.append((county, year, month, vals[0] if len(vals) else np.nan))
    rfe = pd.DataFrame(rfe_rows, columns=RFE_KEYS + ["rfe"])

    for county, grp in rfe.groupby("county"):
        ords = np.sort(_month_ordinal(grp["year"], grp["month"]))
        if np.any(np.diff(ords) != 1):
            k = int(np.flatnonzero(np.diff(ords) != 1)[0])
            y, m = divmod(int(ords[k]) + 1, 12)
            raise PanelStructureError(f"non-contiguous months for county {county!r} after {y}-{m + 1:02d}")

    return RawPanel(ndvi=frame[NDVI_KEYS + ["ndvi"]], rfe=rfe)


def write_panel_csv(panel: RawPanel, path) -> None:
    panel.to_frame().to_csv(path, index=False, na_rep="")


def validate_panel(panel: RawPanel) -> ValidationReport:
    """Enumerate gaps and range violations without modifying the panel."""
    gaps: list[Gap] = []
    violations: list[RangeViolation] = []
    spans = {}

    ndvi, rfe = panel.ndvi, panel.rfe
    for row in ndvi[ndvi["ndvi"].isna()].itertuples(index=False):
        gaps.append(Gap(row.county, (row.year, row.month, row.dekad), "ndvi"))
    for row in rfe[rfe["rfe"].isna()].itertuples(index=False):
        gaps.append(Gap(row.county, (row.year, row.month), "rfe"))

    bad_ndvi = ndvi[ndvi["ndvi"].notna() & ((ndvi["ndvi"] < -1) | (ndvi["ndvi"] > 1))]
    for row in bad_ndvi.itertuples(index=False):
        violations.append(RangeViolation(row.county, (row.year, row.month, row.dekad), "ndvi", row.ndvi))
    bad_rfe = rfe[rfe["rfe"].notna() & (rfe["rfe"] < 0)]
    for row in bad_rfe.itertuples(index=False):
        violations.append(RangeViolation(row.county, (row.year, row.month), "rfe", row.rfe))

    counties = sorted(set(ndvi["county"]) | set(rfe["county"]))
    for county in counties:
        r = rfe[rfe["county"] == county]
        d = ndvi[ndvi["county"] == county]
        ords = set(_month_ordinal(r["year"], r["month"]).tolist())
        ords |= set(_month_ordinal(d["year"], d["month"]).tolist())
        lo, hi = min(ords), max(ords)
        spans[county] = ((lo // 12, lo % 12 + 1), (hi // 12, hi % 12 + 1))
        present_rfe = set(_month_ordinal(r["year"], r["month"]).tolist())
        dekads = d.groupby(["year", "month"])["dekad"].apply(set)
        for o in range(lo, hi + 1):
            y, m = o // 12, o % 12 + 1
            if o not in ords:
                gaps.append(Gap(county, (y, m), "month"))
                continue
            if o not in present_rfe:
                gaps.append(Gap(county, (y, m), "rfe"))
            have = dekads.get((y, m), set())
            for dk in (1, 2, 3):
                if dk not in have:
                    gaps.append(Gap(county, (y, m, dk), "ndvi"))

    return ValidationReport(
        n_rows=len(ndvi),
        n_gaps=len(gaps),
        gaps=gaps,
        range_violations=violations,
        span_per_county=spans,
    )


_SPINUP_MONTHS = 48


def seasonal_rainfall(month, mean, amplitude, peak_month):
    """Climatological monthly rainfall (mm) with a single annual peak."""
    phase = 2.0 * np.pi * (np.asarray(month) - peak_month) / 12.0
    return np.maximum(mean * (1.0 + amplitude * np.cos(phase)), 0.0)


def generate_synthetic_panel(config: SyntheticConfig) -> RawPanel:
    """Seeded panel whose NDVI responds to rainfall with a fixed delay.

    Rainfall is a 12-month seasonal cycle scaled by ``1 + a_t`` where ``a_t``
    is AR(1) noise. A greenness state follows

        g_t = m * g_{t-1} + (1 - m) * rain_{t-lag} / scale + shock_t

    with vegetation memory ``m`` and shocks proportional to ``noise_sd``.
    NDVI on dekad d of month t interpolates the state between months t-1
    and t, passed through a saturating response, plus observation noise.
    With ``noise_sd == 0`` and ``ar_coefficient == 0`` NDVI is an exact
    function of lagged seasonal rainfall.
    """
    rng = np.random.default_rng(config.seed)
    n_months = 12 * config.n_years
    total = n_months + _SPINUP_MONTHS
    lag = config.rainfall_to_ndvi_lag
    months = (np.arange(total) - _SPINUP_MONTHS) % 12 + 1
    years = config.start_year + (np.arange(total) - _SPINUP_MONTHS) // 12
    memory = config.vegetation_memory

    ndvi_frames, rfe_frames = [], []
    for c in range(config.n_counties):
        county = f"county_{c + 1:02d}"
        mean_rain = rng.uniform(20.0, 45.0)
        peak = rng.uniform(3.5, 5.5)
        ndvi_floor = rng.uniform(0.12, 0.22)
        ndvi_gain = rng.uniform(0.25, 0.4)
        rain_shocks = rng.standard_normal(total)
        veg_shocks = rng.standard_normal(total)
        obs_noise = rng.standard_normal((total, 3))

        anomaly = np.zeros(total)
        for t in range(1, total):
            anomaly[t] = config.ar_coefficient * anomaly[t - 1] + config.noise_sd * rain_shocks[t]
        season = seasonal_rainfall(months, mean_rain, config.seasonal_amplitude, peak)
        rain = np.maximum(season * (1.0 + anomaly), 0.0)

        forcing = np.zeros(total)
        forcing[lag:] = rain[: total - lag] if lag else rain
        forcing /= mean_rain * (1.0 + config.seasonal_amplitude)
        state = np.zeros(total)
        for t in range(1, total):
            state[t] = (memory * state[t - 1] + (1.0 - memory) * forcing[t]
                        + config.vegetation_noise * config.noise_sd * veg_shocks[t])
        prev = np.concatenate([[state[0]], state[:-1]])
        dekad_state = np.stack([prev + (state - prev) * d / 3.0 for d in (1, 2, 3)], axis=1)
        ndvi = ndvi_floor + ndvi_gain * np.tanh(2.0 * dekad_state)
        ndvi = ndvi + config.observation_noise * config.noise_sd * obs_noise
        ndvi = np.clip(ndvi, -1.0, 1.0)

        keep = slice(_SPINUP_MONTHS, total)
        yy, mm = years[keep], months[keep]
        rfe_frames.append(
            pd.DataFrame({"county": county, "year": yy, "month": mm, "rfe": np.round(rain[keep], 6)})
        )
        ndvi_frames.append(
            pd.DataFrame(
                {
                    "county": county,
                    "year": np.repeat(yy, 3),
                    "month": np.repeat(mm, 3),
                    "dekad": np.tile([1, 2, 3], n_months),
                    "ndvi": np.round(ndvi[keep].ravel(), 8),
                }
            )
        )
    return RawPanel(ndvi=pd.concat(ndvi_frames), rfe=pd.concat(rfe_frames))

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from droughtcast.data_ingest import (
    RawPanel,
    SyntheticConfig,
    generate_synthetic_panel,
    parse_panel_csv,
    validate_panel,
    write_panel_csv,
)
from droughtcast.errors import ConfigError, PanelParseError, PanelStructureError, PanelValidationError

from conftest import panel_rows, write_csv


def test_parse_counts_two_counties_five_years(tmp_path):
    rows = panel_rows(counties=("a", "b"), years=range(2001, 2006))
    panel = parse_panel_csv(write_csv(tmp_path / "p.csv", rows))
    assert len(panel.rfe) == 2 * 60
    assert len(panel.ndvi) == 2 * 180
    assert panel.counties == ["a", "b"]
    assert panel.years == (2001, 2005)


def test_ndvi_out_of_range_cites_row(tmp_path):
    rows = panel_rows()
    rows[4] = "a,2001,2,2,1.5,10.0"
    with pytest.raises(PanelValidationError) as err:
        parse_panel_csv(write_csv(tmp_path / "p.csv", rows))
    assert err.value.row == 6  # header is line 1
    assert "row 6" in str(err.value)


def test_negative_rainfall_rejected(tmp_path):
    rows = panel_rows()
    rows[0] = "a,2001,1,1,0.3,-3"
    with pytest.raises(PanelValidationError):
        parse_panel_csv(write_csv(tmp_path / "p.csv", rows))


def test_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(PanelStructureError, match="no records"):
        parse_panel_csv(path)
    with pytest.raises(PanelStructureError, match="no records"):
        parse_panel_csv(write_csv(tmp_path / "h.csv", []))


def test_bad_header_names_column(tmp_path):
    rows = [r.replace(",", ";", 0) for r in panel_rows()]
    with pytest.raises(PanelParseError, match="rfe"):
        parse_panel_csv(write_csv(tmp_path / "p.csv", rows, header="county,year,month,dekad,ndvi,rain"))


def test_non_contiguous_months(tmp_path):
    rows = panel_rows(months=[1, 2, 4])
    with pytest.raises(PanelStructureError, match="non-contiguous"):
        parse_panel_csv(write_csv(tmp_path / "p.csv", rows))


def test_rfe_on_third_dekad_only_and_nulls(tmp_path):
    rows = []
    for m in range(1, 4):
        rows += [f"a,2001,{m},1,0.3,", f"a,2001,{m},2,,", f"a,2001,{m},3,0.4,{m * 5}"]
    panel = parse_panel_csv(write_csv(tmp_path / "p.csv", rows))
    assert panel.rfe["rfe"].tolist() == [5.0, 10.0, 15.0]
    assert panel.ndvi["ndvi"].isna().sum() == 3


def test_conflicting_rfe(tmp_path):
    rows = panel_rows(months=[1])
    rows[1] = "a,2001,1,2,0.3,11.0"
    with pytest.raises(PanelParseError, match="conflicting"):
        parse_panel_csv(write_csv(tmp_path / "p.csv", rows))


def test_missing_dekad_is_structural(tmp_path):
    rows = panel_rows(months=[1, 2])[:-1]
    with pytest.raises(PanelStructureError):
        parse_panel_csv(write_csv(tmp_path / "p.csv", rows))


def test_round_trip(tmp_path, small_panel):
    ndvi = small_panel.ndvi.copy()
    rfe = small_panel.rfe.copy()
    ndvi.loc[5, "ndvi"] = np.nan
    rfe.loc[7, "rfe"] = np.nan
    panel = RawPanel(ndvi, rfe)
    write_panel_csv(panel, tmp_path / "p.csv")
    assert parse_panel_csv(tmp_path / "p.csv") == panel


def test_generator_is_deterministic(tmp_path):
    cfg = SyntheticConfig(n_counties=2, n_years=5, seed=3)
    write_panel_csv(generate_synthetic_panel(cfg), tmp_path / "a.csv")
    write_panel_csv(generate_synthetic_panel(cfg), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    other = generate_synthetic_panel(SyntheticConfig(n_counties=2, n_years=5, seed=4))
    assert not other == generate_synthetic_panel(cfg)


def test_noiseless_panel_is_function_of_seasonal_rain():
    cfg = SyntheticConfig(n_counties=1, n_years=5, noise_sd=0.0, ar_coefficient=0.0)
    panel = generate_synthetic_panel(cfg)
    # rain repeats every 12 months, and so does NDVI once the state has settled
    rain = panel.rfe["rfe"].to_numpy()
    np.testing.assert_allclose(rain[12:], rain[:-12], atol=1e-6)
    ndvi = panel.ndvi["ndvi"].to_numpy().reshape(-1, 3)
    np.testing.assert_allclose(ndvi[12:], ndvi[:-12], atol=1e-8)
    # without vegetation memory, end-of-month NDVI is monotone in last month's rain
    cfg = SyntheticConfig(n_counties=1, n_years=5, noise_sd=0.0, ar_coefficient=0.0, vegetation_memory=0.0)
    panel = generate_synthetic_panel(cfg)
    rain = panel.rfe["rfe"].to_numpy()
    m1 = panel.ndvi["ndvi"].to_numpy().reshape(-1, 3)[1:, 2]
    r0 = rain[:-1]
    order = np.argsort(r0)
    assert np.all(np.diff(m1[order]) >= -1e-8)


def test_default_rainfall_ndvi_correlation():
    panel = generate_synthetic_panel(SyntheticConfig())
    lag = SyntheticConfig().rainfall_to_ndvi_lag
    corrs = []
    for county in panel.counties:
        rain = panel.rfe.loc[panel.rfe["county"] == county, "rfe"].to_numpy()
        nd = panel.ndvi.loc[panel.ndvi["county"] == county, "ndvi"].to_numpy().reshape(-1, 3).mean(axis=1)
        corrs.append(np.corrcoef(rain[:-lag], nd[lag:])[0, 1])
    assert min(corrs) > 0.5
    assert round(float(np.mean(corrs)), 2) == 0.70


@pytest.mark.parametrize("kwargs", [
    {"n_counties": 0}, {"n_years": 3}, {"ar_coefficient": 1.0}, {"rainfall_to_ndvi_lag": -1},
    {"seed": -1}, {"noise_sd": -0.1},
])
def test_invalid_synthetic_config(kwargs):
    with pytest.raises(ConfigError):
        SyntheticConfig(**kwargs)


def test_from_mapping_rejects_unknown():
    with pytest.raises(ConfigError, match="bogus"):
        SyntheticConfig.from_mapping({"bogus": 1})


def test_validate_clean_panel(small_panel):
    report = validate_panel(small_panel)
    assert report.accepted
    assert report.range_violations == [] and report.n_gaps == 0
    assert report.span_per_county["county_01"] == ((2001, 1), (2006, 12))


def test_validate_negative_rfe(small_panel):
    rfe = small_panel.rfe.copy()
    rfe.loc[3, "rfe"] = -3.0
    report = validate_panel(RawPanel(small_panel.ndvi, rfe))
    assert len(report.range_violations) == 1
    assert report.range_violations[0].field == "rfe"
    assert not report.accepted


def test_validate_missing_month(small_panel):
    ndvi, rfe = small_panel.ndvi, small_panel.rfe
    drop_n = (ndvi["county"] == "county_01") & (ndvi["year"] == 2002) & (ndvi["month"] == 7)
    drop_r = (rfe["county"] == "county_01") & (rfe["year"] == 2002) & (rfe["month"] == 7)
    report = validate_panel(RawPanel(ndvi[~drop_n], rfe[~drop_r]))
    assert [(g.county, g.date, g.field) for g in report.gaps] == [("county_01", (2002, 7), "month")]
    assert report.accepted


@settings(max_examples=15, deadline=None)
@given(
    n_counties=st.integers(1, 3),
    n_years=st.integers(4, 6),
    seed=st.integers(0, 2**64 - 1),
    noise_sd=st.floats(0.0, 2.0),
    ar=st.floats(0.0, 0.95),
    lag=st.integers(0, 3),
)
def test_generated_panels_validate(n_counties, n_years, seed, noise_sd, ar, lag):
    cfg = SyntheticConfig(n_counties=n_counties, n_years=n_years, seed=seed, noise_sd=noise_sd,
                          ar_coefficient=ar, rainfall_to_ndvi_lag=lag)
    report = validate_panel(generate_synthetic_panel(cfg))
    assert report.accepted and report.n_gaps == 0
    assert report.n_rows == n_counties * n_years * 36

import json
import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_storage import data_io, microgrid as mg, vie
from volterra_storage.errors import IngestError, UnitMismatchError
from volterra_storage.series import KW, Grid, SampledSeries


def write_csv(path, rows, unit="kW"):
    lines = [f"# unit: {unit}", "timestamp,value"] + [f"{t},{v}" for t, v in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def hours(*hs):
    return [(f"2021-01-01T{h:02d}:00:00Z", float(h)) for h in hs]


# --------------------------------------------------------------------------- ingestion

def test_load_well_formed(tmp_path):
    s = data_io.load_timeseries_csv(write_csv(tmp_path / "a.csv", hours(0, 1, 2)), KW)
    assert s.grid.n == 3 and s.grid.h == 1.0 and s.unit == KW
    np.testing.assert_array_equal(s.values, [0, 1, 2])
    assert s.start.year == 2021


def test_single_missing_hour_is_interpolated(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        r = data_io.read_timeseries_csv(write_csv(tmp_path / "a.csv", hours(0, 1, 3, 4)), KW)
    assert r.n_interpolated == 1
    np.testing.assert_allclose(r.series.values, [0, 1, 2, 3, 4])
    assert "interpolated 1" in caplog.text


def test_two_missing_hours_are_interpolated(tmp_path):
    r = data_io.read_timeseries_csv(write_csv(tmp_path / "a.csv", hours(0, 1, 4)), KW)
    assert r.n_interpolated == 2 and r.series.grid.n == 5


def test_three_missing_hours_rejected(tmp_path):
    with pytest.raises(IngestError, match="2021-01-01T01:00:00Z and 2021-01-01T05:00:00Z"):
        data_io.load_timeseries_csv(write_csv(tmp_path / "a.csv", hours(0, 1, 5)), KW)


def test_non_monotone_rejected(tmp_path):
    with pytest.raises(IngestError, match="increasing"):
        data_io.load_timeseries_csv(write_csv(tmp_path / "a.csv", hours(0, 2, 1)), KW)
    with pytest.raises(IngestError):
        data_io.load_timeseries_csv(write_csv(tmp_path / "b.csv", hours(0, 1, 1)), KW)


def test_unit_mismatch_and_missing_unit(tmp_path):
    p = write_csv(tmp_path / "a.csv", hours(0, 1), unit="kWh")
    with pytest.raises(UnitMismatchError):
        data_io.load_timeseries_csv(p, KW)
    q = tmp_path / "b.csv"
    q.write_text("timestamp,value\n2021-01-01T00:00:00Z,1\n")
    with pytest.raises(IngestError, match="unit"):
        data_io.load_timeseries_csv(q)


def test_irregular_spacing_rejected(tmp_path):
    rows = [("2021-01-01T00:00:00Z", 1), ("2021-01-01T01:00:00Z", 1), ("2021-01-01T02:30:00Z", 1)]
    with pytest.raises(IngestError, match="multiple"):
        data_io.load_timeseries_csv(write_csv(tmp_path / "a.csv", rows))


def test_spacing_tolerance_one_second(tmp_path):
    rows = [("2021-01-01T00:00:00Z", 1), ("2021-01-01T01:00:00Z", 1), ("2021-01-01T02:00:01Z", 1)]
    assert data_io.load_timeseries_csv(write_csv(tmp_path / "a.csv", rows)).grid.n == 3


def test_empty_and_missing_files(tmp_path):
    with pytest.raises(IngestError, match="no data"):
        data_io.load_timeseries_csv(write_csv(tmp_path / "a.csv", []))
    with pytest.raises(IngestError):
        data_io.load_timeseries_csv(tmp_path / "nope.csv")


def test_offsets_are_normalised_to_utc(tmp_path):
    rows = [("2021-01-01T02:00:00+02:00", 1), ("2021-01-01T01:00:00Z", 2)]
    s = data_io.load_timeseries_csv(write_csv(tmp_path / "a.csv", rows))
    assert s.start.hour == 0 and s.grid.n == 2


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50))
def test_timeseries_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("ts") / "s.csv"
    s = SampledSeries(Grid(0.0, 1.0, len(values)), values, KW)
    data_io.write_timeseries_csv(s, path)
    back = data_io.load_timeseries_csv(path, KW)
    np.testing.assert_allclose(back.values, s.values, rtol=0, atol=1e-9)


# --------------------------------------------------------------------------- generators

def test_pv_clean_half_sine():
    p = data_io.synth_pv_profile(data_io.SynthProfileParams("pv", 50.0, 0.0, 0.0, 1, 1))
    assert p.grid.n == 24
    assert p.values.max() == pytest.approx(50.0)
    assert int(np.argmax(p.values)) == 12
    expected = np.maximum(0, 50 * np.sin(np.pi * (np.arange(24) - 6) / 12))
    np.testing.assert_allclose(p.values, expected, atol=1e-12)


def test_pv_zero_at_midnight():
    p = data_io.synth_pv_profile(data_io.SynthProfileParams("pv", 75.0, 0.5, 0.3, seed=4, days=30))
    assert np.all(p.values[::24] == 0.0)
    assert np.all(p.values >= 0)


def test_load_peaks_in_winter():
    params = data_io.SynthProfileParams("load", 40.0, 0.3, 0.0, seed=0, days=365)
    load = data_io.synth_load_profile(params)
    # independent evaluation of the seasonal term by day of year
    day = np.arange(365)
    seasonal = 1 - 0.3 * 0.5 * (1 - np.cos(2 * np.pi * (day - 15) / 365))
    assert int(np.argmax(seasonal)) == 15
    months = mg.monthly_averages(load, mg.synthetic_calendar(load.grid))
    assert int(np.argmax(months)) + 1 in (12, 1)
    assert np.all(load.values >= 0)


def test_generators_are_deterministic():
    params = data_io.SynthProfileParams("load", 40.0, seed=7, days=3)
    a, b = data_io.synth_profile(params), data_io.synth_profile(params)
    assert np.array_equal(a.values, b.values)
    c = data_io.synth_profile(replace(params, seed=8))
    assert not np.array_equal(a.values, c.values)


@pytest.mark.parametrize("kw", [dict(kind="wind"), dict(daily_peak=0), dict(noise_frac=1.5), dict(days=0)])
def test_synth_params_validation(kw):
    base = dict(kind="pv", daily_peak=1.0)
    base.update(kw)
    with pytest.raises(ValueError):
        data_io.SynthProfileParams(**base)


def test_inject_noise():
    s = SampledSeries(Grid(0.0, 1.0, 10_000), np.sin(np.arange(10_000) / 50.0) * 20.0)
    assert data_io.inject_noise(s, 0.0, 1) is s
    a = data_io.inject_noise(s, 0.01, 42)
    assert np.array_equal(a.values, data_io.inject_noise(s, 0.01, 42).values)
    sup = np.max(np.abs(s.values))
    for seed in range(5):
        dev = np.max(np.abs(data_io.inject_noise(s, 0.01, seed).values - s.values))
        assert 0.009 * sup <= dev <= 0.01 * sup
    with pytest.raises(ValueError):
        data_io.inject_noise(s, -0.1, 0)


# --------------------------------------------------------------------------- results

@pytest.fixture(scope="module")
def sim():
    t = np.arange(72.0)
    pv = SampledSeries(Grid(0, 1, 72), np.maximum(0, 75 * np.sin(np.pi * ((t % 24) - 6) / 12)), KW)
    load = SampledSeries(Grid(0, 1, 72), 30 + 10 * np.cos(t), KW)
    cfg = mg.MicrogridConfig.reference_site()
    return cfg, mg.simulate(cfg, pv, load)


def assert_results_close(a, b, tol=1e-9):
    for name in ("soc", "battery_power", "diesel_power", "pv_used", "load", "curtailed", "deficit",
                 "pv_to_batt", "dg_to_batt"):
        np.testing.assert_allclose(getattr(a, name).values, getattr(b, name).values, rtol=0, atol=tol)
    np.testing.assert_array_equal(a.diesel_state, b.diesel_state)


def test_result_csv_layout(sim, tmp_path):
    _, res = sim
    p = tmp_path / "r.csv"
    data_io.write_results(res, p, "csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "timestamp,soc_kwh,batt_kw,diesel_kw,pv_kw,curtailed_kw,deficit_kw"
    assert len(lines) == 73
    assert lines[1].startswith("2021-01-01T00:00:00Z,")
    assert all(len(f.replace("-", "").replace(".", "").split("e")[0]) <= 12 for f in lines[5].split(",")[1:])


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_simulation_round_trip(sim, tmp_path, fmt):
    cfg, res = sim
    p = tmp_path / f"r.{fmt}"
    data_io.write_results(res, p, fmt, config=cfg, seed=3)
    back = data_io.read_results(p)
    assert_results_close(back, res)
    for k, v in res.totals.items():
        assert back.totals[k] == pytest.approx(v, abs=1e-9)


def test_json_embeds_hash_and_is_byte_stable(sim, tmp_path):
    cfg, res = sim
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    data_io.write_results(res, a, "json", config=cfg, seed=3)
    data_io.write_results(mg.simulate(cfg, res.pv_used, res.load), b, "json", config=cfg, seed=3)
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["schema"] == "vs-1" and doc["seed"] == 3 and doc["config_hash"] == cfg.digest()


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_solution_round_trip(tmp_path, fmt):
    g = Grid(0.0, 0.1, 11)
    sol = vie.solve_vie_lavrentiev(vie.PiecewiseKernel.constant(1.0), SampledSeries(g, np.sin(g.nodes)), 0.05)
    p = tmp_path / f"s.{fmt}"
    data_io.write_results(sol, p, fmt)
    back = data_io.read_results(p)
    np.testing.assert_allclose(back.x.values, sol.x.values, rtol=0, atol=1e-9)
    assert back.x.grid.same_as(sol.x.grid)
    assert back.residual == pytest.approx(sol.residual, abs=1e-9)
    assert back.alpha == pytest.approx(0.05)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_metrics_round_trip(tmp_path, fmt):
    r = mg.MetricsReport(1.25, 0.5, float("nan"), 4, 4)
    p = tmp_path / f"m.{fmt}"
    data_io.write_results(r, p, fmt)
    back = data_io.read_results(p)
    assert (back.rmse, back.mae, back.n_points, back.skipped_zero_denominator) == (1.25, 0.5, 4, 4)
    assert np.isnan(back.mape)


def test_header_only_table(tmp_path):
    p = tmp_path / "e.csv"
    data_io.write_table_csv(p, data_io.RESULT_COLUMNS, [])
    assert p.read_text() == ",".join(data_io.RESULT_COLUMNS) + "\n"


def test_write_failure_names_path(tmp_path, sim):
    _, res = sim
    bad = tmp_path / "missing_dir" / "r.csv"
    with pytest.raises(OSError, match="missing_dir"):
        data_io.write_results(res, bad, "csv")


def test_unknown_result_type(tmp_path):
    with pytest.raises(TypeError):
        data_io.write_results(object(), tmp_path / "x.csv")

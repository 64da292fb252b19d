import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_storage import microgrid as mg
from volterra_storage.errors import ConfigurationError, GridMismatchError, UnitMismatchError
from volterra_storage.series import KW, KWH, Grid, SampledSeries
from volterra_storage.storage import BatteryParams

from scenarios import check_invariants, scenario

CFG = mg.MicrogridConfig.reference_site()
HALF = 0.5 * 384.0


def series(values, unit=KW):
    return SampledSeries(Grid(0.0, 1.0, len(values)), values, unit)


# --------------------------------------------------------------------------- config

def test_reference_site_defaults():
    assert CFG.pv_rating_kw == 75 and CFG.inverter_batt_kw == 72
    assert CFG.diesel_capacity_kw == 200
    assert CFG.battery.capacity_kwh == 384 and CFG.battery.eta == 0.8


def test_config_round_trip_and_digest():
    d = CFG.to_dict()
    again = mg.MicrogridConfig.from_dict(d)
    assert again == CFG
    assert again.digest() == CFG.digest()
    assert replace(CFG, window=12).digest() != CFG.digest()


@pytest.mark.parametrize("kw", [
    dict(diesel_on_soc_frac=0.9),
    dict(model_kind="quadratic"),
    dict(window=0),
    dict(inverter_batt_kw=0),
])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        mg.MicrogridConfig.reference_site(**kw)


def test_config_from_bad_dict():
    with pytest.raises(ConfigurationError):
        mg.MicrogridConfig.from_dict({"pv_rating_kw": 10})


# --------------------------------------------------------------------------- dispatch_step

def test_surplus_charges_battery():
    state, fl = mg.dispatch_step(mg.SimState(HALF), 30.0, 20.0, CFG)
    assert fl.battery_power == pytest.approx(10.0)
    assert state.soc_kwh - HALF == pytest.approx(8.0)      # 10 kW at eta 0.8
    assert not fl.diesel_on and fl.curtailed == 0


def test_shortfall_discharges_battery():
    state, fl = mg.dispatch_step(mg.SimState(HALF), 10.0, 20.0, CFG)
    assert fl.battery_power == pytest.approx(-10.0)
    assert state.soc_kwh == pytest.approx(HALF - 10.0)
    assert not fl.diesel_on and fl.deficit == 0


def test_low_soc_latches_diesel():
    low_floor = BatteryParams(384.0, 72.0, soc_min_frac=0.1, eta=0.8)
    cfg = mg.MicrogridConfig.reference_site(battery=low_floor)
    state, fl = mg.dispatch_step(mg.SimState(0.19 * 384), 0.0, 47.0, cfg)
    assert fl.diesel_on and fl.diesel_power == 200.0
    assert fl.battery_power == pytest.approx(72.0)
    assert fl.curtailed == pytest.approx(200.0 - 47.0 - 72.0)
    assert fl.dg_to_batt == pytest.approx(72.0) and fl.pv_to_batt == 0
    assert state.diesel_on


def test_diesel_hysteresis():
    cfg = CFG
    on = mg.SimState(0.5 * 384, diesel_on=True)
    _, fl = mg.dispatch_step(on, 0.0, 10.0, cfg)
    assert fl.diesel_on                      # stays on inside the band
    _, fl = mg.dispatch_step(mg.SimState(0.8 * 384, diesel_on=True), 0.0, 10.0, cfg)
    assert not fl.diesel_on                  # releases at the turn-off threshold
    _, fl = mg.dispatch_step(mg.SimState(0.5 * 384), 0.0, 10.0, cfg)
    assert not fl.diesel_on


def test_uncovered_shortfall_starts_diesel():
    # 150 kW load exceeds the 72 kW battery path
    _, fl = mg.dispatch_step(mg.SimState(HALF), 0.0, 150.0, CFG)
    assert fl.diesel_on and fl.deficit == 0
    strict = replace(CFG, diesel_on_shortfall=False)
    _, fl = mg.dispatch_step(mg.SimState(HALF), 0.0, 150.0, strict)
    assert not fl.diesel_on and fl.deficit == pytest.approx(78.0)


def test_negative_input_rejected():
    with pytest.raises(ValueError):
        mg.dispatch_step(mg.SimState(HALF), -1.0, 0.0, CFG)


def test_pv_capped_by_solar_inverter():
    _, fl = mg.dispatch_step(mg.SimState(HALF), 100.0, 0.0, CFG)
    assert fl.pv_used == 75.0


# --------------------------------------------------------------------------- simulate

@pytest.mark.parametrize("kind", mg.MODEL_KINDS)
def test_balanced_inputs_leave_soc_alone(kind):
    cfg = replace(CFG, model_kind=kind)
    p = series(np.full(30, 20.0))
    res = mg.simulate(cfg, p, p)
    assert np.all(res.soc.values == HALF)
    assert not res.diesel_state.any()
    for s in (res.battery_power, res.diesel_power, res.curtailed, res.deficit):
        assert np.all(s.values == 0)
    np.testing.assert_array_equal(res.pv_used.values, p.values)


@pytest.mark.parametrize("kind", mg.MODEL_KINDS)
def test_ramp_down_to_diesel_threshold(kind):
    # E0 = 50, E_on = 20, 10 kW load: ceil(30 / 10) = 3 steps, diesel on at step 4
    bat = BatteryParams(100.0, 50.0, soc_min_frac=0.1, initial_soc_frac=0.5, eta=0.8)
    cfg = mg.MicrogridConfig.reference_site(battery=bat, model_kind=kind, inverter_batt_kw=50.0)
    res = mg.simulate(cfg, series(np.zeros(10)), series(np.full(10, 10.0)))
    steps = math.ceil((50.0 - 20.0) / 10.0)
    np.testing.assert_allclose(res.soc.values[:steps], [40.0, 30.0, 20.0])
    assert not res.diesel_state[:steps].any()
    assert res.diesel_state[steps]


def test_totals_match_series():
    t = np.arange(24.0)
    pv = series(np.maximum(0, 75 * np.sin(np.pi * (t - 6) / 12)))
    load = series(np.full(24, 10.0))
    res = mg.simulate(CFG, pv, load)
    assert not res.diesel_state.any()
    bp = res.battery_power.values
    assert res.totals["battery_in_total"] == pytest.approx(float(np.sum(bp[bp > 0])), abs=1e-9)
    summary = mg.annual_energy_summary(res)
    assert summary.battery_in_total == pytest.approx(summary.pv_to_batt + summary.dg_to_batt, abs=1e-9)
    assert summary.dg_to_batt == 0.0


def test_simulate_rejects_mismatch():
    with pytest.raises(GridMismatchError):
        mg.simulate(CFG, series(np.zeros(3)), series(np.zeros(4)))
    with pytest.raises(UnitMismatchError):
        mg.simulate(CFG, series(np.zeros(3)), series(np.zeros(3), KWH))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("kind", mg.MODEL_KINDS)
def test_random_scenarios_keep_invariants(seed, kind):
    cfg, pv, load = scenario(seed)
    cfg = replace(cfg, model_kind=kind)
    check_invariants(cfg, mg.simulate(cfg, pv, load))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_linear_and_volterra_agree(seed):
    cfg, pv, load = scenario(seed, n=96)
    lin = mg.simulate(cfg, pv, load)
    vol = mg.simulate(replace(cfg, model_kind="volterra"), pv, load)
    np.testing.assert_allclose(vol.soc.values, lin.soc.values, atol=1e-8)
    np.testing.assert_array_equal(vol.diesel_state, lin.diesel_state)


def test_simulation_is_deterministic():
    cfg, pv, load = scenario(3)
    a, b = mg.simulate(cfg, pv, load), mg.simulate(cfg, pv, load)
    assert np.array_equal(a.soc.values, b.soc.values)
    assert a.totals == b.totals


# --------------------------------------------------------------------------- metrics and calendar

def test_compare_identical():
    a = series([1.0, 2.0, 3.0])
    r = mg.compare_models(a, a)
    assert r.rmse == r.mae == r.mape == 0.0


def test_compare_two_points():
    r = mg.compare_models(series([3.0, 3.0]), series([1.0, 1.0]))
    assert (r.rmse, r.mae, r.mape) == pytest.approx((2.0, 2.0, 200.0))


def test_compare_skips_zero_reference():
    r = mg.compare_models(series([3.0, 3.0]), series([1.0, 0.0]))
    assert r.skipped_zero_denominator == 1
    assert r.mape == pytest.approx(200.0)
    assert r.mae == pytest.approx(2.5)
    assert r.rmse == pytest.approx(math.sqrt((4 + 9) / 2))


def test_compare_all_zero_reference_gives_nan_mape():
    r = mg.compare_models(series([1.0]), series([0.0]))
    assert math.isnan(r.mape) and r.skipped_zero_denominator == 1


def test_synthetic_calendar_months():
    cal = mg.synthetic_calendar(Grid(0.0, 1.0, 8760))
    counts = np.bincount(cal)[1:]
    np.testing.assert_array_equal(counts, 24 * np.array([31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]))


def test_monthly_averages():
    g = Grid(0.0, 1.0, 8760)
    cal = mg.synthetic_calendar(g)
    np.testing.assert_allclose(mg.monthly_averages(SampledSeries(g, np.full(8760, 50.0)), cal), 50.0)
    np.testing.assert_allclose(mg.monthly_averages(SampledSeries(g, cal.astype(float)), cal), np.arange(1, 13))


def test_monthly_averages_against_groupby():
    g = Grid(0.0, 1.0, 8760)
    cal = mg.synthetic_calendar(g)
    vals = np.random.default_rng(0).normal(size=8760)
    ref = [sum(v for v, m in zip(vals, cal) if m == month) / list(cal).count(month) for month in range(1, 13)]
    np.testing.assert_allclose(mg.monthly_averages(SampledSeries(g, vals), cal), ref, rtol=0, atol=1e-12)


def test_monthly_averages_empty_month():
    g = Grid(0.0, 1.0, 48)
    with pytest.raises(ValueError, match="month 2"):
        mg.monthly_averages(SampledSeries(g, np.zeros(48)), mg.synthetic_calendar(g))


def test_energy_summary_zero_and_random():
    z = series(np.zeros(100))
    res = mg.simulate(CFG, z, z)
    s = mg.annual_energy_summary(res)
    assert s.battery_in_total == s.pv_to_batt == s.dg_to_batt == 0
    cfg, pv, load = scenario(9, n=100)
    res = mg.simulate(cfg, pv, load)
    s = mg.annual_energy_summary(res)
    assert s.pv_to_batt == pytest.approx(float(np.sum(res.pv_to_batt.values)), abs=1e-9)
    assert s.curtailed_energy == pytest.approx(float(np.sum(res.curtailed.values)), abs=1e-9)
    assert s.battery_in_total == pytest.approx(s.pv_to_batt + s.dg_to_batt, abs=1e-9)

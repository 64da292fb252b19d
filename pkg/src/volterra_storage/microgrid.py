"""Hourly dispatch of an isolated PV / battery / diesel microgrid.

Rule set per step:

1. PV surplus charges the battery (inverter and power limited); what the
   battery cannot take is curtailed.
2. A shortfall is covered from the battery; what it cannot supply is
   unserved (deficit).
3. When SoC falls to the turn-on threshold, or the battery cannot cover
   this step's shortfall, the diesel fleet latches on at full output,
   serving the load and charging the battery with the rest; it unlatches
   once SoC reaches the turn-off threshold.

The battery is advanced either by the discrete linear model or by the
constrained Volterra model solved over rolling windows.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime

import numpy as np

from . import storage
from .errors import ConfigurationError, GridMismatchError
from .series import KW, KWH, Grid, SampledSeries, require_same_unit
from .storage import BatteryParams

MODEL_KINDS = ("linear", "volterra")
_DAYS_IN_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)


@dataclass(frozen=True)
class MicrogridConfig:
    battery: BatteryParams
    pv_rating_kw: float = 75.0
    inverter_solar_kw: float = 75.0
    inverter_batt_kw: float = 72.0
    diesel_units: int = 2
    diesel_unit_kw: float = 100.0
    diesel_on_soc_frac: float = 0.20
    diesel_off_soc_frac: float = 0.80
    model_kind: str = "linear"
    window: int = 24
    diesel_on_shortfall: bool = True

    def __post_init__(self):
        for name in ("pv_rating_kw", "inverter_solar_kw", "inverter_batt_kw", "diesel_unit_kw"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.diesel_units < 1:
            raise ConfigurationError("need at least one diesel unit")
        if not 0 <= self.diesel_on_soc_frac < self.diesel_off_soc_frac <= self.battery.soc_max_frac:
            raise ConfigurationError(
                "need diesel_on_soc_frac < diesel_off_soc_frac <= battery.soc_max_frac"
            )
        if self.model_kind not in MODEL_KINDS:
            raise ConfigurationError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.window < 1:
            raise ConfigurationError("window must be at least one step")

    @property
    def diesel_capacity_kw(self) -> float:
        return self.diesel_units * self.diesel_unit_kw

    @property
    def battery_power_cap(self) -> float:
        """Bus-side battery power limit: inverter rating, ``v_max`` and ``r_bs``."""
        return min(self.inverter_batt_kw, self.battery.power_limit)

    @classmethod
    def reference_site(cls, **overrides) -> MicrogridConfig:
        """75 kW PV and solar inverter, 72 kW battery inverter, 2 x 100 kW diesel, 384 kWh at eta 0.8."""
        battery = overrides.pop("battery", None) or BatteryParams(
            capacity_kwh=384.0, v_max_kw=72.0, eta=0.8, soc_min_frac=0.2, soc_max_frac=1.0,
            rated_cycles=3000, initial_soc_frac=0.5,
        )
        return cls(battery=battery, **overrides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["battery"] = self.battery.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> MicrogridConfig:
        d = dict(d)
        try:
            battery = BatteryParams(**d.pop("battery"))
            return cls(battery=battery, **d)
        except (TypeError, KeyError) as exc:
            raise ConfigurationError(f"bad microgrid config: {exc}") from exc

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class SimState:
    soc_kwh: float
    diesel_on: bool = False


@dataclass(frozen=True)
class StepFlows:
    """Bus-side flows of one step (kW). ``battery_power`` > 0 charges."""

    pv_used: float
    load: float
    battery_power: float
    diesel_power: float
    curtailed: float
    deficit: float
    pv_to_batt: float
    dg_to_batt: float
    diesel_on: bool


@dataclass(frozen=True)
class SimulationResult:
    """Per-step series of a run; ``soc`` is the stored energy after each step."""

    soc: SampledSeries
    battery_power: SampledSeries
    diesel_power: SampledSeries
    pv_used: SampledSeries
    load: SampledSeries
    curtailed: SampledSeries
    deficit: SampledSeries
    pv_to_batt: SampledSeries
    dg_to_batt: SampledSeries
    diesel_state: np.ndarray
    totals: dict
    model_kind: str = "linear"
    initial_soc_kwh: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.soc.grid


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    mape: float
    n_points: int
    skipped_zero_denominator: int = 0


@dataclass(frozen=True)
class EnergySummary:
    """Energy totals (kWh) over the run and per 8760-hour year."""

    battery_in_total: float
    pv_to_batt: float
    dg_to_batt: float
    pv_energy: float
    load_energy: float
    diesel_energy: float
    curtailed_energy: float
    deficit_energy: float
    diesel_hours: float
    years: float
    annual: dict = field(default_factory=dict)


def _latch(state: SimState, cfg: MicrogridConfig, shortfall: float, dt: float) -> bool:
    cap = cfg.battery.capacity_kwh
    on = state.diesel_on
    if on and state.soc_kwh >= cfg.diesel_off_soc_frac * cap:
        on = False
    if not on:
        if state.soc_kwh <= cfg.diesel_on_soc_frac * cap:
            on = True
        elif cfg.diesel_on_shortfall and shortfall > 0:
            available = min(cfg.battery_power_cap, max(state.soc_kwh - cfg.battery.e_min, 0.0) / dt)
            on = shortfall > available * (1 + 1e-12)
    return on


def _bus_balance(state: SimState, pv: float, load: float, cfg: MicrogridConfig, dt: float):
    if pv < 0 or load < 0 or not (math.isfinite(pv) and math.isfinite(load)):
        raise ValueError(f"pv and load must be finite and non-negative, got pv={pv}, load={load}")
    pv_used = min(pv, cfg.inverter_solar_kw)
    on = _latch(state, cfg, load - pv_used, dt)
    diesel = cfg.diesel_capacity_kw if on else 0.0
    return on, pv_used, diesel, pv_used + diesel - load


def _flows(on, pv_used, diesel, load, net, p) -> StepFlows:
    surplus = net - p
    charge = max(p, 0.0)
    pv_to_batt = min(charge, max(pv_used - load, 0.0))
    return StepFlows(
        pv_used=pv_used, load=load, battery_power=p, diesel_power=diesel,
        curtailed=max(surplus, 0.0) + 0.0, deficit=max(-surplus, 0.0) + 0.0,
        pv_to_batt=pv_to_batt, dg_to_batt=charge - pv_to_batt, diesel_on=on,
    )


def dispatch_step(state: SimState, pv: float, load: float, cfg: MicrogridConfig,
                  dt: float = 1.0) -> tuple[SimState, StepFlows]:
    """Apply the rule set for one step, advancing SoC with the linear model."""
    on, pv_used, diesel, net = _bus_balance(state, pv, load, cfg, dt)
    bat = cfg.battery
    cap = cfg.battery_power_cap
    soc = state.soc_kwh
    if net >= 0:
        headroom = max(bat.e_max - soc, 0.0) / (bat.eta * dt)
        p = min(net, cap, headroom)
    else:
        available = max(soc - bat.e_min, 0.0) / dt
        p = -min(-net, cap, available)
    new_soc = storage.linear_model_step(soc, p, dt, bat)
    return SimState(new_soc, on), _flows(on, pv_used, diesel, load, net, p)


def _volterra_window(state: SimState, pv: np.ndarray, load: np.ndarray, cfg: MicrogridConfig,
                     grid: Grid) -> tuple[SimState, list[StepFlows], list[float]]:
    """Run one window, re-solving the constrained Volterra model on the growing prefix."""
    bat = cfg.battery
    cap = cfg.battery_power_cap
    e_start = state.soc_kwh
    requests: list[float] = []
    flows, socs = [], []
    for k in range(pv.size):
        on, pv_used, diesel, net = _bus_balance(state, float(pv[k]), float(load[k]), cfg, grid.h)
        requests.append(min(max(net, -cap), cap))
        prefix = SampledSeries(Grid(grid.t0, grid.h, k + 1), requests, KW)
        kernel = storage.efficiency_kernel(prefix, bat.eta)
        sol = storage.volterra_soc_solve(prefix, kernel, bat, initial_energy=e_start)
        v = float(sol.v.values[-1])
        p = v / bat.eta if requests[-1] > 0 else v
        if abs(p - requests[-1]) <= 1e-12 * max(1.0, abs(p)):
            p = requests[-1]   # v / eta * eta round-off
        e = float(sol.E.values[-1])
        flows.append(_flows(on, pv_used, diesel, float(load[k]), net, p))
        socs.append(e)
        state = SimState(e, on)
    return state, flows, socs


def simulate(cfg: MicrogridConfig, pv: SampledSeries, load: SampledSeries) -> SimulationResult:
    """Fold the dispatch rules over the series with the configured battery model."""
    pv.grid.require_same(load.grid, "pv/load")
    require_same_unit(pv, load)
    grid = pv.grid
    h = grid.h
    n = grid.n
    state = SimState(cfg.battery.initial_energy, False)
    flows: list[StepFlows] = []
    socs: list[float] = []
    if cfg.model_kind == "linear":
        for k in range(n):
            state, fl = dispatch_step(state, float(pv.values[k]), float(load.values[k]), cfg, h)
            flows.append(fl)
            socs.append(state.soc_kwh)
    else:
        for w0 in range(0, n, cfg.window):
            w1 = min(n, w0 + cfg.window)
            wgrid = Grid(grid.t0 + w0 * h, h, w1 - w0)
            state, fl, sc = _volterra_window(state, pv.values[w0:w1], load.values[w0:w1], cfg, wgrid)
            flows.extend(fl)
            socs.extend(sc)
    return result_from_flows(grid, pv.start, flows, socs, cfg.model_kind, cfg.battery.initial_energy)


def result_from_flows(grid: Grid, start, flows, socs, model_kind: str = "linear",
                      initial_soc: float = 0.0) -> SimulationResult:
    """Collect per-step flows and SoC values into a :class:`SimulationResult`."""
    def series(name, unit=KW):
        return SampledSeries(grid, [getattr(f, name) for f in flows], unit, start)

    bp = series("battery_power")
    p2b = series("pv_to_batt")
    d2b = series("dg_to_batt")
    totals = {
        "battery_in_total": grid.h * float(np.maximum(bp.values, 0.0).sum()),
        "pv_to_batt": grid.h * float(p2b.values.sum()),
        "dg_to_batt": grid.h * float(d2b.values.sum()),
    }
    return SimulationResult(
        soc=SampledSeries(grid, socs, KWH, start),
        battery_power=bp,
        diesel_power=series("diesel_power"),
        pv_used=series("pv_used"),
        load=series("load"),
        curtailed=series("curtailed"),
        deficit=series("deficit"),
        pv_to_batt=p2b,
        dg_to_batt=d2b,
        diesel_state=np.array([f.diesel_on for f in flows], dtype=bool),
        totals=totals,
        model_kind=model_kind,
        initial_soc_kwh=initial_soc,
    )


def compare_models(a: SampledSeries, b: SampledSeries) -> MetricsReport:
    """RMSE, MAE and MAPE of ``a`` against the reference ``b``.

    MAPE skips points where ``|b| < 1e-12`` and is in percent; it is NaN
    when every point is skipped.
    """
    a.grid.require_same(b.grid, "compared")
    require_same_unit(a, b)
    av, bv = np.asarray(a.values), np.asarray(b.values)
    if av.size == 0:
        raise ValueError("cannot compare empty series")
    err = av - bv
    keep = np.abs(bv) >= 1e-12
    mape = float(np.mean(np.abs(err[keep]) / np.abs(bv[keep])) * 100.0) if keep.any() else float("nan")
    return MetricsReport(
        rmse=float(np.sqrt(np.mean(err ** 2))),
        mae=float(np.mean(np.abs(err))),
        mape=mape,
        n_points=int(av.size),
        skipped_zero_denominator=int((~keep).sum()),
    )


def synthetic_calendar(grid: Grid) -> np.ndarray:
    """Month (1..12) of each node on a 365-day calendar starting Jan 1, t = 0."""
    day = np.floor(grid.nodes / 24.0).astype(int) % 365
    ends = np.cumsum(_DAYS_IN_MONTH)
    return np.searchsorted(ends, day, side="right") + 1


def calendar_from_timestamps(series: SampledSeries) -> np.ndarray:
    stamps = series.timestamps()
    if stamps is None:
        return synthetic_calendar(series.grid)
    return np.array([s.month for s in stamps], dtype=int)


def monthly_averages(series: SampledSeries, calendar) -> np.ndarray:
    cal = np.asarray(calendar)
    if cal.shape != (series.grid.n,):
        raise GridMismatchError("calendar must give one month per node")
    out = np.empty(12)
    for m in range(1, 13):
        mask = cal == m
        if not mask.any():
            raise ValueError(f"month {m} has no samples")
        out[m - 1] = series.values[mask].mean()
    return out


def annual_energy_summary(result: SimulationResult) -> EnergySummary:
    h = result.grid.h

    def energy(s: SampledSeries) -> float:
        return h * float(np.sum(s.values))

    years = result.grid.n * h / 8760.0
    summary = EnergySummary(
        battery_in_total=h * float(np.maximum(result.battery_power.values, 0.0).sum()),
        pv_to_batt=energy(result.pv_to_batt),
        dg_to_batt=energy(result.dg_to_batt),
        pv_energy=energy(result.pv_used),
        load_energy=energy(result.load),
        diesel_energy=energy(result.diesel_power),
        curtailed_energy=energy(result.curtailed),
        deficit_energy=energy(result.deficit),
        diesel_hours=h * float(result.diesel_state.sum()),
        years=years,
    )
    annual = {k: v / years for k, v in asdict(summary).items()
              if k not in ("years", "annual", "diesel_hours")}
    return replace(summary, annual=annual)


def power_balance_defect(result: SimulationResult) -> np.ndarray:
    """``sources - sinks`` per step; zero up to rounding for a consistent result.

    Sources are PV, diesel, battery discharge and unserved load; sinks are
    load, battery charge and curtailment.
    """
    bp = result.battery_power.values
    src = result.pv_used.values + result.diesel_power.values + np.maximum(-bp, 0) + result.deficit.values
    snk = result.load.values + np.maximum(bp, 0) + result.curtailed.values
    return src - snk

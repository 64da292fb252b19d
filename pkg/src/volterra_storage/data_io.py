"""Time-series ingestion, synthetic profiles, noise injection and result files.

Time-series CSV layout::

    # unit: kW
    timestamp,value
    2021-01-01T00:00:00Z,12.5
    ...

Timestamps are ISO-8601 in UTC (naive stamps are read as UTC). Series on
the package grid measure time in hours from the first timestamp.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import vie
from .errors import ConfigurationError, IngestError, UnitMismatchError
from .microgrid import MetricsReport, MicrogridConfig, SimulationResult, StepFlows, result_from_flows
from .series import KW, Grid, SampledSeries

log = logging.getLogger(__name__)

SCHEMA_VERSION = "vs-1"
RESULT_COLUMNS = ("timestamp", "soc_kwh", "batt_kw", "diesel_kw", "pv_kw", "curtailed_kw", "deficit_kw")
#: anchor for series without wall-clock time (a non-leap year)
SYNTHETIC_EPOCH = datetime(2021, 1, 1, tzinfo=timezone.utc)
MAX_INTERPOLATED_GAP = 2
SPACING_TOL_S = 1.0


@dataclass(frozen=True)
class IngestResult:
    series: SampledSeries
    n_interpolated: int = 0


@dataclass(frozen=True)
class SynthProfileParams:
    kind: str
    daily_peak: float
    seasonal_amplitude: float = 0.3
    noise_frac: float = 0.05
    seed: int = 0
    days: int = 365

    def __post_init__(self):
        if self.kind not in ("pv", "load"):
            raise ConfigurationError(f"kind must be 'pv' or 'load', got {self.kind!r}")
        if not self.daily_peak > 0:
            raise ConfigurationError("daily_peak must be positive")
        for name in ("seasonal_amplitude", "noise_frac"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.days < 1:
            raise ConfigurationError("days must be at least 1")


# --------------------------------------------------------------------------- ingestion

def parse_timestamp(text: str) -> datetime:
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(s)
    except ValueError as exc:
        raise IngestError(f"bad timestamp {text!r}") from exc
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    ts = ts.astimezone(timezone.utc)
    spec = "seconds" if ts.microsecond == 0 else "microseconds"
    return ts.replace(tzinfo=None).isoformat(timespec=spec) + "Z"


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from exc


def read_timeseries_csv(path, expected_unit: str | None = None,
                        default_step_h: float = 1.0) -> IngestResult:
    """Read and validate a time-series CSV.

    Gaps of up to two missing samples are filled by linear interpolation
    and counted; longer gaps, duplicate or decreasing timestamps and a unit
    tag that differs from ``expected_unit`` are rejected. The step is the
    smallest spacing in the file (``default_step_h`` for a single row).
    """
    unit = None
    stamps: list[datetime] = []
    values: list[float] = []
    header_seen = False
    for lineno, raw in enumerate(_read_lines(path), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if key.strip().lower() == "unit":
                unit = val.strip()
            continue
        if not header_seen:
            header_seen = True
            cols = [c.strip().lower() for c in line.split(",")]
            if cols[:2] == ["timestamp", "value"]:
                continue
            raise IngestError(f"{path}: expected header 'timestamp,value', got {line!r}")
        parts = line.split(",")
        if len(parts) != 2:
            raise IngestError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        stamps.append(parse_timestamp(parts[0]))
        try:
            v = float(parts[1])
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: bad value {parts[1]!r}") from exc
        if not math.isfinite(v):
            raise IngestError(f"{path}:{lineno}: non-finite value")
        values.append(v)
    if unit is None:
        raise IngestError(f"{path}: missing '# unit: ...' header line")
    if expected_unit is not None and unit != expected_unit:
        raise UnitMismatchError(f"{path}: file is in {unit!r}, expected {expected_unit!r}")
    if not values:
        raise IngestError(f"{path}: no data rows")

    secs = np.array([(s - stamps[0]).total_seconds() for s in stamps])
    diffs = np.diff(secs)
    if np.any(diffs <= 0):
        k = int(np.argmax(diffs <= 0))
        raise IngestError(
            f"{path}: timestamps not strictly increasing at {format_timestamp(stamps[k + 1])}"
        )
    step = float(diffs.min()) if diffs.size else default_step_h * 3600.0
    ratios = diffs / step
    steps = np.rint(ratios).astype(int)
    off = np.abs(diffs - steps * step) > SPACING_TOL_S
    if np.any(off):
        k = int(np.argmax(off))
        raise IngestError(
            f"{path}: spacing {diffs[k]:.0f} s between {format_timestamp(stamps[k])} and "
            f"{format_timestamp(stamps[k + 1])} is not a multiple of the {step:.0f} s step"
        )
    big = steps - 1 > MAX_INTERPOLATED_GAP
    if np.any(big):
        k = int(np.argmax(big))
        raise IngestError(
            f"{path}: gap of {steps[k] - 1} missing samples between "
            f"{format_timestamp(stamps[k])} and {format_timestamp(stamps[k + 1])}"
        )
    idx = np.concatenate(([0], np.cumsum(steps)))
    full = np.interp(np.arange(idx[-1] + 1), idx, np.asarray(values))
    filled = int(idx[-1] + 1 - len(values))
    if filled:
        log.warning("%s: interpolated %d missing sample(s)", path, filled)
    grid = Grid(0.0, step / 3600.0, full.size)
    return IngestResult(SampledSeries(grid, full, unit, stamps[0]), filled)


def load_timeseries_csv(path, expected_unit: str | None = None) -> SampledSeries:
    return read_timeseries_csv(path, expected_unit).series


def _series_stamps(series: SampledSeries) -> list[datetime]:
    stamps = series.timestamps()
    if stamps is None:
        return [SYNTHETIC_EPOCH + timedelta(hours=float(t)) for t in series.grid.nodes]
    return stamps


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_timeseries_csv(series: SampledSeries, path) -> None:
    """Write ``series`` in the ingestion layout (values at full precision)."""
    out = io.StringIO()
    out.write(f"# unit: {series.unit}\ntimestamp,value\n")
    for ts, v in zip(_series_stamps(series), series.values):
        out.write(f"{format_timestamp(ts)},{float(v)!r}\n")
    _atomic_write(path, out.getvalue())


# --------------------------------------------------------------------------- synthetic data

def _day_hour(n: int):
    t = np.arange(n, dtype=float)
    return np.floor(t / 24.0) % 365, t % 24.0


def synth_pv_profile(params: SynthProfileParams) -> SampledSeries:
    """Hourly PV output: half-rectified daily sine (06-18 h) times a summer-peaking seasonal factor."""
    n = 24 * params.days
    day, hour = _day_hour(n)
    daily = np.maximum(np.sin(np.pi * (hour - 6.0) / 12.0), 0.0)
    # seasonal factor in [1 - A, 1], largest near the June solstice (day 171)
    seasonal = 1.0 - params.seasonal_amplitude * 0.5 * (1.0 - np.cos(2 * np.pi * (day - 171) / 365))
    rng = np.random.default_rng(params.seed)
    noise = 1.0 + params.noise_frac * rng.uniform(-1.0, 1.0, n)
    values = np.maximum(params.daily_peak * daily * seasonal * noise, 0.0)
    return SampledSeries(Grid(0.0, 1.0, n), values, KW)


def synth_load_profile(params: SynthProfileParams) -> SampledSeries:
    """Hourly load: evening-peaking daily shape times a winter-peaking seasonal factor, plus noise."""
    n = 24 * params.days
    day, hour = _day_hour(n)
    daily = 0.75 + 0.25 * np.cos(2 * np.pi * (hour - 19.0) / 24.0)
    seasonal = 1.0 - params.seasonal_amplitude * 0.5 * (1.0 - np.cos(2 * np.pi * (day - 15) / 365))
    rng = np.random.default_rng(params.seed)
    noise = 1.0 + params.noise_frac * rng.uniform(-1.0, 1.0, n)
    values = np.maximum(params.daily_peak * daily * seasonal * noise, 0.0)
    return SampledSeries(Grid(0.0, 1.0, n), values, KW)


def synth_profile(params: SynthProfileParams) -> SampledSeries:
    return synth_pv_profile(params) if params.kind == "pv" else synth_load_profile(params)


def inject_noise(series: SampledSeries, delta: float, seed) -> SampledSeries:
    """Add seeded uniform noise of amplitude ``delta * sup|series|``."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0:
        return series
    amp = delta * float(np.max(np.abs(series.values)))
    rng = np.random.default_rng(seed)
    return series.with_values(series.values + rng.uniform(-amp, amp, series.grid.n))


# --------------------------------------------------------------------------- results

def _fmt(v) -> str:
    return "%.12g" % (v + 0.0)   # + 0.0 folds -0 into 0


def write_table_csv(path, columns, rows, comments=()) -> None:
    """Write a CSV with optional ``# key: value`` comment lines; rows may be empty."""
    out = io.StringIO()
    for c in comments:
        out.write(f"# {c}\n")
    out.write(",".join(columns) + "\n")
    for row in rows:
        out.write(",".join(r if isinstance(r, str) else _fmt(r) for r in row) + "\n")
    _atomic_write(path, out.getvalue())


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return _clean(v.item())
    return v


def write_json(doc: dict, path) -> None:
    _atomic_write(path, json.dumps(_clean(doc), sort_keys=True, indent=1, allow_nan=False) + "\n")


def _grid_doc(grid: Grid) -> dict:
    return {"t0": grid.t0, "h": grid.h, "n": grid.n}


def _result_rows(result: SimulationResult):
    cols = (result.soc, result.battery_power, result.diesel_power, result.pv_used,
            result.curtailed, result.deficit)
    stamps = _series_stamps(result.soc)
    for k, ts in enumerate(stamps):
        yield [format_timestamp(ts)] + [float(c.values[k]) for c in cols]


def write_results(obj, path, fmt: str = "csv", config: MicrogridConfig | None = None,
                  seed=None) -> None:
    """Serialise a :class:`SimulationResult`, :class:`vie.Solution` or :class:`MetricsReport`."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    if isinstance(obj, SimulationResult):
        if fmt == "csv":
            write_table_csv(path, RESULT_COLUMNS, _result_rows(obj))
            return
        doc = {
            "kind": "simulation",
            "model_kind": obj.model_kind,
            "initial_soc_kwh": obj.initial_soc_kwh,
            "grid": _grid_doc(obj.grid),
            "start": None if obj.soc.start is None else format_timestamp(obj.soc.start),
            "series": {
                "soc_kwh": obj.soc.values.tolist(),
                "batt_kw": obj.battery_power.values.tolist(),
                "diesel_kw": obj.diesel_power.values.tolist(),
                "pv_kw": obj.pv_used.values.tolist(),
                "load_kw": obj.load.values.tolist(),
                "curtailed_kw": obj.curtailed.values.tolist(),
                "deficit_kw": obj.deficit.values.tolist(),
                "pv_to_batt_kw": obj.pv_to_batt.values.tolist(),
                "dg_to_batt_kw": obj.dg_to_batt.values.tolist(),
                "diesel_on": obj.diesel_state.astype(int).tolist(),
            },
            "totals": obj.totals,
        }
    elif isinstance(obj, vie.Solution):
        x = obj.x
        if fmt == "csv":
            comments = [f"unit: {x.unit}", f"t0: {x.grid.t0!r}", f"h: {x.grid.h!r}",
                        f"residual: {_fmt(obj.residual)}", f"residual_sup: {_fmt(obj.residual_sup)}",
                        f"alpha: {_fmt(obj.alpha)}"]
            rows = ([float(t), float(v), int(i)]
                    for t, v, i in zip(x.grid.nodes, x.values, obj.iterations_per_node))
            write_table_csv(path, ("t", "x", "iterations"), rows, comments)
            return
        doc = {
            "kind": "solution",
            "unit": x.unit,
            "grid": _grid_doc(x.grid),
            "x": x.values.tolist(),
            "iterations_per_node": [int(i) for i in obj.iterations_per_node],
            "residual": obj.residual,
            "residual_sup": obj.residual_sup,
            "alpha": obj.alpha,
        }
    elif isinstance(obj, MetricsReport):
        if fmt == "csv":
            write_table_csv(path, ("metric", "value"), ([k, v] for k, v in asdict(obj).items()))
            return
        doc = {"kind": "metrics", **asdict(obj)}
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")
    doc["schema"] = SCHEMA_VERSION
    if config is not None:
        doc["config"] = config.to_dict()
        doc["config_hash"] = config.digest()
    if seed is not None:
        doc["seed"] = seed
    write_json(doc, path)


def write_metrics_table(rows, path, fmt: str = "csv") -> None:
    """Write labelled metrics, e.g. ``[("clean", report), ...]``."""
    fields = ("rmse", "mae", "mape", "n_points", "skipped_zero_denominator")
    if fmt == "csv":
        write_table_csv(path, ("case",) + fields,
                        ([label] + [getattr(r, f) for f in fields] for label, r in rows))
    else:
        write_json({"schema": SCHEMA_VERSION, "kind": "metrics_table",
                    "rows": [{"case": label, **asdict(r)} for label, r in rows]}, path)


def _read_table(path):
    comments, rows, header = {}, [], None
    for line in _read_lines(path):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            comments[key.strip()] = val.strip()
        elif header is None:
            header = [c.strip() for c in line.split(",")]
        else:
            rows.append([c.strip() for c in line.split(",")])
    if header is None:
        raise IngestError(f"{path}: no header row")
    return comments, header, rows


def _simulation_from_columns(grid, start, soc, batt, diesel, pv, curtailed, deficit,
                             load=None, model_kind="linear", initial_soc=0.0, totals=None):
    if load is None:
        # power balance gives the load back
        load = pv + diesel + np.maximum(-batt, 0) + deficit - np.maximum(batt, 0) - curtailed
    flows = []
    for k in range(grid.n):
        charge = max(batt[k], 0.0)
        p2b = min(charge, max(pv[k] - load[k], 0.0))
        flows.append(StepFlows(pv[k], load[k], batt[k], diesel[k], curtailed[k], deficit[k],
                               p2b, charge - p2b, bool(diesel[k] > 0)))
    result = result_from_flows(grid, start, flows, list(soc), model_kind, initial_soc)
    if totals is not None:
        result = replace(result, totals=dict(totals))
    return result


def read_results(path):
    """Read back anything :func:`write_results` wrote (format chosen by content)."""
    text = Path(path).read_text(encoding="utf-8") if Path(path).exists() else None
    if text is None:
        raise IngestError(f"{path}: no such file")
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA_VERSION:
            raise IngestError(f"{path}: unsupported schema {doc.get('schema')!r}")
        kind = doc.get("kind")
        if kind == "simulation":
            g = Grid(**doc["grid"])
            s = {k: np.asarray(v, dtype=float) for k, v in doc["series"].items()}
            start = None if doc["start"] is None else parse_timestamp(doc["start"])
            res = _simulation_from_columns(
                g, start, s["soc_kwh"], s["batt_kw"], s["diesel_kw"], s["pv_kw"],
                s["curtailed_kw"], s["deficit_kw"], load=s["load_kw"],
                model_kind=doc["model_kind"], initial_soc=doc["initial_soc_kwh"], totals=doc["totals"],
            )
            return replace(res, diesel_state=np.asarray(s["diesel_on"], dtype=bool),
                           pv_to_batt=res.pv_to_batt.with_values(s["pv_to_batt_kw"]),
                           dg_to_batt=res.dg_to_batt.with_values(s["dg_to_batt_kw"]))
        if kind == "solution":
            g = Grid(**doc["grid"])
            return vie.Solution(
                x=SampledSeries(g, doc["x"], doc["unit"]),
                residual=_nan(doc["residual"]), residual_sup=_nan(doc["residual_sup"]),
                iterations_per_node=np.asarray(doc["iterations_per_node"], dtype=int),
                alpha=doc["alpha"],
            )
        if kind == "metrics":
            return MetricsReport(**{k: _nan(doc[k]) if k in ("rmse", "mae", "mape") else doc[k]
                                    for k in ("rmse", "mae", "mape", "n_points", "skipped_zero_denominator")})
        raise IngestError(f"{path}: unknown result kind {kind!r}")

    comments, header, rows = _read_table(path)
    if tuple(header) == RESULT_COLUMNS:
        if not rows:
            raise IngestError(f"{path}: result file has no rows")
        stamps = [parse_timestamp(r[0]) for r in rows]
        cols = np.array([[float(v) for v in r[1:]] for r in rows]).T
        h = (stamps[1] - stamps[0]).total_seconds() / 3600.0 if len(stamps) > 1 else 1.0
        return _simulation_from_columns(Grid(0.0, h, len(rows)), stamps[0], *cols)
    if tuple(header) == ("t", "x", "iterations"):
        n = len(rows)
        if n == 0:
            raise IngestError(f"{path}: solution file has no rows")
        g = Grid(float(comments["t0"]), float(comments["h"]), n)
        return vie.Solution(
            x=SampledSeries(g, [float(r[1]) for r in rows], comments.get("unit", "")),
            residual=float(comments["residual"]), residual_sup=float(comments["residual_sup"]),
            iterations_per_node=np.array([int(r[2]) for r in rows]),
            alpha=float(comments["alpha"]),
        )
    if tuple(header) == ("metric", "value"):
        d = {r[0]: r[1] for r in rows}
        return MetricsReport(rmse=float(d["rmse"]), mae=float(d["mae"]), mape=float(d["mape"]),
                             n_points=int(float(d["n_points"])),
                             skipped_zero_denominator=int(float(d["skipped_zero_denominator"])))
    raise IngestError(f"{path}: unrecognised result header {header}")


def _nan(v):
    return float("nan") if v is None else float(v)

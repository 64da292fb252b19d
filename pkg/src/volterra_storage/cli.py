"""Command-line front end: ``vstore solve | simulate | compare | regularize``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
Set ``VS_LOG`` (e.g. ``INFO`` or ``DEBUG``) for log output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import data_io, microgrid, storage, vie
from .errors import ConfigurationError, IngestError, SolverError
from .series import KW, Grid, SampledSeries

log = logging.getLogger("volterra_storage")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- kernels

def _poly(coeffs):
    c = np.asarray(coeffs, dtype=float)
    return lambda t: np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), c)


def _factor(spec):
    if isinstance(spec, (int, float)):
        v = float(spec)
        return lambda t, tau: v + 0.0 * (np.asarray(t, dtype=float) - tau)
    if not isinstance(spec, dict) or not {"t", "tau", "values"} <= spec.keys():
        raise ConfigurationError("segment factor must be a number or a table {t, tau, values}")
    interp = RegularGridInterpolator(
        (np.asarray(spec["t"], dtype=float), np.asarray(spec["tau"], dtype=float)),
        np.asarray(spec["values"], dtype=float), bounds_error=False, fill_value=None,
    )

    def factor(t, tau):
        t, tau = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(tau, dtype=float))
        pts = np.stack([t.ravel(), tau.ravel()], axis=-1)
        return interp(pts).reshape(t.shape)

    return factor


def kernel_from_dict(doc: dict) -> vie.PiecewiseKernel:
    """Build a piecewise kernel from its JSON description.

    ``{"segments": [{"factor": <number | table>, "boundary": [c0, c1, ...]}, ...]}``;
    ``boundary`` holds the polynomial coefficients (increasing powers) of the
    segment's upper curve and is ignored on the last segment.
    """
    segs = doc.get("segments") if isinstance(doc, dict) else None
    if not segs:
        raise ConfigurationError("kernel file needs a non-empty 'segments' list")
    out = []
    lower = None
    for i, s in enumerate(segs):
        if "factor" not in s:
            raise ConfigurationError(f"segment {i} has no 'factor'")
        kw = {}
        if lower is not None:
            kw["alpha_lower"] = lower
        if i < len(segs) - 1:
            if "boundary" not in s:
                raise ConfigurationError(f"segment {i} needs a 'boundary' polynomial")
            kw["alpha_upper"] = lower = _poly(s["boundary"])
        out.append(vie.KernelSegment(_factor(s["factor"]), **kw))
    return vie.PiecewiseKernel(tuple(out))


def parse_kernel(spec: str) -> vie.PiecewiseKernel:
    if spec.startswith("const:"):
        try:
            value = float(spec[len("const:"):])
        except ValueError as exc:
            raise ConfigurationError(f"bad constant kernel {spec!r}") from exc
        return vie.PiecewiseKernel.constant(value)
    path = Path(spec)
    if not path.is_file():
        raise ConfigurationError(f"kernel file {spec} not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{spec}: invalid JSON: {exc}") from exc
    return kernel_from_dict(doc)


# --------------------------------------------------------------------------- commands

def _require_file(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise ConfigurationError(f"{what} file {path} not found")


def cmd_solve(args) -> int:
    kernel = parse_kernel(args.kernel)
    _require_file(args.rhs, "rhs")
    f = data_io.load_timeseries_csv(args.rhs)
    if f.grid.n < 2:
        raise ConfigurationError("rhs needs at least two samples")
    kernel.check_nesting(f.grid)
    if args.alpha > 0:
        sol = vie.solve_vie_lavrentiev(kernel, f, args.alpha)
    else:
        sol = vie.solve_vie_first_kind(kernel, f)
    if args.out:
        data_io.write_results(sol, args.out, args.format)
    print(f"nodes={sol.x.grid.n} alpha={sol.alpha:.6g} residual={sol.residual:.6g} "
          f"residual_sup={sol.residual_sup:.6g}")
    return EXIT_OK


def load_microgrid_config(path: str | None) -> microgrid.MicrogridConfig:
    if path is None:
        return microgrid.MicrogridConfig.reference_site()
    _require_file(path, "config")
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    return microgrid.MicrogridConfig.from_dict(doc)


def _inputs(args, cfg):
    if args.synthetic_year:
        pv = data_io.synth_pv_profile(data_io.SynthProfileParams(
            "pv", cfg.pv_rating_kw, seasonal_amplitude=0.5, noise_frac=0.2, seed=args.seed))
        load = data_io.synth_load_profile(data_io.SynthProfileParams(
            "load", 0.8 * cfg.pv_rating_kw, seasonal_amplitude=0.3, noise_frac=0.1, seed=args.seed + 1))
        return pv, load
    if not (args.pv and args.load):
        raise ConfigurationError("give --pv and --load, or --synthetic-year")
    _require_file(args.pv, "pv")
    _require_file(args.load, "load")
    pv = data_io.load_timeseries_csv(args.pv, KW)
    load = data_io.load_timeseries_csv(args.load, KW)
    return pv, load


def _out_paths(out: str, fmt: str, tag: str | None):
    p = Path(out)
    stem = p.with_suffix("") if p.suffix else p
    if tag:
        stem = stem.with_name(f"{stem.name}.{tag}")
    return (stem.with_name(stem.name + f".{fmt}"), stem.with_name(stem.name + ".summary.json"),
            stem.with_name(stem.name + ".monthly.csv"))


def run_scenario(config_path, args, tag=None) -> dict:
    cfg = load_microgrid_config(config_path)
    if args.model:
        cfg = replace(cfg, model_kind=args.model)
    pv, load = _inputs(args, cfg)
    result = microgrid.simulate(cfg, pv, load)
    energy = microgrid.annual_energy_summary(result)
    cycles = storage.count_cycles(result.soc, cfg.battery)
    summary = {
        "model_kind": cfg.model_kind,
        "energy_kwh": asdict(energy),
        "equivalent_full_cycles": cycles.equivalent_full_cycles,
        "half_cycles": cycles.half_cycles,
    }
    if cfg.battery.rated_cycles and energy.years > 0 and cycles.equivalent_full_cycles > 0:
        summary["lifetime_years"] = storage.estimate_lifetime(
            cycles.equivalent_full_cycles / energy.years, cfg.battery)
    if args.out:
        res_path, sum_path, mon_path = _out_paths(args.out, args.format, tag)
        data_io.write_results(result, res_path, args.format, config=cfg, seed=args.seed)
        data_io.write_json({"schema": data_io.SCHEMA_VERSION, "kind": "summary",
                            "config_hash": cfg.digest(), "seed": args.seed, **summary}, sum_path)
        cal = microgrid.calendar_from_timestamps(result.soc)
        months = sorted(set(cal.tolist()))
        cols = {name: getattr(result, attr) for name, attr in (
            ("soc_kwh", "soc"), ("batt_kw", "battery_power"), ("diesel_kw", "diesel_power"),
            ("pv_kw", "pv_used"), ("load_kw", "load"), ("curtailed_kw", "curtailed"),
            ("deficit_kw", "deficit"))}
        rows = []
        for m in months:
            mask = cal == m
            rows.append([m] + [float(s.values[mask].mean()) for s in cols.values()])
        data_io.write_table_csv(mon_path, ("month",) + tuple(cols), rows)
    return summary


def cmd_simulate(args) -> int:
    configs = args.config or [None]
    if len(configs) == 1:
        summaries = [run_scenario(configs[0], args)]
    else:
        tags = [Path(c).stem for c in configs]
        if len(set(tags)) != len(tags):
            raise ConfigurationError("scenario config files need distinct names")
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                summaries = list(pool.map(run_scenario, configs, [args] * len(configs), tags))
        else:
            summaries = [run_scenario(c, args, t) for c, t in zip(configs, tags)]
    for c, s in zip(configs, summaries):
        e = s["energy_kwh"]
        print(f"{c or 'default'}: model={s['model_kind']} battery_in={e['battery_in_total']:.6g} kWh "
              f"curtailed={e['curtailed_energy']:.6g} kWh deficit={e['deficit_energy']:.6g} kWh "
              f"cycles={s['equivalent_full_cycles']:.4g}")
    return EXIT_OK


def _load_compare_series(path: str) -> SampledSeries:
    _require_file(path, "input")
    try:
        obj = data_io.read_results(path)
    except IngestError:
        return data_io.load_timeseries_csv(path)
    if isinstance(obj, microgrid.SimulationResult):
        return obj.soc
    if isinstance(obj, vie.Solution):
        return obj.x
    raise ConfigurationError(f"{path}: cannot compare a {type(obj).__name__}")


def cmd_compare(args) -> int:
    a = _load_compare_series(args.a)
    b = _load_compare_series(args.b)
    if a.grid.n != b.grid.n:
        raise ConfigurationError(f"series lengths differ: {a.grid.n} vs {b.grid.n}")
    # compare sample by sample; the files may carry different time origins
    b = SampledSeries(a.grid, b.values, b.unit)
    a = SampledSeries(a.grid, a.values, a.unit)
    report = microgrid.compare_models(a, b)
    if args.out:
        data_io.write_results(report, args.out, args.format)
    print(f"rmse={report.rmse:.6g} mae={report.mae:.6g} mape={report.mape:.6g}% n={report.n_points}")
    return EXIT_OK


def regularization_experiment(f_clean: SampledSeries, kernel: vie.PiecewiseKernel, delta: float,
                              seed, x_true: SampledSeries | None = None):
    """Clean, noisy and discrepancy-regularised solves of one problem.

    Noise of relative amplitude ``delta`` is added to every sample but the
    first, where ``f`` is pinned to zero. Returns ``(rows, alpha, target, solutions)``
    with ``rows`` as ``[(label, MetricsReport), ...]`` measured against
    ``x_true`` (the clean solve when not given).
    """
    clean = vie.solve_vie_first_kind(kernel, f_clean)
    ref = x_true if x_true is not None else clean.x
    noisy_f = data_io.inject_noise(f_clean, delta, seed)
    noisy_f = noisy_f.with_values(np.concatenate(([0.0], noisy_f.values[1:])))
    noisy = vie.solve_vie_first_kind(kernel, noisy_f)
    if delta > 0:
        amp = delta * float(np.max(np.abs(f_clean.values)))
        target = amp * np.sqrt(f_clean.grid.h * (f_clean.grid.n - 1))
        alpha = vie.select_alpha_discrepancy(kernel, noisy_f, target)
        reg = vie.solve_vie_lavrentiev(kernel, noisy_f, alpha)
    else:
        target, alpha, reg = 0.0, 0.0, noisy
    rows = [(label, microgrid.compare_models(s.x.with_values(s.x.values, ref.unit), ref))
            for label, s in (("clean", clean), ("noisy", noisy), ("regularized", reg))]
    return rows, alpha, target, (clean, noisy, reg)


def cmd_regularize(args) -> int:
    if args.delta < 0:
        raise ConfigurationError("--delta must be non-negative")
    kernel = parse_kernel(args.kernel) if args.kernel else vie.PiecewiseKernel.constant(args.eta)
    x_true = None
    if args.rhs:
        _require_file(args.rhs, "rhs")
        f = data_io.load_timeseries_csv(args.rhs)
    else:
        # stiff default problem: int_0^t eta x dtau = eta t, exact solution x = 1
        grid = Grid.span(0.0, 1.0, args.h)
        f = SampledSeries(grid, args.eta * grid.nodes)
        x_true = SampledSeries(grid.midpoints(), np.ones(grid.n - 1))
    rows, alpha, target, sols = regularization_experiment(f, kernel, args.delta, args.seed, x_true)
    if args.out:
        data_io.write_metrics_table(rows, args.out, args.format)
    print(f"{'case':<12} {'rmse':>12} {'mae':>12} {'mape_%':>12}")
    for label, r in rows:
        print(f"{label:<12} {r.rmse:12.6g} {r.mae:12.6g} {r.mape:12.6g}")
    print(f"alpha={alpha:.6g} residual={sols[2].residual:.6g} target={target:.6g}")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vstore", description="Volterra storage models and microgrid dispatch.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve a first-kind Volterra equation")
    s.add_argument("--kernel", required=True, help="const:<value> or kernel JSON file")
    s.add_argument("--rhs", required=True, help="right-hand side CSV")
    s.add_argument("--alpha", type=float, default=0.0, help="Lavrentiev parameter (0: none)")
    s.add_argument("--out")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("simulate", help="run the microgrid dispatch simulation")
    s.add_argument("--config", nargs="+", help="microgrid config JSON file(s)")
    s.add_argument("--pv", help="PV power CSV (kW)")
    s.add_argument("--load", help="load CSV (kW)")
    s.add_argument("--synthetic-year", action="store_true", help="use generated PV and load profiles")
    s.add_argument("--model", choices=microgrid.MODEL_KINDS)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1, help="parallel workers for several configs")
    s.add_argument("--out")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", help="RMSE/MAE/MAPE of series a against reference b")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--out")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("regularize", help="clean / noisy / regularised solve comparison")
    s.add_argument("--delta", type=float, default=0.01, help="relative noise amplitude")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eta", type=float, default=0.92, help="constant kernel value")
    s.add_argument("--kernel", help="kernel spec, overrides --eta")
    s.add_argument("--rhs", help="clean right-hand side CSV (default: eta * t on [0, 1])")
    s.add_argument("--h", type=float, default=1e-3, help="grid step of the default problem")
    s.add_argument("--out")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_regularize)
    return p


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("VS_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"vstore: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"vstore: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

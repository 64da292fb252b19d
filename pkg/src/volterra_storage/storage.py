"""Battery state-of-charge models.

Three views of the same battery:

* the ampere-hour (direct) model, SoC as the efficiency-weighted integral
  of battery power;
* the discrete linear model, one clamped update per time step;
* the Volterra (inverse) model, where the power-change function ``x`` is
  recovered from the bus imbalance and integrated twice, once into power
  ``v`` and once into stored energy ``E``, under power and energy limits.

Sign convention everywhere: positive power charges the battery.

Power series handed to the step models are per-step values: sample ``k``
is the (mean) power over the step that ends at node ``k``, so stored
energy after sample ``k`` is ``E_init + h * sum_{j<=k} v_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import vie
from .errors import ConfigurationError, ConstraintError
from .series import KW, KW_PER_H, KWH, Grid, SampledSeries


@dataclass(frozen=True)
class BatteryParams:
    """Battery ratings.

    Attributes:
        capacity_kwh: installed capacity.
        v_max_kw: largest charge/discharge power.
        soc_min_frac, soc_max_frac: usable SoC window as fractions of capacity.
        eta: Coulombic efficiency, applied to charging power only.
        r_bs: optional per-step power restriction as a fraction of capacity
            (0.2 to 0.4 for lead-acid/lead-carbon banks).
        rated_cycles: rated full-cycle life, needed for lifetime estimates.
        initial_soc_frac: SoC at the start of a run.
    """

    capacity_kwh: float
    v_max_kw: float
    soc_min_frac: float = 0.2
    soc_max_frac: float = 1.0
    eta: float = 0.8
    r_bs: float | None = None
    rated_cycles: float | None = None
    initial_soc_frac: float = 0.5

    def __post_init__(self):
        if not self.capacity_kwh > 0:
            raise ConfigurationError("capacity must be positive")
        if not self.v_max_kw > 0:
            raise ConfigurationError("v_max must be positive")
        if not 0 <= self.soc_min_frac < self.soc_max_frac <= 1:
            raise ConfigurationError("need 0 <= soc_min_frac < soc_max_frac <= 1")
        if not 0 < self.eta <= 1:
            raise ConfigurationError("eta must lie in (0, 1]")
        if self.r_bs is not None and not 0.2 <= self.r_bs <= 0.4:
            raise ConfigurationError("r_bs must lie in [0.2, 0.4]")
        if self.rated_cycles is not None and not self.rated_cycles > 0:
            raise ConfigurationError("rated_cycles must be positive")
        if not 0 <= self.initial_soc_frac <= 1:
            raise ConfigurationError("initial_soc_frac must lie in [0, 1]")

    @property
    def e_min(self) -> float:
        return self.soc_min_frac * self.capacity_kwh

    @property
    def e_max(self) -> float:
        return self.soc_max_frac * self.capacity_kwh

    @property
    def initial_energy(self) -> float:
        return self.initial_soc_frac * self.capacity_kwh

    @property
    def power_limit(self) -> float:
        """Binding power cap: ``v_max`` and, when set, ``r_bs * capacity``."""
        if self.r_bs is None:
            return self.v_max_kw
        return min(self.v_max_kw, self.r_bs * self.capacity_kwh)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DispatchSolution:
    """Constrained Volterra-model trajectory.

    ``x`` (kW/h) lives on the midpoints of the node grid shared by ``v``,
    ``E``, ``curtailed`` and ``deficit``. ``v`` is stored-side power (kW),
    ``E`` stored energy (kWh). ``solution`` is the raw VIE solve when the
    trajectory came from :func:`volterra_soc_solve`.
    """

    x: SampledSeries
    v: SampledSeries
    E: SampledSeries
    curtailed: SampledSeries
    deficit: SampledSeries
    candidate_v: SampledSeries
    initial_energy: float
    solution: vie.Solution | None = None


@dataclass(frozen=True)
class CycleReport:
    equivalent_full_cycles: float
    half_cycles: int
    mean_depth_of_discharge: float
    depths: tuple = ()


def effective_efficiency(power, eta: float) -> np.ndarray:
    """``eta`` where the battery charges, 1 where it discharges or idles."""
    return np.where(np.asarray(power, dtype=float) > 0, eta, 1.0)


def charge_efficiency(eta: float):
    """Nonlinearity ``G(tau, i) = eta_eff(i) * i`` of the ampere-hour kernel."""

    def g(tau, i):
        i = np.asarray(i, dtype=float)
        return np.where(i > 0, eta * i, i)

    return g


def ampere_hour_kernel(eta: float) -> vie.PiecewiseKernel:
    # G is piecewise linear with slopes eta and 1; its nonlinear part is (1 - eta)-Lipschitz.
    return vie.PiecewiseKernel.single(lambda t, tau: 1.0 + 0.0 * (t - tau),
                                      charge_efficiency(eta), lipschitz=1.0 - eta)


def soc_ampere_hour(initial_soc: float, current: SampledSeries, eta: float) -> SampledSeries:
    """Unconstrained ampere-hour count ``SOC(t) = SOC(0) + int_0^t eta_eff i dtau``.

    ``current`` holds per-interval battery power (midpoint samples); the
    result lives on the node grid, starting at ``initial_soc``.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    f = vie.forward_apply(ampere_hour_kernel(eta), current)
    return SampledSeries(f.grid, initial_soc + f.values, KWH, current.start)


def recover_current(soc: SampledSeries, eta: float,
                    opts: vie.SolverOpts | None = None) -> SampledSeries:
    """Invert :func:`soc_ampere_hour`: battery power from a SoC trajectory.

    This is the ampere-hour model read as a first-kind equation with a
    nonlinear (efficiency-switching) kernel.
    """
    f = soc.with_values(soc.values - soc.values[0], unit="")
    sol = vie.solve_vie_first_kind(ampere_hour_kernel(eta), f, opts)
    return sol.x.with_values(sol.x.values, unit=KW)


def linear_model_step(prev_soc: float, power: float, dt: float, params: BatteryParams) -> float:
    """One step of ``SOC(t) = SOC(t-1) + eta_eff * I_s(t) * dt``, clamped to the SoC window."""
    if params.r_bs is not None and abs(power) > params.r_bs * params.capacity_kwh * (1 + 1e-12):
        raise ConstraintError(
            f"|power| = {abs(power):.6g} kW exceeds r_bs * capacity = "
            f"{params.r_bs * params.capacity_kwh:.6g} kW"
        )
    eff = params.eta if power > 0 else 1.0
    nxt = prev_soc + eff * power * dt
    return min(max(nxt, params.e_min), params.e_max)


def efficiency_kernel(bus_power: SampledSeries, eta: float) -> vie.PiecewiseKernel:
    """Kernel mapping stored-side power ramps onto bus-side power.

    ``K(t, tau) = 1 / eta_eff(t)``, where ``eta_eff`` follows the sign of
    ``bus_power`` at node ``t``: charging loses ``1 - eta`` of the bus
    power, discharge is lossless. With this kernel the Volterra model
    reproduces the linear model step for step.
    """
    inv = 1.0 / effective_efficiency(bus_power.values, eta)
    t0, h, n = bus_power.grid.t0, bus_power.grid.h, bus_power.grid.n

    def factor(t, tau):
        idx = np.clip(np.rint((np.asarray(t, dtype=float) - t0) / h).astype(int), 0, n - 1)
        return inv[idx] + 0.0 * np.asarray(tau, dtype=float)

    return vie.PiecewiseKernel.single(factor)


def _project(v_cand: np.ndarray, grid: Grid, params: BatteryParams, initial_energy: float):
    h = grid.h
    v_max = params.v_max_kw
    e_min, e_max = params.e_min, params.e_max
    n = v_cand.size
    v = np.empty(n)
    E = np.empty(n)
    prev = initial_energy
    for k in range(n):
        vk = min(max(v_cand[k], -v_max), v_max)
        ek = prev + h * vk
        if ek > e_max:
            vk, ek = (e_max - prev) / h, e_max
        elif ek < e_min:
            vk, ek = (e_min - prev) / h, e_min
        v[k] = vk
        E[k] = ek
        prev = ek
    curtailed = np.maximum(v_cand - v, 0.0)
    deficit = np.maximum(v - v_cand, 0.0)
    return v, E, curtailed, deficit


def _dispatch_solution(v_cand: np.ndarray, grid: Grid, params: BatteryParams,
                       initial_energy: float, start, solution=None) -> DispatchSolution:
    if not params.e_min - 1e-9 <= initial_energy <= params.e_max + 1e-9:
        raise ConfigurationError(
            f"initial energy {initial_energy:.6g} kWh outside [{params.e_min:.6g}, {params.e_max:.6g}]"
        )
    v, E, cur, dfc = _project(v_cand, grid, params, initial_energy)
    if grid.n > 1:
        x_grid, x_vals = grid.midpoints(), np.diff(v) / grid.h
    else:
        # a single node has no interval; report one zero ramp after it
        x_grid, x_vals = Grid(grid.t0 + 0.5 * grid.h, grid.h, 1), np.zeros(1)
    return DispatchSolution(
        x=SampledSeries(x_grid, x_vals, KW_PER_H, start),
        v=SampledSeries(grid, v, KW, start),
        E=SampledSeries(grid, E, KWH, start),
        curtailed=SampledSeries(grid, cur, KW, start),
        deficit=SampledSeries(grid, dfc, KW, start),
        candidate_v=SampledSeries(grid, v_cand, KW, start),
        initial_energy=initial_energy,
        solution=solution,
    )


def project_constraints(x: SampledSeries, params: BatteryParams, initial_E: float,
                        v0: float = 0.0) -> DispatchSolution:
    """Project a power-change function onto the battery limits.

    Node by node: ``v = v0 + h * cumsum(x)`` is clipped to ``[-v_max, v_max]``
    and then truncated so that ``E`` stays in ``[E_min, E_max]``. Power
    removed while charging is reported as curtailed, while discharging as
    deficit. The returned ``x`` is the discrete derivative of the realised
    ``v``; ``v0`` is the power at the first node.
    """
    grid = x.grid.node_grid()
    v_cand = v0 + grid.h * np.concatenate(([0.0], np.cumsum(x.values)))
    return _dispatch_solution(v_cand, grid, params, initial_E, x.start)


def volterra_soc_solve(imbalance: SampledSeries, kernel: vie.PiecewiseKernel, params: BatteryParams,
                       initial_energy: float | None = None, alpha: float = 0.0,
                       opts: vie.SolverOpts | None = None) -> DispatchSolution:
    """Constrained Volterra storage model.

    The imbalance is shifted so that ``f(t0) = 0``, the first-kind equation
    (Lavrentiev-regularised when ``alpha > 0``) is solved for ``x``, and
    ``v = h * cumsum(x)`` gets the shifted baseline back as
    ``f(t0) / K(t_k, t_k)``. The resulting power is projected onto the
    battery limits.
    """
    e0 = params.initial_energy if initial_energy is None else float(initial_energy)
    grid = imbalance.grid
    f0 = float(imbalance.values[0])
    if grid.n == 1:
        v_cand = np.array([f0 / float(kernel.factor(grid.t0, grid.t0))])
        return _dispatch_solution(v_cand, grid, params, e0, imbalance.start)
    shifted = imbalance.with_values(imbalance.values - f0, unit="")
    if alpha > 0:
        sol = vie.solve_vie_lavrentiev(kernel, shifted, alpha, opts)
    else:
        sol = vie.solve_vie_first_kind(kernel, shifted, opts)
    diag = kernel.factor(grid.nodes, grid.nodes)
    base = f0 / diag
    v_cand = base + grid.h * np.concatenate(([0.0], np.cumsum(sol.x.values)))
    return _dispatch_solution(v_cand, grid, params, e0, imbalance.start, sol)


def count_cycles(E: SampledSeries, params: BatteryParams,
                 depth_threshold: float | None = None) -> CycleReport:
    """Threshold-filtered half-cycle count of a stored-energy trajectory.

    Turning points are confirmed once ``E`` moves back by at least
    ``depth_threshold`` (default 1% of capacity). The legs between the
    start, the confirmed turning points and the final extreme are the
    half-cycles; a record without any confirmed turning point (constant or
    monotone) has none.
    """
    thr = 0.01 * params.capacity_kwh if depth_threshold is None else depth_threshold
    vals = np.asarray(E.values, dtype=float)
    points = []
    direction = 0
    lo = hi = vals[0] if vals.size else 0.0
    cand = 0.0
    for v in vals[1:]:
        if direction == 0:
            lo, hi = min(lo, v), max(hi, v)
            if v - lo >= thr:
                points.append(lo)
                direction, cand = 1, v
            elif hi - v >= thr:
                points.append(hi)
                direction, cand = -1, v
        elif direction > 0:
            if v > cand:
                cand = v
            elif cand - v >= thr:
                points.append(cand)
                direction, cand = -1, v
        else:
            if v < cand:
                cand = v
            elif v - cand >= thr:
                points.append(cand)
                direction, cand = 1, v
    if direction != 0:
        points.append(cand)
    if len(points) < 3:
        return CycleReport(0.0, 0, 0.0)
    depths = np.abs(np.diff(points))
    cap = params.capacity_kwh
    return CycleReport(
        equivalent_full_cycles=float(depths.sum() / (2.0 * cap)),
        half_cycles=int(depths.size),
        mean_depth_of_discharge=float(min(depths.mean() / cap, 1.0)),
        depths=tuple(float(d) for d in depths),
    )


def estimate_lifetime(cycles_per_year: float, params: BatteryParams) -> float:
    """Years until the rated cycle count is used up."""
    if params.rated_cycles is None:
        raise ValueError("battery has no rated cycle life")
    if not cycles_per_year > 0 or not math.isfinite(cycles_per_year):
        raise ValueError(f"cycles_per_year must be positive, got {cycles_per_year}")
    return params.rated_cycles / cycles_per_year


def minimum_capacity(stored_power: SampledSeries) -> float:
    """Smallest energy buffer that covers every shortage of a stored-power profile.

    This is the largest drawdown of the cumulative stored energy, assuming
    surpluses can always be absorbed.
    """
    energy = stored_power.grid.h * np.cumsum(np.concatenate(([0.0], stored_power.values)))
    return float(np.max(np.maximum.accumulate(energy) - energy))

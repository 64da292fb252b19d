"""First-kind Volterra integral equations on a uniform grid.

Solves

    int_0^t K(t, tau, x(tau)) dtau = f(t)

for ``x`` by the midpoint rule: with nodes ``t_k`` and midpoints
``tau_j = t0 + (j - 1/2) h`` the discrete equations are

    h * sum_{j<=k} K(t_k, tau_j, x_j) = f(t_k),   k = 1..n-1,

solved by marching in ``k``. The kernel may be piecewise in ``tau`` with
jumps across curves ``tau = alpha_i(t)`` and may be nonlinear in ``x``
through per-segment factors ``G_i(tau, x)``.

Unknowns live on the midpoint grid (``f.grid.midpoints()``), so a
solution has one value fewer than its right-hand side.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .errors import (
    BracketError,
    GridMismatchError,
    HypothesisViolation,
    KernelEvaluationError,
    NonConvergenceError,
    SingularKernelError,
)
from .series import Grid, SampledSeries

log = logging.getLogger(__name__)

# Kernel blocks up to this many entries are assembled once and cached.
_MAX_CACHED_ENTRIES = 4_000_000
_BLOCK_ENTRIES = 1_000_000


def _zero(t):
    return 0.0 * np.asarray(t, dtype=float)


def _identity(t):
    return np.asarray(t, dtype=float)


@dataclass(frozen=True)
class KernelSegment:
    """One piece ``K_i(t, tau) * G_i(tau, x)`` of a piecewise kernel.

    ``factor`` must broadcast over numpy arrays of ``t`` and ``tau``.
    ``nonlinearity`` is ``None`` for the linear case ``G(tau, x) = x``.
    ``lipschitz`` bounds the nonlinear part of ``G`` in ``x`` (0 for linear
    segments); it only enters :func:`check_theorem1_condition`.
    """

    factor: Callable
    nonlinearity: Callable | None = None
    lipschitz: float = 0.0
    alpha_lower: Callable = _zero
    alpha_upper: Callable = _identity

    def __post_init__(self):
        if self.lipschitz < 0:
            raise ValueError("Lipschitz constant must be non-negative")

    @property
    def linear(self) -> bool:
        return self.nonlinearity is None


@dataclass(frozen=True)
class PiecewiseKernel:
    """Kernel made of segments ordered by their ``tau`` ranges.

    Segment ``i`` covers ``alpha_{i-1}(t) <= tau < alpha_i(t)``; the first
    segment starts at 0 and the last one ends at ``t`` (closed). Only the
    ``alpha_upper`` of segments ``0..n-2`` are used as boundaries.
    """

    segments: tuple[KernelSegment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("a kernel needs at least one segment")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, value: float) -> PiecewiseKernel:
        return cls((KernelSegment(lambda t, tau, _v=float(value): _v + 0.0 * (t - tau)),))

    @classmethod
    def single(cls, factor: Callable, nonlinearity: Callable | None = None,
               lipschitz: float = 0.0) -> PiecewiseKernel:
        return cls((KernelSegment(factor, nonlinearity, lipschitz),))

    @property
    def linear(self) -> bool:
        return all(s.linear for s in self.segments)

    def boundaries(self, t) -> list[np.ndarray]:
        """Interior boundaries ``alpha_1(t), ..., alpha_{n-1}(t)``."""
        return [np.asarray(s.alpha_upper(t), dtype=float) for s in self.segments[:-1]]

    def segment_index(self, t, tau) -> np.ndarray:
        """Index of the segment containing ``(t, tau)``; broadcasts."""
        t = np.asarray(t, dtype=float)
        tau = np.asarray(tau, dtype=float)
        idx = np.zeros(np.broadcast(t, tau).shape, dtype=np.intp)
        for b in self.boundaries(t):
            idx += tau >= b
        return idx

    def factor(self, t, tau) -> np.ndarray:
        """``K_i(t, tau)`` of the segment containing each point."""
        t = np.asarray(t, dtype=float)
        tau = np.asarray(tau, dtype=float)
        shape = np.broadcast(t, tau).shape
        if len(self.segments) == 1:
            return np.broadcast_to(
                np.asarray(self.segments[0].factor(t, tau), dtype=float), shape
            ).copy()
        idx = self.segment_index(t, tau)
        out = np.zeros(shape)
        for i, seg in enumerate(self.segments):
            mask = idx == i
            if mask.any():
                vals = np.broadcast_to(np.asarray(seg.factor(t, tau), dtype=float), shape)
                out[mask] = vals[mask]
        return out

    def __call__(self, t, tau, x) -> np.ndarray:
        """Full kernel value ``K(t, tau, x)``."""
        t = np.asarray(t, dtype=float)
        tau = np.asarray(tau, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast(t, tau, x).shape
        idx = np.broadcast_to(self.segment_index(t, tau), shape)
        fac = np.broadcast_to(self.factor(t, tau), shape)
        g = np.broadcast_to(x, shape).astype(float)
        for i, seg in enumerate(self.segments):
            if seg.nonlinearity is None:
                continue
            mask = idx == i
            if mask.any():
                gi = np.broadcast_to(np.asarray(seg.nonlinearity(tau, x), dtype=float), shape)
                g[mask] = gi[mask]
        return fac * g

    def check_nesting(self, grid: Grid) -> None:
        """Check ``0 <= alpha_1(t) <= ... <= alpha_{n-1}(t) <= t`` on the grid nodes."""
        t = grid.nodes
        prev = np.zeros_like(t)
        for i, b in enumerate(self.boundaries(t), start=1):
            b = np.broadcast_to(b, t.shape)
            if np.any(b < prev - 1e-12) or np.any(b > t + 1e-12):
                raise HypothesisViolation(f"boundary alpha_{i} leaves [alpha_{i - 1}(t), t] on the grid")
            prev = b


@dataclass(frozen=True)
class SolverOpts:
    node_tol: float = 1e-10
    max_iters: int = 50
    diag_eps: float | None = None   # None: 1e-12 * sup|K| over the grid
    bisect_max_iters: int = 200


@dataclass(frozen=True)
class AlphaSearchOpts:
    """Bracket and tolerances for the discrepancy search.

    With ``scale_by_grid`` the bracket is measured in units of ``h * sup|K|``.
    """

    alpha_lo: float = 1e-8
    alpha_hi: float = 1e2
    c: float = 1.0
    rtol: float = 1e-3
    scale_by_grid: bool = True


@dataclass(frozen=True)
class Solution:
    x: SampledSeries
    residual: float               # discrete L2 norm of the defect
    residual_sup: float
    iterations_per_node: np.ndarray = field(repr=False)
    alpha: float = 0.0


@dataclass(frozen=True)
class ConditionReport:
    lhs: float
    satisfied: bool
    per_segment_terms: list
    violations: list[str] = field(default_factory=list)


class _Discretisation:
    """Kernel factors and segment indices on the (node, midpoint) lattice.

    Row ``k`` holds ``K_i(t_k, tau_j)`` for ``j = 1..k`` in columns ``0..k-1``.
    """

    def __init__(self, kernel: PiecewiseKernel, grid: Grid):
        if grid.n < 2:
            raise ValueError("need at least two nodes")
        kernel.check_nesting(grid)
        self.kernel = kernel
        self.grid = grid
        self.n = grid.n
        self.nodes = grid.nodes
        self.mid = grid.midpoints().nodes
        self.rows_per_block = max(1, _BLOCK_ENTRIES // max(1, self.n - 1))
        self._cache = None
        if self.n * (self.n - 1) <= _MAX_CACHED_ENTRIES:
            self._cache = [self._block(0, self.n)]
        self.sup = max(float(np.max(np.abs(f), initial=0.0)) for _, f, _ in self.blocks())

    def _block(self, k0: int, k1: int):
        t = self.nodes[k0:k1, None]
        tau = self.mid[None, :]
        fac = self.kernel.factor(t, tau)
        seg = self.kernel.segment_index(t, tau)
        rows = np.arange(k0, k1)[:, None]
        cols = np.arange(self.n - 1)[None, :]
        upper = cols >= rows
        fac[upper] = 0.0
        if not np.all(np.isfinite(fac)):
            bad = np.argwhere(~np.isfinite(fac))[0]
            raise KernelEvaluationError(float(self.nodes[k0 + bad[0]]), float(self.mid[bad[1]]))
        return k0, fac, seg

    def blocks(self):
        if self._cache is not None:
            yield from self._cache
            return
        for k0 in range(0, self.n, self.rows_per_block):
            yield self._block(k0, min(self.n, k0 + self.rows_per_block))

    def diag_threshold(self, opts: SolverOpts) -> float:
        if opts.diag_eps is not None:
            return opts.diag_eps
        return 1e-12 * self.sup

    def g_values(self, x: np.ndarray) -> np.ndarray:
        """``G_i(tau_j, x_j)`` for every segment ``i`` (rows) and midpoint ``j``."""
        out = np.empty((len(self.kernel.segments), x.size))
        for i, seg in enumerate(self.kernel.segments):
            out[i] = x if seg.nonlinearity is None else np.asarray(seg.nonlinearity(self.mid[: x.size], x), float)
        return out


def _rhs_values(f: SampledSeries | np.ndarray) -> np.ndarray:
    return np.asarray(f.values if isinstance(f, SampledSeries) else f, dtype=float)


def _apply(disc: _Discretisation, x: np.ndarray) -> np.ndarray:
    h = disc.grid.h
    out = np.zeros(disc.n)
    if disc.kernel.linear:
        for k0, fac, _ in disc.blocks():
            out[k0:k0 + fac.shape[0]] = h * (fac @ x)
        return out
    g = disc.g_values(x)
    for k0, fac, seg in disc.blocks():
        gsel = np.take_along_axis(g, seg, axis=0) if g.shape[0] > 1 else np.broadcast_to(g, fac.shape)
        vals = fac * gsel
        out[k0:k0 + fac.shape[0]] = h * vals.sum(axis=1)
    if not np.all(np.isfinite(out)):
        k = int(np.argmax(~np.isfinite(out)))
        raise KernelEvaluationError(float(disc.nodes[k]), float(disc.mid[max(k - 1, 0)]))
    return out


def forward_apply(kernel: PiecewiseKernel, x: SampledSeries) -> SampledSeries:
    """Midpoint-rule image ``f(t_k) = h sum_{j<=k} K(t_k, tau_j, x_j)``; ``f(t_0) = 0``.

    ``x`` must be sampled at midpoints; the result lives on the matching
    node grid (one value longer).
    """
    grid = x.grid.node_grid()
    disc = _Discretisation(kernel, grid)
    return SampledSeries(grid, _apply(disc, np.asarray(x.values)), "", x.start)


def _check_pair(x: SampledSeries, f: SampledSeries) -> None:
    if f.grid.n < 2 or not x.grid.same_as(f.grid.midpoints()):
        raise GridMismatchError(
            f"x must live on the midpoints of the rhs grid {f.grid}, got {x.grid}"
        )


def _l2(r: np.ndarray, h: float) -> float:
    return math.sqrt(h * float(np.dot(r, r)))


def residual_norm(kernel: PiecewiseKernel, x: SampledSeries, f: SampledSeries) -> float:
    """Discrete L2 norm ``sqrt(h sum_k r_k^2)`` of ``forward_apply(kernel, x) - f``."""
    _check_pair(x, f)
    disc = _Discretisation(kernel, f.grid)
    r = _apply(disc, np.asarray(x.values)) - f.values
    return _l2(r, f.grid.h)


def _march_linear(disc: _Discretisation, f: np.ndarray, alpha: float, opts: SolverOpts) -> np.ndarray:
    h = disc.grid.h
    x = np.zeros(disc.n - 1)
    eps = disc.diag_threshold(opts)
    for k0, fac, _ in disc.blocks():
        for r in range(fac.shape[0]):
            k = k0 + r
            if k == 0:
                continue
            row = fac[r]
            diag = alpha + h * row[k - 1]
            # first kind: guard the kernel value itself; regularised: the full pivot
            guard = row[k - 1] if alpha == 0 else diag
            if abs(guard) < eps or guard == 0 or not math.isfinite(diag):
                raise SingularKernelError(k, guard, eps)
            acc = h * float(np.dot(row[: k - 1], x[: k - 1]))
            x[k - 1] = (f[k] - acc) / diag
    return x


def _node_solve(phi: Callable[[float], float], x0: float, opts: SolverOpts, node: int,
                partial: np.ndarray) -> tuple[float, int]:
    """Scalar root of ``phi`` by secant-corrected fixed-point steps, bisection on stagnation."""
    tol = opts.node_tol
    x_prev = x0
    r_prev = phi(x_prev)
    if r_prev == 0.0:
        return x_prev, 0
    step = 1e-6 * (1.0 + abs(x0))
    x_cur = x0 + step
    r_cur = phi(x_cur)
    best = min(abs(r_prev), abs(r_cur))
    stalls = 0
    for it in range(1, opts.max_iters + 1):
        if not (math.isfinite(r_cur) and math.isfinite(r_prev)):
            break
        dr = r_cur - r_prev
        if dr == 0.0:
            if r_cur == 0.0:
                return x_cur, it
            break
        x_next = x_cur - r_cur * (x_cur - x_prev) / dr
        if not math.isfinite(x_next):
            break
        x_prev, r_prev = x_cur, r_cur
        x_cur = x_next
        r_cur = phi(x_cur)
        if abs(x_cur - x_prev) <= tol * (1.0 + abs(x_cur)) or r_cur == 0.0:
            return x_cur, it
        if abs(r_cur) < 0.5 * best:
            best = abs(r_cur)
            stalls = 0
        else:
            stalls += 1
            if stalls >= 3:
                break
    else:
        raise NonConvergenceError(node, opts.max_iters, partial)

    log.debug("node %d: secant stagnated, switching to bisection", node)
    centre = x0 if math.isfinite(x0) else 0.0
    r_c = phi(centre)
    width = 1.0 + abs(centre)
    lo = hi = None
    for _ in range(80):
        a, b = centre - width, centre + width
        ra, rb = phi(a), phi(b)
        if math.isfinite(ra) and math.isfinite(r_c) and ra * r_c <= 0:
            lo, hi, r_lo = a, centre, ra
            break
        if math.isfinite(rb) and math.isfinite(r_c) and rb * r_c <= 0:
            lo, hi, r_lo = centre, b, r_c
            break
        width *= 2.0
    if lo is None:
        raise NonConvergenceError(node, opts.max_iters, partial)
    for it in range(opts.bisect_max_iters):
        mid = 0.5 * (lo + hi)
        r_mid = phi(mid)
        if r_mid == 0.0 or (hi - lo) <= tol * (1.0 + abs(mid)):
            return mid, opts.max_iters + it
        if (r_mid < 0) == (r_lo < 0):
            lo, r_lo = mid, r_mid
        else:
            hi = mid
    raise NonConvergenceError(node, opts.max_iters + opts.bisect_max_iters, partial)


def _march_nonlinear(disc: _Discretisation, f: np.ndarray, opts: SolverOpts):
    h = disc.grid.h
    m = disc.n - 1
    x = np.zeros(m)
    iters = np.zeros(m, dtype=int)
    nseg = len(disc.kernel.segments)
    g = np.zeros((nseg, m))
    eps = disc.diag_threshold(opts)
    segs = disc.kernel.segments
    for k0, fac, seg in disc.blocks():
        for r in range(fac.shape[0]):
            k = k0 + r
            if k == 0:
                continue
            row = fac[r]
            j = k - 1
            d = row[j]
            if abs(d) < eps or d == 0:
                raise SingularKernelError(k, d, eps)
            if nseg == 1:
                acc = h * float(np.dot(row[:j], g[0, :j]))
            else:
                acc = h * float(np.dot(row[:j], g[seg[r, :j], np.arange(j)]))
            sd = segs[seg[r, j]]
            tau = disc.mid[j]
            if sd.nonlinearity is None:
                xj, n_it = (f[k] - acc) / (h * d), 0
            else:
                def phi(v, _g=sd.nonlinearity, _tau=tau, _d=d, _acc=acc, _fk=f[k]):
                    return h * _d * float(_g(_tau, v)) + _acc - _fk
                x0 = x[j - 1] if j > 0 else 0.0
                xj, n_it = _node_solve(phi, x0, opts, k, x[:j].copy())
            x[j] = xj
            iters[j] = n_it
            for i, s in enumerate(segs):
                g[i, j] = xj if s.nonlinearity is None else float(s.nonlinearity(tau, xj))
    return x, iters


def _finish(disc: _Discretisation, f: SampledSeries, x: np.ndarray, iters, alpha: float) -> Solution:
    r = _apply(disc, x) - f.values
    xs = SampledSeries(f.grid.midpoints(), x, "", f.start)
    return Solution(xs, _l2(r, f.grid.h), float(np.max(np.abs(r))), np.asarray(iters), alpha)


def _check_rhs(f: SampledSeries) -> None:
    if f.grid.n < 2:
        raise ValueError("right-hand side needs at least two nodes")
    scale = max(1.0, float(np.max(np.abs(f.values))))
    if abs(f.values[0]) > 1e-12 * scale:
        raise HypothesisViolation(f"f(t0) must vanish, got {f.values[0]!r}")


def solve_vie_first_kind(kernel: PiecewiseKernel, f: SampledSeries,
                         opts: SolverOpts | None = None) -> Solution:
    """Solve ``int_0^t K(t, tau, x) dtau = f`` by midpoint marching.

    Raises
    ------
    SingularKernelError
        If the diagonal kernel factor is (numerically) zero at some node.
    NonConvergenceError
        If a nonlinear node equation cannot be solved; ``.partial`` holds
        the values found before the failing node.
    """
    opts = opts or SolverOpts()
    _check_rhs(f)
    disc = _Discretisation(kernel, f.grid)
    fv = np.asarray(f.values)
    if kernel.linear:
        x = _march_linear(disc, fv, 0.0, opts)
        iters = np.zeros(x.size, dtype=int)
    else:
        x, iters = _march_nonlinear(disc, fv, opts)
    return _finish(disc, f, x, iters, 0.0)


def solve_vie_lavrentiev(kernel: PiecewiseKernel, f: SampledSeries, alpha: float,
                         opts: SolverOpts | None = None) -> Solution:
    """Solve the regularised equation ``alpha x + int_0^t K x dtau = f``.

    ``alpha = 0`` reproduces :func:`solve_vie_first_kind` exactly. Linear
    kernels only. ``f(t0)`` need not vanish when ``alpha > 0``.
    """
    if alpha < 0 or not math.isfinite(alpha):
        raise ValueError(f"alpha must be a finite non-negative number, got {alpha}")
    if not kernel.linear:
        raise ValueError("Lavrentiev regularisation is implemented for linear kernels only")
    if alpha == 0:
        return solve_vie_first_kind(kernel, f, opts)
    opts = opts or SolverOpts()
    if f.grid.n < 2:
        raise ValueError("right-hand side needs at least two nodes")
    disc = _Discretisation(kernel, f.grid)
    return _lavrentiev(disc, f, alpha, opts)


def _lavrentiev(disc: _Discretisation, f: SampledSeries, alpha: float, opts: SolverOpts) -> Solution:
    x = _march_linear(disc, np.asarray(f.values), alpha, opts)
    return _finish(disc, f, x, np.zeros(x.size, dtype=int), alpha)


def select_alpha_discrepancy(kernel: PiecewiseKernel, f: SampledSeries, delta: float,
                             search: AlphaSearchOpts | None = None,
                             opts: SolverOpts | None = None) -> float:
    """Regularisation parameter by the discrepancy principle.

    Finds ``alpha`` with ``residual_norm(x_alpha) = c * delta`` by bisection
    in ``log(alpha)`` on the bracket of ``search``. The residual grows with
    ``alpha``; if it already exceeds the target at the lower end, the lower
    end is returned.

    Parameters
    ----------
    delta : float
        Noise level of ``f`` in the discrete L2 norm.

    Raises
    ------
    BracketError
        If even the upper bracket end leaves the residual below ``c * delta``.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    search = search or AlphaSearchOpts()
    opts = opts or SolverOpts()
    if not 0 < search.alpha_lo < search.alpha_hi:
        raise ValueError("alpha bracket must satisfy 0 < alpha_lo < alpha_hi")
    disc = _Discretisation(kernel, f.grid)
    unit = f.grid.h * disc.sup if search.scale_by_grid else 1.0
    lo, hi = search.alpha_lo * unit, search.alpha_hi * unit
    target = search.c * delta

    def res(a: float) -> float:
        return _lavrentiev(disc, f, a, opts).residual

    r_lo = res(lo)
    if r_lo >= target:
        return lo
    r_hi = res(hi)
    if r_hi < target:
        raise BracketError(lo, hi, r_lo, r_hi, target)
    log_alpha = optimize.bisect(
        lambda s: res(math.exp(s)) - target, math.log(lo), math.log(hi),
        xtol=math.log1p(search.rtol), maxiter=200,
    )
    return math.exp(log_alpha)


def check_theorem1_condition(kernel: PiecewiseKernel,
                             alpha_derivatives_at_0: Sequence[float]) -> ConditionReport:
    """Evaluate the local solvability condition for a jump-discontinuous kernel.

    ``lhs = q_n + sum_{i<n} alpha_i'(0) |K_n(0,0)^{-1} (K_i(0,0) - K_{i+1}(0,0))| (1 + q_i)``
    and the condition holds iff ``lhs < 1``. Kernel factors are evaluated
    at the scalar point ``(0, 0)`` without numpy conversion, so exact
    (e.g. ``Fraction``) arithmetic carries through.
    """
    segs = kernel.segments
    n = len(segs)
    derivs = list(alpha_derivatives_at_0)
    if len(derivs) != n - 1:
        raise ValueError(f"expected {n - 1} boundary derivatives, got {len(derivs)}")
    k00 = [s.factor(0, 0) for s in segs]
    if k00[-1] == 0:
        raise HypothesisViolation("K_n(0,0) must be non-zero")
    violations = []
    for i, s in enumerate(segs[:-1], start=1):
        if s.alpha_upper(0) != 0:
            violations.append(f"alpha_{i}(0) != 0")
        if derivs[i - 1] < 0:
            violations.append(f"alpha_{i}'(0) < 0")
    terms = [
        derivs[i] * abs((k00[i] - k00[i + 1]) / k00[-1]) * (1 + segs[i].lipschitz)
        for i in range(n - 1)
    ]
    lhs = segs[-1].lipschitz + sum(terms)
    if isinstance(lhs, np.generic):
        lhs = lhs.item()
        terms = [float(v) for v in terms]
    return ConditionReport(lhs, bool(lhs < 1), terms, violations)

"""Uniform time grids and the sampled series that live on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import GridMismatchError, UnitMismatchError

#: unit tags used across the package
KW = "kW"
KWH = "kWh"
KW_PER_H = "kW/h"

_GRID_RTOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_k = t0 + k*h`` for ``k = 0..n-1`` (times in hours)."""

    t0: float
    h: float
    n: int

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"grid step must be positive and finite, got {self.h}")
        if self.n < 1:
            raise ValueError(f"grid needs at least one node, got n={self.n}")
        if not math.isfinite(self.t0):
            raise ValueError("grid origin must be finite")

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n)

    @property
    def t_end(self) -> float:
        return self.t0 + self.h * (self.n - 1)

    def midpoints(self) -> Grid:
        """Grid of the ``n - 1`` interval midpoints ``t0 + (j - 1/2) h``, ``j = 1..n-1``."""
        if self.n < 2:
            raise ValueError("a single-node grid has no midpoints")
        return Grid(self.t0 + 0.5 * self.h, self.h, self.n - 1)

    def node_grid(self) -> Grid:
        """Inverse of :meth:`midpoints`: the node grid whose midpoints are this grid."""
        return Grid(self.t0 - 0.5 * self.h, self.h, self.n + 1)

    def same_as(self, other: Grid) -> bool:
        if self.n != other.n:
            return False
        scale = max(abs(self.h), abs(self.t0), abs(other.t0), 1.0)
        return (
            abs(self.h - other.h) <= _GRID_RTOL * self.h
            and abs(self.t0 - other.t0) <= _GRID_RTOL * scale
        )

    def require_same(self, other: Grid, what: str = "series") -> None:
        if not self.same_as(other):
            raise GridMismatchError(f"{what} grids differ: {self} vs {other}")

    @classmethod
    def span(cls, t0: float, t1: float, h: float) -> Grid:
        """Grid covering ``[t0, t1]`` with step ``h`` (``(t1 - t0)/h`` rounded)."""
        steps = round((t1 - t0) / h)
        return cls(t0, h, steps + 1)


@dataclass(frozen=True)
class SampledSeries:
    """Values on a :class:`Grid` with a unit tag.

    ``start`` optionally anchors ``t = 0`` to a wall-clock UTC time; it is
    used for timestamps on output and for month lookup.
    """

    grid: Grid
    values: np.ndarray
    unit: str = ""
    start: datetime | None = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 1 or arr.shape[0] != self.grid.n:
            raise GridMismatchError(
                f"expected {self.grid.n} values for {self.grid}, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("series values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.grid.n

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes

    def with_values(self, values, unit: str | None = None) -> SampledSeries:
        return SampledSeries(self.grid, values, self.unit if unit is None else unit, self.start)

    def timestamps(self) -> list[datetime] | None:
        if self.start is None:
            return None
        return [self.start + timedelta(hours=float(t)) for t in self.grid.nodes]

    def require_compatible(self, other: SampledSeries, what: str = "series") -> None:
        self.grid.require_same(other.grid, what)
        require_same_unit(self, other)

    @classmethod
    def from_function(cls, grid: Grid, fn, unit: str = "") -> SampledSeries:
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float) * np.ones(grid.n), unit)


def require_same_unit(a: SampledSeries, b: SampledSeries) -> None:
    if a.unit != b.unit:
        raise UnitMismatchError(f"cannot combine series in {a.unit!r} with series in {b.unit!r}")

from datetime import datetime, timezone

import numpy as np
import pytest

from volterra_storage.errors import GridMismatchError, UnitMismatchError
from volterra_storage.series import KW, KWH, Grid, SampledSeries, require_same_unit


def test_grid_nodes_and_midpoints():
    g = Grid(0.0, 0.5, 5)
    np.testing.assert_allclose(g.nodes, [0, 0.5, 1, 1.5, 2])
    np.testing.assert_allclose(g.midpoints().nodes, [0.25, 0.75, 1.25, 1.75])
    assert g.midpoints().node_grid().same_as(g)
    assert g.t_end == 2.0


@pytest.mark.parametrize("h,n", [(0.0, 3), (-1.0, 3), (float("nan"), 3), (1.0, 0)])
def test_grid_validation(h, n):
    with pytest.raises(ValueError):
        Grid(0.0, h, n)


def test_single_node_grid_has_no_midpoints():
    with pytest.raises(ValueError):
        Grid(0.0, 1.0, 1).midpoints()


def test_span():
    g = Grid.span(0.0, 1.0, 1e-3)
    assert g.n == 1001
    assert g.t_end == pytest.approx(1.0)


def test_series_is_immutable_copy():
    vals = np.array([1.0, 2.0])
    s = SampledSeries(Grid(0, 1, 2), vals, KW)
    vals[0] = 99
    assert s.values[0] == 1.0
    with pytest.raises(ValueError):
        s.values[0] = 5.0


def test_series_validation():
    with pytest.raises(GridMismatchError):
        SampledSeries(Grid(0, 1, 3), [1.0, 2.0])
    with pytest.raises(ValueError):
        SampledSeries(Grid(0, 1, 2), [1.0, float("inf")])


def test_units_cannot_mix():
    a = SampledSeries(Grid(0, 1, 2), [1, 2], KW)
    b = SampledSeries(Grid(0, 1, 2), [1, 2], KWH)
    with pytest.raises(UnitMismatchError):
        require_same_unit(a, b)
    with pytest.raises(UnitMismatchError):
        a.require_compatible(b)


def test_timestamps():
    start = datetime(2021, 3, 1, tzinfo=timezone.utc)
    s = SampledSeries(Grid(0, 1, 3), [0, 0, 0], KW, start)
    assert [t.hour for t in s.timestamps()] == [0, 1, 2]
    assert SampledSeries(Grid(0, 1, 1), [0.0]).timestamps() is None

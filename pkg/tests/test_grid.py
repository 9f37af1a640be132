"""
Tests for grids, fields and the per-path random streams.
"""
import numpy as np
import pytest

from sbm_lab.core.errors import PreconditionError
from sbm_lab.numerics.grid import Field, Grid1D, atoms_field
from sbm_lab.utils.parallel import chunked, map_ordered
from sbm_lab.utils.rng import Stream, path_stream


def test_grid_geometry():
    grid = Grid1D(1.0, 21)
    assert grid.dx == pytest.approx(0.1)
    assert grid.nodes[0] == -1.0 and grid.nodes[-1] == pytest.approx(1.0)
    assert grid.nearest_index(0.0) == 10
    assert grid.nearest_index(5.0) == 20
    assert grid.refined().dx == pytest.approx(0.05)


def test_grid_rejects_bad_shapes():
    with pytest.raises(PreconditionError):
        Grid1D(1.0, 2)
    with pytest.raises(PreconditionError):
        Grid1D(1.0, 11, "periodic")


def test_field_is_nonnegative_and_frozen():
    grid = Grid1D(1.0, 5)
    with pytest.raises(PreconditionError):
        Field(grid, [0, 1, -1, 0, 0])
    field = Field(grid, [0, 1, 2, 1, 0])
    with pytest.raises(ValueError):
        field.values[0] = 1.0


def test_indicator_mass_within_dx(coarse_grid):
    field = Field.indicator(coarse_grid, -1.0, 1.0)
    assert abs(field.mass() - 2.0) <= coarse_grid.dx + 1e-12


def test_delta_carries_mass(coarse_grid):
    field = Field.delta(coarse_grid, 0.3, 2.5)
    assert field.mass() == pytest.approx(2.5)
    assert np.count_nonzero(field.values) == 1


def test_atoms_field(coarse_grid):
    field = atoms_field(coarse_grid, [(0.0, 1.0), (1.0, 0.5)])
    assert field.mass() == pytest.approx(1.5)


def test_streams_are_keyed_by_path_and_purpose():
    a = path_stream(7, 3, Stream.SPDE).standard_normal(4)
    b = path_stream(7, 3, Stream.SPDE).standard_normal(4)
    c = path_stream(7, 4, Stream.SPDE).standard_normal(4)
    d = path_stream(7, 3, Stream.DUAL).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_chunked_and_map_ordered():
    chunks = chunked(range(10), 4)
    assert [list(c) for c in chunks] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
    assert map_ordered(sum, chunks) == [6, 22, 17]
    with pytest.raises(ValueError):
        chunked(range(3), 0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reefmap.errors import DegenerateExtent, InputError, NonPositiveSpacing, UnknownClass
from reefmap.grids import (
    UNLABELED,
    ClassCatalog,
    GridSpec,
    LabelRaster,
    ProbabilityRaster,
    grid_from_extent,
    world_to_pixel,
)


def test_grid_from_extent_exact_division():
    g = grid_from_extent(0, 0, 10, 10, 1.0)
    assert (g.width, g.height) == (10, 10)
    assert (g.origin_x, g.origin_y) == (0, 10)


def test_grid_from_extent_rounds_up():
    g = grid_from_extent(0, 0, 10.2, 10, 1.0)
    assert (g.width, g.height) == (11, 10)


def test_grid_from_extent_rejects_zero_spacing():
    with pytest.raises(NonPositiveSpacing):
        grid_from_extent(0, 0, 10, 10, 0.0)


def test_grid_from_extent_rejects_zero_area():
    with pytest.raises(DegenerateExtent):
        grid_from_extent(0, 0, 0, 10, 1.0)


def test_world_to_pixel_interior():
    g = GridSpec(origin_x=100.0, origin_y=200.0, spacing=0.5, width=20, height=20)
    assert world_to_pixel(g, 101.3, 198.9) == (2, 2)


def test_world_to_pixel_origin_is_included():
    g = GridSpec(origin_x=100.0, origin_y=200.0, spacing=0.5, width=20, height=20)
    assert world_to_pixel(g, 100.0, 200.0) == (0, 0)


def test_world_to_pixel_outside():
    g = GridSpec(origin_x=100.0, origin_y=200.0, spacing=0.5, width=20, height=20)
    assert world_to_pixel(g, 99.9, 198.9) is None


grids = st.builds(
    GridSpec,
    origin_x=st.floats(-1e5, 1e5),
    origin_y=st.floats(-1e5, 1e5),
    spacing=st.floats(0.01, 100.0),
    width=st.integers(1, 50),
    height=st.integers(1, 50),
)


@given(grid=grids, data=st.data())
@settings(max_examples=200)
def test_pixel_center_round_trips(grid, data):
    col = data.draw(st.integers(0, grid.width - 1))
    row = data.draw(st.integers(0, grid.height - 1))
    x, y = grid.pixel_center(col, row)
    assert world_to_pixel(grid, x, y) == (col, row)


@given(data=st.data())
@settings(max_examples=200)
def test_extent_coverage_half_open_box(data):
    min_x = data.draw(st.floats(-1e4, 1e4))
    min_y = data.draw(st.floats(-1e4, 1e4))
    dx = data.draw(st.floats(0.1, 500.0))
    dy = data.draw(st.floats(0.1, 500.0))
    spacing = data.draw(st.floats(0.05, 50.0))
    g = grid_from_extent(min_x, min_y, min_x + dx, min_y + dy, spacing)
    # sample the half-open box [min_x, max_x) x (min_y, max_y]
    fx = data.draw(st.floats(0.0, 1.0, exclude_max=True))
    fy = data.draw(st.floats(0.0, 1.0, exclude_max=True))
    x = min_x + fx * dx
    y = (min_y + dy) - fy * dy
    assert world_to_pixel(g, x, y) is not None


def test_gridspec_rejects_bad_shape():
    with pytest.raises(DegenerateExtent):
        GridSpec(origin_x=0, origin_y=0, spacing=1.0, width=0, height=5)


def test_grid_extent_and_centers():
    g = GridSpec(origin_x=2.0, origin_y=8.0, spacing=2.0, width=3, height=2)
    assert g.extent == (2.0, 4.0, 8.0, 8.0)
    xs, ys = g.center_axes()
    assert xs.tolist() == [3.0, 5.0, 7.0]
    assert ys.tolist() == [7.0, 5.0]
    assert g.pixel_center(0, 0) == (3.0, 7.0)


def test_default_catalog():
    cat = ClassCatalog.default()
    assert cat.names == ("Sand", "Acropora Branching", "Acropora Tabular",
                         "Non-acropora Massive", "Other Corals")
    cat6 = ClassCatalog.default(include_sea_cucumber=True)
    assert len(cat6) == 6
    assert cat6.names[5] == "Sea Cucumber"


def test_catalog_round_trips_through_json(catalog6):
    assert ClassCatalog.from_json(catalog6.to_json()) == catalog6


def test_catalog_rejects_gaps():
    from reefmap.grids import ClassDef

    with pytest.raises(UnknownClass):
        ClassCatalog((ClassDef(0, "a", (0, 0, 0)), ClassDef(2, "b", (1, 1, 1))))


def test_catalog_check_class(catalog):
    catalog.check_class(4)
    with pytest.raises(UnknownClass):
        catalog.check_class(5)


def test_probability_raster_accepts_flat_row_major(unit_grid):
    vals = np.arange(100, dtype=np.float64) / 100.0
    r = ProbabilityRaster(grid=unit_grid, class_id=0, values=vals)
    assert r.values.shape == (10, 10)
    assert r.values[1, 0] == 0.10  # row-major order


def test_probability_raster_rejects_wrong_size(unit_grid):
    with pytest.raises(InputError):
        ProbabilityRaster(grid=unit_grid, class_id=0, values=np.zeros(99))


def test_label_raster_catalog_check(unit_grid, catalog):
    arr = np.zeros((10, 10), dtype=np.uint8)
    arr[0, 0] = UNLABELED
    LabelRaster(grid=unit_grid, labels=arr).check_catalog(catalog)
    arr[0, 1] = 9
    with pytest.raises(UnknownClass):
        LabelRaster(grid=unit_grid, labels=arr).check_catalog(catalog)


def test_rasters_are_immutable(unit_grid):
    r = ProbabilityRaster(grid=unit_grid, class_id=0, values=np.zeros((10, 10)))
    with pytest.raises(ValueError):
        r.values[0, 0] = 1.0

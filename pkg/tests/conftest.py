import io
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reefmap.grids import ClassCatalog, GridSpec, LabelRaster


@pytest.fixture
def catalog():
    return ClassCatalog.default()


@pytest.fixture
def catalog6():
    return ClassCatalog.default(include_sea_cucumber=True)


@pytest.fixture
def unit_grid():
    """10x10 grid over [0,10]^2, spacing 1."""
    return GridSpec(origin_x=0.0, origin_y=10.0, spacing=1.0, width=10, height=10)


def make_labels(array, spacing=1.0, origin=(0.0, None)):
    arr = np.asarray(array, dtype=np.uint8)
    h, w = arr.shape
    oy = origin[1] if origin[1] is not None else h * spacing
    grid = GridSpec(origin_x=origin[0], origin_y=oy, spacing=spacing, width=w, height=h)
    return LabelRaster(grid=grid, labels=arr)


def point_csv(catalog, rows, coord_cols=("x", "y")):
    """Build an in-memory point-CSV stream from (session, seq, x, y, probs) rows."""
    header = ["session_id", "seq", *coord_cols] + [f"prob_{n}" for n in catalog.names]
    lines = [",".join(header)]
    for sid, seq, x, y, probs in rows:
        lines.append(",".join([sid, str(seq), repr(x), repr(y)] + [repr(p) for p in probs]))
    return io.StringIO("\n".join(lines) + "\n")

import json

import numpy as np
import pytest

from reefmap import grf
from reefmap.errors import InputError
from reefmap.grids import GridSpec, LabelRaster, ProbabilityRaster

SIDECAR_KEYS = {"crs_tag", "origin_x", "origin_y", "spacing", "width", "height",
                "dtype", "nodata"}


@pytest.fixture
def prob_raster(unit_grid=None):
    grid = GridSpec(origin_x=3.0, origin_y=7.0, spacing=0.25, width=8, height=6,
                    crs_tag="utm40s")
    rng = np.random.default_rng(1)
    vals = rng.random((6, 8))
    vals[0, 0] = np.nan
    return ProbabilityRaster(grid=grid, class_id=2, values=vals)


def test_probability_round_trip(tmp_path, prob_raster):
    path = tmp_path / "p.grf"
    grf.write_probability(path, prob_raster)
    back = grf.read_probability(path, class_id=2)
    assert back.grid == prob_raster.grid
    # float32 payload: compare at storage precision
    np.testing.assert_array_equal(
        back.values.astype(np.float32), prob_raster.values.astype(np.float32))
    assert np.isnan(back.values[0, 0])


def test_label_round_trip(tmp_path, catalog):
    grid = GridSpec(origin_x=0.0, origin_y=4.0, spacing=1.0, width=5, height=4)
    arr = np.arange(20, dtype=np.uint8).reshape(4, 5) % 5
    arr[3, 4] = 255
    raster = LabelRaster(grid=grid, labels=arr)
    path = tmp_path / "l.grf"
    grf.write_labels(path, raster)
    back = grf.read_labels(path)
    assert back.grid == grid
    np.testing.assert_array_equal(back.labels, arr)


def test_sidecar_schema(tmp_path, prob_raster):
    path = tmp_path / "p.grf"
    grf.write_probability(path, prob_raster)
    meta = json.loads(grf.sidecar_path(path).read_text())
    assert set(meta) == SIDECAR_KEYS
    assert meta["dtype"] == "float32"
    assert meta["nodata"] == "nan"
    assert meta["crs_tag"] == "utm40s"


def test_label_sidecar_nodata_is_255(tmp_path, catalog):
    grid = GridSpec(origin_x=0.0, origin_y=2.0, spacing=1.0, width=2, height=2)
    path = tmp_path / "l.grf"
    grf.write_labels(path, LabelRaster(grid=grid, labels=np.zeros((2, 2))))
    meta = json.loads(grf.sidecar_path(path).read_text())
    assert meta["dtype"] == "uint8"
    assert meta["nodata"] == 255


def test_payload_is_row_major_little_endian(tmp_path):
    grid = GridSpec(origin_x=0.0, origin_y=2.0, spacing=1.0, width=3, height=2)
    vals = np.array([[0.0, 0.25, 0.5], [0.75, 1.0, 0.125]])
    path = tmp_path / "p.grf"
    grf.write_probability(path, ProbabilityRaster(grid=grid, class_id=0, values=vals))
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(raw, vals.ravel().astype("<f4"))


def test_writes_are_deterministic(tmp_path, prob_raster):
    a, b = tmp_path / "a.grf", tmp_path / "b.grf"
    grf.write_probability(a, prob_raster)
    grf.write_probability(b, prob_raster)
    assert a.read_bytes() == b.read_bytes()
    assert grf.sidecar_path(a).read_bytes() == grf.sidecar_path(b).read_bytes()
    assert grf.sha256_file(a) == grf.sha256_file(b)


def test_dtype_mismatch_rejected(tmp_path, prob_raster):
    path = tmp_path / "p.grf"
    grf.write_probability(path, prob_raster)
    with pytest.raises(InputError):
        grf.read_labels(path)


def test_truncated_payload_rejected(tmp_path, prob_raster):
    path = tmp_path / "p.grf"
    grf.write_probability(path, prob_raster)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(InputError):
        grf.read_probability(path)


def test_missing_sidecar_rejected(tmp_path, prob_raster):
    path = tmp_path / "p.grf"
    grf.write_probability(path, prob_raster)
    grf.sidecar_path(path).unlink()
    with pytest.raises(FileNotFoundError):
        grf.read_probability(path)


def test_label_png_uses_catalog_palette(tmp_path, catalog):
    from PIL import Image

    grid = GridSpec(origin_x=0.0, origin_y=2.0, spacing=1.0, width=2, height=2)
    arr = np.array([[0, 1], [4, 255]], dtype=np.uint8)
    path = tmp_path / "l.png"
    grf.write_label_png(path, LabelRaster(grid=grid, labels=arr), catalog)
    img = Image.open(path).convert("RGB")
    assert img.getpixel((0, 0)) == catalog.classes[0].color
    assert img.getpixel((1, 0)) == catalog.classes[1].color
    assert img.getpixel((0, 1)) == catalog.classes[4].color
    assert img.getpixel((1, 1)) == (0, 0, 0)  # Unlabeled renders black

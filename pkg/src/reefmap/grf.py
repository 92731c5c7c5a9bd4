"""GRF raster files: raw row-major binary payload plus a JSON sidecar.

Payload is little-endian, row-major: 4-byte floats for probability rasters,
1-byte unsigned for label rasters. The sidecar `<name>.grf.json` carries
exactly {crs_tag, origin_x, origin_y, spacing, width, height, dtype, nodata}.
NoData is "nan" for float rasters and 255 for label rasters.

Writers are deterministic: identical rasters produce identical bytes, which
the pipeline relies on for content hashing and resume checks.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import InputError
from .grids import UNLABELED, ClassCatalog, GridSpec, LabelRaster, ProbabilityRaster


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def _write_sidecar(path, grid: GridSpec, dtype: str, nodata) -> None:
    doc = dict(grid.to_dict(), dtype=dtype, nodata=nodata)
    text = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    sidecar_path(path).write_text(text, encoding="utf-8")


def _read_sidecar(path) -> dict:
    sc = sidecar_path(path)
    if not sc.exists():
        raise FileNotFoundError(f"missing sidecar {sc}")
    return json.loads(sc.read_text(encoding="utf-8"))


def write_probability(path, raster: ProbabilityRaster) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    raster.values.astype("<f4").tofile(path)
    _write_sidecar(path, raster.grid, "float32", "nan")


def write_labels(path, raster: LabelRaster) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    raster.labels.astype("u1").tofile(path)
    _write_sidecar(path, raster.grid, "uint8", UNLABELED)


def _load(path, expect_dtype: str) -> tuple[GridSpec, np.ndarray]:
    meta = _read_sidecar(path)
    if meta.get("dtype") != expect_dtype:
        raise InputError(f"{path}: expected dtype {expect_dtype}, sidecar says {meta.get('dtype')}")
    grid = GridSpec.from_dict(meta)
    np_dtype = "<f4" if expect_dtype == "float32" else "u1"
    data = np.fromfile(path, dtype=np_dtype)
    if data.size != grid.width * grid.height:
        raise InputError(
            f"{path}: payload holds {data.size} values, sidecar promises "
            f"{grid.width}x{grid.height}")
    return grid, data.reshape(grid.height, grid.width)


def read_probability(path, class_id: int = 0) -> ProbabilityRaster:
    """Class identity is not part of the sidecar; callers pass it (it is
    conventionally encoded in the file name, e.g. merged_<class>.grf)."""
    grid, data = _load(path, "float32")
    return ProbabilityRaster(grid=grid, class_id=class_id, values=data.astype(np.float64))


def read_labels(path) -> LabelRaster:
    grid, data = _load(path, "uint8")
    return LabelRaster(grid=grid, labels=data)


def write_label_png(path, raster: LabelRaster, catalog: ClassCatalog) -> None:
    """Palette PNG of a label raster; Unlabeled renders black."""
    from PIL import Image

    palette = [0] * (256 * 3)
    for c in catalog.classes:
        palette[c.index * 3:c.index * 3 + 3] = list(c.color)
    img = Image.fromarray(raster.labels, mode="P")
    img.putpalette(palette)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()

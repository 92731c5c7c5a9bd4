"""Core geospatial types: uniform metric grids, rasters and class catalogs.

Conventions used throughout the package:

* Coordinates are projected meters. North-up grids, origin at the top-left
  corner, row index grows southward (y decreases).
* Cell (col, row) covers x in [origin_x + col*s, origin_x + (col+1)*s)
  and y in (origin_y - (row+1)*s, origin_y - row*s], s = spacing.
* NoData is NaN in scalar rasters and 255 in label rasters.

All types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateExtent, InputError, NonPositiveSpacing, UnknownClass

UNLABELED = 255


@dataclass(frozen=True)
class GridSpec:
    """A north-up uniform grid anchoring every raster in a pipeline."""

    origin_x: float
    origin_y: float
    spacing: float
    width: int
    height: int
    crs_tag: str = "local"

    def __post_init__(self):
        if not self.spacing > 0:
            raise NonPositiveSpacing(f"spacing must be > 0, got {self.spacing}")
        if self.width < 1 or self.height < 1:
            raise DegenerateExtent(f"grid must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) of the full grid footprint."""
        return (
            self.origin_x,
            self.origin_y - self.height * self.spacing,
            self.origin_x + self.width * self.spacing,
            self.origin_y,
        )

    def pixel_center(self, col: int, row: int) -> tuple[float, float]:
        return (
            self.origin_x + (col + 0.5) * self.spacing,
            self.origin_y - (row + 0.5) * self.spacing,
        )

    def center_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """1-D arrays of pixel-center x (per column) and y (per row)."""
        xs = self.origin_x + (np.arange(self.width) + 0.5) * self.spacing
        ys = self.origin_y - (np.arange(self.height) + 0.5) * self.spacing
        return xs, ys

    def to_dict(self) -> dict:
        return {
            "crs_tag": self.crs_tag,
            "origin_x": self.origin_x,
            "origin_y": self.origin_y,
            "spacing": self.spacing,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            origin_x=float(d["origin_x"]),
            origin_y=float(d["origin_y"]),
            spacing=float(d["spacing"]),
            width=int(d["width"]),
            height=int(d["height"]),
            crs_tag=str(d.get("crs_tag", "local")),
        )


def grid_from_extent(min_x: float, min_y: float, max_x: float, max_y: float,
                     spacing: float, crs_tag: str = "local") -> GridSpec:
    """Smallest grid at the given spacing that covers the bounding box.

    The origin is the top-left corner (min_x, max_y); width/height are
    rounded up so the grid never undershoots the box.
    """
    if not spacing > 0:
        raise NonPositiveSpacing(f"spacing must be > 0, got {spacing}")
    if not (max_x > min_x and max_y > min_y):
        raise DegenerateExtent(f"zero-area box ({min_x},{min_y})..({max_x},{max_y})")
    width = math.ceil((max_x - min_x) / spacing)
    height = math.ceil((max_y - min_y) / spacing)
    return GridSpec(origin_x=min_x, origin_y=max_y, spacing=spacing,
                    width=width, height=height, crs_tag=crs_tag)


def world_to_pixel(grid: GridSpec, x: float, y: float):
    """Cell (col, row) containing the point, or None if outside the grid."""
    col = math.floor((x - grid.origin_x) / grid.spacing)
    row = math.floor((grid.origin_y - y) / grid.spacing)
    if 0 <= col < grid.width and 0 <= row < grid.height:
        return (col, row)
    return None


@dataclass(frozen=True)
class ClassDef:
    index: int
    name: str
    color: tuple[int, int, int]


#: palette chosen for legibility on orthophoto backdrops
_DEFAULT_CLASSES = (
    ("Sand", (237, 201, 175)),
    ("Acropora Branching", (101, 67, 33)),
    ("Acropora Tabular", (255, 140, 0)),
    ("Non-acropora Massive", (220, 220, 210)),
    ("Other Corals", (186, 85, 211)),
)
_SEA_CUCUMBER = ("Sea Cucumber", (47, 79, 79))


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class list; indices are contiguous 0..N-1, 255 is reserved."""

    classes: tuple[ClassDef, ...]

    def __post_init__(self):
        idx = [c.index for c in self.classes]
        if idx != list(range(len(idx))) or not idx:
            raise UnknownClass(f"class indices must be contiguous 0..N-1, got {idx}")
        if len(idx) >= UNLABELED:
            raise UnknownClass(f"at most {UNLABELED - 1} classes supported (255 is reserved)")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise UnknownClass(f"duplicate class names in {names}")

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.classes)

    def name_of(self, class_id: int) -> str:
        self.check_class(class_id)
        return self.classes[class_id].name

    def check_class(self, class_id: int) -> None:
        if not (0 <= class_id < len(self.classes)):
            raise UnknownClass(f"class id {class_id} not in 0..{len(self.classes) - 1}")

    @classmethod
    def default(cls, include_sea_cucumber: bool = False) -> "ClassCatalog":
        rows = list(_DEFAULT_CLASSES)
        if include_sea_cucumber:
            rows.append(_SEA_CUCUMBER)
        return cls(tuple(ClassDef(i, n, c) for i, (n, c) in enumerate(rows)))

    def to_json(self) -> list[dict]:
        return [{"index": c.index, "name": c.name, "color": list(c.color)} for c in self.classes]

    @classmethod
    def from_json(cls, rows: list[dict]) -> "ClassCatalog":
        defs = tuple(
            ClassDef(int(r["index"]), str(r["name"]), tuple(int(v) for v in r["color"]))
            for r in sorted(rows, key=lambda r: int(r["index"]))
        )
        return cls(defs)

    @classmethod
    def load(cls, path) -> "ClassCatalog":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _as_2d(grid: GridSpec, values, dtype) -> np.ndarray:
    # always copy so freezing the raster never freezes the caller's array
    arr = np.array(values, dtype=dtype, copy=True, order="C")
    if arr.ndim == 1 and arr.size == grid.width * grid.height:
        arr = arr.reshape(grid.height, grid.width)
    if arr.shape != (grid.height, grid.width):
        raise InputError(
            f"field shape {arr.shape} does not match grid {grid.height}x{grid.width}")
    return arr


@dataclass(frozen=True)
class ProbabilityRaster:
    """Per-class scalar field on a grid. NaN marks NoData.

    Values are float64 in memory; the on-disk GRF format stores float32.
    The [0,1] range is established at ingestion boundaries and preserved by
    every operation, so it is not re-checked on each construction.
    """

    grid: GridSpec
    class_id: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _as_2d(self.grid, self.values, np.float64))
        self.values.setflags(write=False)

    @property
    def nodata_mask(self) -> np.ndarray:
        return np.isnan(self.values)


@dataclass(frozen=True)
class LabelRaster:
    """One class index per pixel; 255 means Unlabeled."""

    grid: GridSpec
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", _as_2d(self.grid, self.labels, np.uint8))
        self.labels.setflags(write=False)

    def check_catalog(self, catalog: ClassCatalog) -> None:
        bad = (self.labels >= len(catalog)) & (self.labels != UNLABELED)
        if bad.any():
            raise UnknownClass(
                f"{int(bad.sum())} labels outside catalog of {len(catalog)} classes")

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNLABELED

    def unlabeled_fraction(self) -> float:
        return float(np.count_nonzero(self.labels == UNLABELED) / self.labels.size)


def same_grid(a: GridSpec, b: GridSpec) -> bool:
    return a == b

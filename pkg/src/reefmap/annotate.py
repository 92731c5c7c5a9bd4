"""Coarse-annotation generation: class-specific quantile normalization,
argmax labeling, and nearest-neighbour alignment to a finer grid.

A multi-label classifier calibrates each class independently, so raw
probabilities are not comparable across classes: common classes produce
sharply bimodal scores while rare classes spread theirs thinly, and a naive
per-pixel argmax systematically suppresses the rare ones. Rescaling each
class between its own 1st and 99th empirical percentiles (clipped to [0,1])
puts all classes on a relative-confidence footing before the argmax.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadPercentilePair,
    ClassMismatch,
    EmptyValues,
    GridMismatch,
    MissingClassRaster,
    NonPositiveEpsilon,
    NoOverlap,
)
from .grids import UNLABELED, ClassCatalog, GridSpec, LabelRaster, ProbabilityRaster
from .ingest import PointPredictionSet, pool_class_values

log = logging.getLogger(__name__)

DEFAULT_PERCENTILES = (0.01, 0.99)
DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class QuantileStats:
    """Empirical low/high percentile anchors for one class."""

    class_id: int
    q_low: float
    q_high: float
    sample_count: int


@dataclass(frozen=True)
class NormalizationParams:
    """Per-class anchors plus the stability constant; serializable so a
    labeling round can be audited and replayed."""

    stats: tuple[QuantileStats, ...]
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.epsilon > 0:
            raise NonPositiveEpsilon(f"epsilon must be > 0, got {self.epsilon}")
        ids = [s.class_id for s in self.stats]
        if ids != list(range(len(ids))):
            raise MissingClassRaster(f"need one QuantileStats per class 0..N-1, got {ids}")

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "classes": [
                {"class_id": s.class_id, "q_low": s.q_low, "q_high": s.q_high,
                 "sample_count": s.sample_count}
                for s in self.stats
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NormalizationParams":
        stats = tuple(
            QuantileStats(int(c["class_id"]), float(c["q_low"]), float(c["q_high"]),
                          int(c["sample_count"]))
            for c in sorted(doc["classes"], key=lambda c: int(c["class_id"]))
        )
        return cls(stats=stats, epsilon=float(doc["epsilon"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NormalizationParams":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def quantile_stats(values, p_low: float = 0.01, p_high: float = 0.99,
                   class_id: int = 0) -> QuantileStats:
    """Empirical percentiles with linear interpolation between order
    statistics at rank h = (n-1)*p."""
    vals = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if vals.size == 0:
        raise EmptyValues("cannot take percentiles of no values")
    if not (0.0 <= p_low < p_high <= 1.0):
        raise BadPercentilePair(f"need 0 <= p_low < p_high <= 1, got ({p_low}, {p_high})")
    return QuantileStats(class_id=class_id, q_low=_order_stat(vals, p_low),
                         q_high=_order_stat(vals, p_high), sample_count=int(vals.size))


def _order_stat(sorted_vals: np.ndarray, p: float) -> float:
    h = (sorted_vals.size - 1) * p
    lo = math.floor(h)
    hi = math.ceil(h)
    if lo == hi:
        return float(sorted_vals[lo])
    return float(sorted_vals[lo] + (h - lo) * (sorted_vals[hi] - sorted_vals[lo]))


def fit_normalization(pset: PointPredictionSet, p_low: float = 0.01, p_high: float = 0.99,
                      epsilon: float = DEFAULT_EPSILON) -> NormalizationParams:
    """Fit per-class anchors on the pooled point-level predictions of all
    sessions (statistics come from the classifier outputs, not from the
    interpolated rasters they later rescale)."""
    stats = tuple(
        quantile_stats(pool_class_values(pset, c), p_low, p_high, class_id=c)
        for c in range(len(pset.catalog))
    )
    return NormalizationParams(stats=stats, epsilon=epsilon)


def normalize_raster(raster: ProbabilityRaster, stats: QuantileStats,
                     epsilon: float = DEFAULT_EPSILON) -> ProbabilityRaster:
    """Rescale to (p - q_low) / (q_high - q_low + epsilon), clipped to [0,1].

    NoData propagates; the output is monotone in the input for fixed stats.
    """
    if not epsilon > 0:
        raise NonPositiveEpsilon(f"epsilon must be > 0, got {epsilon}")
    if raster.class_id != stats.class_id:
        raise ClassMismatch(f"raster class {raster.class_id} vs stats class {stats.class_id}")
    denom = stats.q_high - stats.q_low + epsilon
    with np.errstate(invalid="ignore"):
        scaled = np.clip((raster.values - stats.q_low) / denom, 0.0, 1.0)
    return ProbabilityRaster(grid=raster.grid, class_id=raster.class_id, values=scaled)


def normalize_all(rasters, params: NormalizationParams) -> list[ProbabilityRaster]:
    return [normalize_raster(r, params.stats[r.class_id], params.epsilon) for r in rasters]


def argmax_label(rasters, catalog: ClassCatalog) -> LabelRaster:
    """Per pixel, the smallest class index attaining the maximum normalized
    value among classes with data there; 255 where every class is NoData."""
    by_class = {r.class_id: r for r in rasters}
    if sorted(by_class) != list(range(len(catalog))):
        raise MissingClassRaster(
            f"need exactly one raster per class 0..{len(catalog) - 1}, got {sorted(by_class)}")
    grid = by_class[0].grid
    for r in rasters:
        if r.grid != grid:
            raise GridMismatch(f"raster for class {r.class_id} is on a different grid")
    stack = np.stack([by_class[c].values for c in range(len(catalog))])
    filled = np.where(np.isnan(stack), -np.inf, stack)
    labels = np.argmax(filled, axis=0).astype(np.uint8)  # first max = smallest index
    labels[np.all(np.isnan(stack), axis=0)] = UNLABELED
    return LabelRaster(grid=grid, labels=labels)


def _overlaps(a: GridSpec, b: GridSpec) -> bool:
    ax0, ay0, ax1, ay1 = a.extent
    bx0, by0, bx1, by1 = b.extent
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def upsample_nearest(src: LabelRaster, dst_grid: GridSpec) -> LabelRaster:
    """Replicate source labels onto a finer grid by nearest pixel center.

    Ties go to the smaller row, then smaller column; destination centers
    outside the source extent become Unlabeled.
    """
    if not _overlaps(src.grid, dst_grid):
        raise NoOverlap("source and destination grids do not overlap")
    if dst_grid.spacing > src.grid.spacing:
        log.warning("upsample_nearest: destination spacing %.4g is coarser than source %.4g",
                    dst_grid.spacing, src.grid.spacing)
    xs, ys = dst_grid.center_axes()
    fx = (xs - src.grid.origin_x) / src.grid.spacing       # fractional source column
    fy = (src.grid.origin_y - ys) / src.grid.spacing       # fractional source row
    # nearest center with ties to the smaller index: ceil(f - 1) == ceil((f-0.5)-0.5)
    cols = np.ceil(fx - 1.0).astype(np.int64)
    rows = np.ceil(fy - 1.0).astype(np.int64)
    in_x = (fx >= 0.0) & (fx < src.grid.width)
    in_y = (fy >= 0.0) & (fy < src.grid.height)
    np.clip(cols, 0, src.grid.width - 1, out=cols)
    np.clip(rows, 0, src.grid.height - 1, out=rows)
    out = src.labels[np.ix_(rows, cols)].copy()
    out[~in_y, :] = UNLABELED
    out[:, ~in_x] = UNLABELED
    return LabelRaster(grid=dst_grid, labels=out)

"""One-call orchestration of the coarse-annotation chain:
points -> per-session interpolation -> session merge -> quantile
normalization -> argmax labels.

The CLI runs the same steps stage by stage with files in between; this
module is the in-memory equivalent used by tests and scripts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import (
    DEFAULT_EPSILON,
    DEFAULT_PERCENTILES,
    NormalizationParams,
    argmax_label,
    fit_normalization,
    normalize_all,
)
from .errors import TooFewPoints
from .grids import GridSpec, LabelRaster, ProbabilityRaster, grid_from_extent
from .ingest import PointPredictionSet, median_consecutive_spacing
from .interpolate import delaunay_triangulate, interpolate_linear, merge_session_rasters


@dataclass
class CoarseAnnotationResult:
    grid: GridSpec
    merged: list[ProbabilityRaster]       # one per class, session-averaged
    normalized: list[ProbabilityRaster]
    params: NormalizationParams
    labels: LabelRaster


def default_grid(pset: PointPredictionSet, spacing: float | None = None,
                 crs_tag: str = "local") -> GridSpec:
    """Grid over the survey bounding box; spacing defaults to the median of
    the per-session median consecutive distances."""
    if spacing is None:
        per_session = [
            median_consecutive_spacing(pset.sessions[sid]) for sid in pset.session_ids
            if len(pset.sessions[sid]) >= 2
        ]
        if not per_session:
            raise TooFewPoints("no session has the 2+ points needed to derive a spacing")
        spacing = float(np.median(per_session))
    min_x, min_y, max_x, max_y = pset.bounds()
    return grid_from_extent(min_x, min_y, max_x, max_y, spacing, crs_tag=crs_tag)


def session_class_rasters(pset: PointPredictionSet, grid: GridSpec,
                          workers: int = 1) -> dict[str, list[ProbabilityRaster]]:
    """Interpolate every (session, class) pair onto the grid."""
    out: dict[str, list[ProbabilityRaster]] = {}
    for sid in pset.session_ids:
        tri = delaunay_triangulate(pset.session_coords(sid))
        probs = pset.session_probs(sid)
        rasters = []
        for c in range(len(pset.catalog)):
            values = tri.collapse_values(probs[:, c])
            rasters.append(interpolate_linear(tri, values, grid, class_id=c,
                                              workers=workers))
        out[sid] = rasters
    return out


def coarse_labels_from_points(pset: PointPredictionSet, grid: GridSpec | None = None,
                              percentiles: tuple[float, float] = DEFAULT_PERCENTILES,
                              epsilon: float = DEFAULT_EPSILON,
                              workers: int = 1) -> CoarseAnnotationResult:
    grid = grid or default_grid(pset)
    per_session = session_class_rasters(pset, grid, workers=workers)
    n = len(pset.catalog)
    merged = [
        merge_session_rasters([per_session[sid][c] for sid in pset.session_ids])
        for c in range(n)
    ]
    params = fit_normalization(pset, percentiles[0], percentiles[1], epsilon)
    normalized = normalize_all(merged, params)
    labels = argmax_label(normalized, pset.catalog)
    return CoarseAnnotationResult(grid=grid, merged=merged, normalized=normalized,
                                  params=params, labels=labels)

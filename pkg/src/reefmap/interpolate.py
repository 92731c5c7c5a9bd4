"""Scattered points to grid: Delaunay triangulation, piecewise-linear
(barycentric) pixel evaluation, and multi-session raster merging.

Pixel centers outside the convex hull stay NoData: extrapolating class
probabilities beyond the surveyed strip would invent data.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError

from .errors import AllCollinear, ClassMismatch, EmptyList, GridMismatch, LengthMismatch, TooFewPoints
from .grids import GridSpec, ProbabilityRaster

_ROW_BLOCK = 256


@dataclass(frozen=True)
class Triangulation:
    """Delaunay triangulation over deduplicated points.

    `source_index[v]` is the index of vertex v in the original point list
    (first occurrence wins when exact duplicates collapse), which lets
    per-point values be carried over with `collapse_values`.
    """

    vertices: np.ndarray                       # (n, 2) float64
    triangles: np.ndarray                      # (m, 3) int32, CCW
    hull: np.ndarray                           # hull vertex indices, CCW cycle
    source_index: np.ndarray                   # (n,) into the original points
    source_count: int                          # original point count pre-dedup
    _qhull: Delaunay = field(repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def collapse_values(self, point_values) -> np.ndarray:
        """Map per-original-point values to per-vertex values."""
        vals = np.asarray(point_values, dtype=np.float64)
        if vals.shape[0] != self.source_count:
            raise LengthMismatch(
                f"{vals.shape[0]} values for {self.source_count} source points")
        return vals[self.source_index]


def delaunay_triangulate(points) -> Triangulation:
    """Triangulate scattered points; exact duplicates collapse first-wins."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    # first-occurrence deduplication, preserving input order
    _, first = np.unique(pts, axis=0, return_index=True)
    first.sort()
    uniq = pts[first]
    if uniq.shape[0] < 3:
        raise TooFewPoints(f"need >= 3 distinct points, got {uniq.shape[0]}")
    d = uniq - uniq[0]
    cross = d[:, 0] * d[1, 1] - d[:, 1] * d[1, 0]
    if np.all(cross == 0.0):
        raise AllCollinear("all points lie on one line")
    try:
        qh = Delaunay(uniq)
    except QhullError as exc:
        raise AllCollinear(f"degenerate point set: {exc}") from None
    tris = np.array(qh.simplices, dtype=np.int32, copy=True)
    _orient_ccw(uniq, tris)
    hull = ConvexHull(uniq).vertices.astype(np.int32)
    return Triangulation(vertices=uniq, triangles=tris, hull=hull,
                         source_index=first.astype(np.int64),
                         source_count=pts.shape[0], _qhull=qh)


def _orient_ccw(verts, tris) -> None:
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    signed2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = signed2 < 0
    tris[flip, 1], tris[flip, 2] = tris[flip, 2].copy(), tris[flip, 1].copy()


def interpolate_linear(tri: Triangulation, values, grid: GridSpec,
                       class_id: int = 0, workers: int = 1) -> ProbabilityRaster:
    """Evaluate the piecewise-linear interpolant at every pixel center.

    In-hull pixels get the barycentric combination of their containing
    triangle's vertex values, clipped to that triangle's vertex range so
    rounding can never overshoot; out-of-hull pixels are NaN. Row blocks
    are independent, so the result is identical for any worker count.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.shape[0] != tri.n_vertices:
        raise LengthMismatch(f"{vals.shape[0]} values for {tri.n_vertices} vertices")
    # qhull builds its barycentric transforms lazily; force them once here,
    # otherwise every worker thread recomputes them concurrently
    tri._qhull.transform  # noqa: B018
    xs, ys = grid.center_axes()
    out = np.full((grid.height, grid.width), np.nan, dtype=np.float64)

    def eval_block(r0: int) -> None:
        r1 = min(r0 + _ROW_BLOCK, grid.height)
        yy = np.repeat(ys[r0:r1], grid.width)
        xx = np.tile(xs, r1 - r0)
        q = np.column_stack([xx, yy])
        simplex = tri._qhull.find_simplex(q)
        inside = simplex >= 0
        if not inside.any():
            return
        s = simplex[inside]
        T = tri._qhull.transform[s]
        r = q[inside] - T[:, 2]
        b = np.einsum("ijk,ik->ij", T[:, :2, :], r)
        w = np.column_stack([b, 1.0 - b.sum(axis=1)])
        tv = vals[tri._qhull.simplices[s]]           # (m, 3) vertex values
        res = np.einsum("ij,ij->i", tv, w)
        np.clip(res, tv.min(axis=1), tv.max(axis=1), out=res)
        block = out[r0:r1].reshape(-1)
        block[inside] = res

    starts = range(0, grid.height, _ROW_BLOCK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(eval_block, starts))
    else:
        for r0 in starts:
            eval_block(r0)
    return ProbabilityRaster(grid=grid, class_id=class_id, values=out)


def merge_session_rasters(rasters) -> ProbabilityRaster:
    """Per-pixel mean of the non-NoData inputs; NoData only where all are."""
    rasters = list(rasters)
    if not rasters:
        raise EmptyList("nothing to merge")
    head = rasters[0]
    for r in rasters[1:]:
        if r.grid != head.grid:
            raise GridMismatch(f"raster grid {r.grid} differs from {head.grid}")
        if r.class_id != head.class_id:
            raise ClassMismatch(f"class {r.class_id} mixed with {head.class_id}")
    stack = np.stack([r.values for r in rasters])
    valid = ~np.isnan(stack)
    counts = valid.sum(axis=0)
    total = np.where(valid, stack, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return ProbabilityRaster(grid=head.grid, class_id=head.class_id, values=mean)

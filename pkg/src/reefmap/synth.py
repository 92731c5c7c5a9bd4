"""Deterministic synthetic scenes for end-to-end pipeline verification.

Ground truth is a piecewise-constant class map over Voronoi cells of
well-separated sites, which mimics patchy benthic habitat while keeping an
analytic truth. Survey points run along serpentine transects, as a surface
vehicle would drive them, and carry one-hot class probabilities optionally
perturbed by clipped Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import BadParameters
from .grids import UNLABELED, ClassCatalog, LabelRaster, grid_from_extent
from .ingest import PointPrediction, PointPredictionSet, median_consecutive_spacing

SESSION_ID = "synth00"
FEATURE_SIZE_STEPS = 10  # minimum habitat-patch size, in units of point_step


@dataclass(frozen=True)
class SyntheticScene:
    seed: int
    ground_truth: LabelRaster
    points: PointPredictionSet
    sites: np.ndarray          # (k, 2) Voronoi sites
    site_classes: np.ndarray   # (k,) class per site


def synth_scene(seed: int, extent: float = 50.0, transect_spacing: float = 0.5,
                point_step: float = 0.3, catalog: ClassCatalog | None = None,
                noise: float = 0.0) -> SyntheticScene:
    """Generate a reproducible scene over a square [0, extent]^2 area.

    The truth raster lives on the exact grid the pipeline will rebuild from
    the survey points (bounding box + median consecutive spacing), so
    coarse labels and truth compare pixel for pixel.
    """
    if extent <= 0 or transect_spacing <= 0 or point_step <= 0:
        raise BadParameters("extent and spacings must be > 0")
    if noise < 0:
        raise BadParameters(f"noise must be >= 0, got {noise}")
    if extent < 2 * transect_spacing or extent < FEATURE_SIZE_STEPS * point_step:
        raise BadParameters("extent too small for the requested spacing")
    catalog = catalog or ClassCatalog.default()
    n_classes = len(catalog)
    rng = np.random.default_rng(seed)

    min_sep = FEATURE_SIZE_STEPS * point_step
    sites = _dart_throw(rng, extent, min_sep)
    if len(sites) < n_classes:
        raise BadParameters(
            f"only {len(sites)} habitat patches fit, need >= {n_classes} classes")
    site_classes = np.concatenate([
        rng.permutation(n_classes),
        rng.integers(0, n_classes, size=len(sites) - n_classes),
    ]).astype(np.int64)
    tree = cKDTree(sites)

    xy = _serpentine(extent, transect_spacing, point_step)
    point_classes = site_classes[tree.query(xy)[1]]
    probs = np.zeros((len(xy), n_classes), dtype=np.float64)
    probs[np.arange(len(xy)), point_classes] = 1.0
    if noise > 0:
        probs = np.clip(probs + rng.normal(0.0, noise, size=probs.shape), 0.0, 1.0)

    pts = [
        PointPrediction(session_id=SESSION_ID, seq=i, x=float(x), y=float(y),
                        probs=tuple(float(v) for v in p))
        for i, ((x, y), p) in enumerate(zip(xy, probs))
    ]
    pset = PointPredictionSet(catalog=catalog, sessions={SESSION_ID: pts})

    spacing = median_consecutive_spacing(xy)
    grid = grid_from_extent(xy[:, 0].min(), xy[:, 1].min(),
                            xy[:, 0].max(), xy[:, 1].max(), spacing)
    cxs, cys = grid.center_axes()
    centers = np.column_stack([np.tile(cxs, grid.height), np.repeat(cys, grid.width)])
    truth = site_classes[tree.query(centers)[1]].reshape(grid.height, grid.width)
    ground_truth = LabelRaster(grid=grid, labels=truth.astype(np.uint8))
    return SyntheticScene(seed=seed, ground_truth=ground_truth, points=pset,
                          sites=sites, site_classes=site_classes)


def _dart_throw(rng, extent: float, min_sep: float) -> np.ndarray:
    """Rejection-sample sites at pairwise distance >= min_sep, so every
    Voronoi cell contains a disc of diameter min_sep."""
    target = max(8, int((extent / min_sep) ** 2 / 4))
    sites: list[np.ndarray] = []
    attempts = 0
    while len(sites) < target and attempts < 200 * target:
        p = rng.uniform(0.0, extent, size=2)
        attempts += 1
        if all(np.hypot(*(p - s)) >= min_sep for s in sites):
            sites.append(p)
    return np.array(sites)


def _serpentine(extent: float, transect_spacing: float, point_step: float) -> np.ndarray:
    """Back-and-forth transect lines stacked in y, points every point_step."""
    xs = np.arange(0.0, extent + 1e-9, point_step)
    line_ys = np.arange(0.0, extent + 1e-9, transect_spacing)
    rows = []
    for k, y in enumerate(line_ys):
        line_x = xs if k % 2 == 0 else xs[::-1]
        rows.append(np.column_stack([line_x, np.full_like(line_x, y)]))
    return np.vstack(rows)


def boundary_band(truth: LabelRaster, radius: int = 1) -> np.ndarray:
    """True where a pixel sits within `radius` pixels (8-neighbourhood) of a
    class boundary in the truth raster. Linear interpolation necessarily
    blurs discontinuities, so end-to-end checks exclude this band."""
    lab = truth.labels
    edge = np.zeros(lab.shape, dtype=bool)
    edge[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    edge[:, :-1] |= lab[:, 1:] != lab[:, :-1]
    edge[1:, :] |= lab[1:, :] != lab[:-1, :]
    edge[:-1, :] |= lab[1:, :] != lab[:-1, :]
    edge[1:, 1:] |= lab[1:, 1:] != lab[:-1, :-1]
    edge[:-1, :-1] |= lab[1:, 1:] != lab[:-1, :-1]
    edge[1:, :-1] |= lab[1:, :-1] != lab[:-1, 1:]
    edge[:-1, 1:] |= lab[1:, :-1] != lab[:-1, 1:]
    if radius > 1:
        edge = ndimage.binary_dilation(edge, structure=np.ones((3, 3), bool),
                                       iterations=radius - 1)
    return edge


def masked_accuracy(coarse: LabelRaster, truth: LabelRaster, band_radius: int = 1) -> float:
    """Pixel accuracy of coarse labels against truth, excluding the
    boundary band and pixels left Unlabeled (outside the survey hull)."""
    valid = (coarse.labels != UNLABELED) & (truth.labels != UNLABELED)
    valid &= ~boundary_band(truth, radius=band_radius)
    if not valid.any():
        return float("nan")
    return float((coarse.labels[valid] == truth.labels[valid]).mean())

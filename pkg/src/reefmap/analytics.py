"""Ecological statistics over label rasters: class cover, connected-component
instances, longest-axis lengths, densities and point-level abundance."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyInstance,
    EmptySet,
    InputError,
    NoLabeledPixels,
    NonPositiveArea,
)
from .grids import ClassCatalog, LabelRaster
from .ingest import PointPredictionSet


@dataclass(frozen=True)
class InstanceRecord:
    """One connected blob of a single class."""

    class_id: int
    pixels: np.ndarray          # (k, 2) int, (col, row)
    area_m2: float              # pixel count * spacing^2
    length_m: float             # longest axis
    centroid: tuple[float, float]


def class_cover(labels: LabelRaster, catalog: ClassCatalog):
    """Per-class (fraction of labeled pixels, area in m^2).

    Fractions sum to 1 over the labeled pixels; Unlabeled is excluded.
    """
    labels.check_catalog(catalog)
    counts = np.bincount(labels.labels[labels.labeled_mask].astype(np.int64),
                         minlength=len(catalog))
    total = counts.sum()
    if total == 0:
        raise NoLabeledPixels("raster is entirely Unlabeled")
    fractions = counts / total
    areas = counts * labels.grid.spacing ** 2
    return fractions, areas


_STRUCT_8 = np.ones((3, 3), dtype=bool)
_STRUCT_4 = ndimage.generate_binary_structure(2, 1)


def connected_components(labels: LabelRaster, class_id: int, catalog: ClassCatalog,
                         connectivity: int = 8, min_pixels: int = 4) -> list[InstanceRecord]:
    """Maximal connected components of one class, smallest speckles dropped,
    ordered by (min row, min col)."""
    catalog.check_class(class_id)
    if connectivity not in (4, 8):
        raise InputError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = labels.labels == class_id
    structure = _STRUCT_8 if connectivity == 8 else _STRUCT_4
    lab, _ = ndimage.label(mask, structure=structure)
    records = []
    spacing = labels.grid.spacing
    # find_objects returns bounding slices indexed by component id
    slices = ndimage.find_objects(lab)
    for comp_id, sl in enumerate(slices, start=1):
        if sl is None:
            continue
        rr, cc = np.nonzero(lab[sl] == comp_id)
        if rr.size < min_pixels:
            continue
        rows = rr + sl[0].start
        cols = cc + sl[1].start
        pixels = np.column_stack([cols, rows]).astype(np.int64)
        cx = labels.grid.origin_x + (cols.mean() + 0.5) * spacing
        cy = labels.grid.origin_y - (rows.mean() + 0.5) * spacing
        records.append(InstanceRecord(
            class_id=class_id,
            pixels=pixels,
            area_m2=float(pixels.shape[0] * spacing ** 2),
            length_m=_longest_axis(pixels, spacing),
            centroid=(float(cx), float(cy)),
        ))
    records.sort(key=lambda r: (int(r.pixels[:, 1].min()), int(r.pixels[:, 0].min())))
    return records


def instance_length(instance: InstanceRecord, spacing: float) -> float:
    """Longest axis: farthest pair of pixel centers plus one pixel width
    (so a single pixel has length = spacing)."""
    if instance.pixels.shape[0] == 0:
        raise EmptyInstance("instance has no pixels")
    return _longest_axis(instance.pixels, spacing)


def _longest_axis(pixels: np.ndarray, spacing: float) -> float:
    if pixels.shape[0] == 0:
        raise EmptyInstance("instance has no pixels")
    pts = (pixels.astype(np.float64) + 0.5) * spacing
    return _hull_diameter(pts) + spacing


def _hull_diameter(points: np.ndarray) -> float:
    """Max pairwise distance via convex hull + rotating calipers."""
    pts = sorted({(float(x), float(y)) for x, y in points})
    if len(pts) == 1:
        return 0.0
    upper, lower = _hulls(pts)
    best = 0.0
    for p, q in _rotating_calipers(upper, lower):
        d = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2
        if d > best:
            best = d
    return math.sqrt(best)


def _orientation(p, q, r):
    """Positive if p-q-r turn clockwise, negative if ccw, zero if collinear."""
    return (q[1] - p[1]) * (r[0] - p[0]) - (q[0] - p[0]) * (r[1] - p[1])


def _hulls(pts):
    """Monotone-chain upper and lower hulls of points presorted by x, y."""
    upper, lower = [], []
    for p in pts:
        while len(upper) > 1 and _orientation(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        while len(lower) > 1 and _orientation(lower[-2], lower[-1], p) >= 0:
            lower.pop()
        upper.append(p)
        lower.append(p)
    return upper, lower


def _rotating_calipers(upper, lower):
    """Yield antipodal pairs sandwiched between two parallel support lines."""
    i, j = 0, len(lower) - 1
    while i < len(upper) - 1 or j > 0:
        yield upper[i], lower[j]
        if i == len(upper) - 1:
            j -= 1
        elif j == 0:
            i += 1
        # compare slopes of the next edges without dividing
        elif ((upper[i + 1][1] - upper[i][1]) * (lower[j][0] - lower[j - 1][0])
              > (lower[j][1] - lower[j - 1][1]) * (upper[i + 1][0] - upper[i][0])):
            i += 1
        else:
            j -= 1


def density(instances, surveyed_area_m2: float) -> float:
    """Instances per square meter."""
    if not surveyed_area_m2 > 0:
        raise NonPositiveArea(f"surveyed area must be > 0, got {surveyed_area_m2}")
    return len(list(instances)) / surveyed_area_m2


def length_summary(lengths) -> tuple[float, float]:
    """(mean, standard error); SE = sample standard deviation / sqrt(n),
    0 when n = 1."""
    vals = np.asarray(list(lengths), dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptySet("no lengths to summarize")
    mean = float(vals.mean())
    if vals.size == 1:
        return mean, 0.0
    sd = float(vals.std(ddof=1))
    return mean, sd / math.sqrt(vals.size)


def relative_abundance(pset: PointPredictionSet, threshold: float = 0.5) -> np.ndarray:
    """Per-class fraction of points whose probability reaches the threshold.

    Multi-label predictions: the fractions routinely sum to more than 1.
    """
    if pset.total_points() == 0:
        raise EmptySet("point set holds no points")
    n = len(pset.catalog)
    hits = np.zeros(n, dtype=np.int64)
    total = 0
    for sid in pset.session_ids:
        probs = pset.session_probs(sid)
        hits += (probs >= threshold).sum(axis=0)
        total += probs.shape[0]
    return hits / total


def instances_to_csv(instances) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "centroid_x", "centroid_y", "area_m2", "length_m"])
    for r in instances:
        writer.writerow([r.class_id, f"{r.centroid[0]:.6f}", f"{r.centroid[1]:.6f}",
                         f"{r.area_m2:.6f}", f"{r.length_m:.6f}"])
    return buf.getvalue()


def instances_to_geojson(instances, catalog: ClassCatalog, crs_tag: str = "local") -> dict:
    """Centroid point collection; coordinates stay in the projected CRS."""
    feats = []
    for r in instances:
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [r.centroid[0], r.centroid[1]]},
            "properties": {
                "class": catalog.name_of(r.class_id),
                "area_m2": r.area_m2,
                "length_m": r.length_m,
            },
        })
    return {"type": "FeatureCollection", "crs_tag": crs_tag, "features": feats}


def cover_to_json(labels: LabelRaster, catalog: ClassCatalog) -> dict:
    fractions, areas = class_cover(labels, catalog)
    return {
        "classes": [
            {"name": n, "fraction_of_labeled": float(f), "area_m2": float(a)}
            for n, f, a in zip(catalog.names, fractions, areas)
        ],
        "unlabeled_fraction": labels.unlabeled_fraction(),
    }


def export_cover_json(path, labels: LabelRaster, catalog: ClassCatalog) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cover_to_json(labels, catalog), fh, sort_keys=True, indent=2)
        fh.write("\n")

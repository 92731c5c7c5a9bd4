"""Point-prediction ingestion: CSV parsing, survey geometry, value pooling.

The point-CSV contract: header `session_id,seq,x,y,prob_<Class0>,...`, UTF-8,
`.` decimal separator, one row per survey image. A `lat,lon` header variant
is accepted and projected to local meters around an origin.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyFile,
    MalformedRow,
    MissingClassColumn,
    OutOfRangeCoordinate,
    ProbabilityOutOfRange,
    TooFewPoints,
    UnknownClass,
)
from .grids import ClassCatalog

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class PointPrediction:
    """One georeferenced survey image with its per-class probabilities.

    Probabilities come from a multi-label classifier: each lies in [0,1]
    but the vector need not sum to 1.
    """

    session_id: str
    seq: int
    x: float
    y: float
    probs: tuple[float, ...]


@dataclass
class PointPredictionSet:
    catalog: ClassCatalog
    sessions: dict[str, list[PointPrediction]] = field(default_factory=dict)

    @property
    def session_ids(self) -> list[str]:
        return sorted(self.sessions)

    def total_points(self) -> int:
        return sum(len(pts) for pts in self.sessions.values())

    def session_coords(self, session_id: str) -> np.ndarray:
        pts = self.sessions[session_id]
        return np.array([(p.x, p.y) for p in pts], dtype=np.float64).reshape(-1, 2)

    def session_probs(self, session_id: str) -> np.ndarray:
        pts = self.sessions[session_id]
        return np.array([p.probs for p in pts], dtype=np.float64).reshape(-1, len(self.catalog))

    def bounds(self) -> tuple[float, float, float, float]:
        if not self.sessions or self.total_points() == 0:
            raise EmptyFile("point set holds no points")
        coords = np.vstack([self.session_coords(s) for s in self.session_ids])
        return (coords[:, 0].min(), coords[:, 1].min(),
                coords[:, 0].max(), coords[:, 1].max())


def latlon_to_local(points, origin) -> list[tuple[float, float]]:
    """Equirectangular tangent-plane projection around `origin` (lat, lon).

    x = R*dlon*cos(lat0), y = R*dlat, angles in radians. Adequate below a
    few km of extent; anything larger needs a real projection upstream.
    """
    lat0, lon0 = origin
    _check_latlon(lat0, lon0)
    cos0 = math.cos(math.radians(lat0))
    out = []
    for lat, lon in points:
        _check_latlon(lat, lon)
        x = EARTH_RADIUS_M * math.radians(lon - lon0) * cos0
        y = EARTH_RADIUS_M * math.radians(lat - lat0)
        out.append((x, y))
    return out


def _check_latlon(lat, lon):
    if not (-90.0 <= lat <= 90.0):
        raise OutOfRangeCoordinate(f"latitude {lat} outside [-90, 90]")
    if not (-180.0 <= lon <= 180.0):
        raise OutOfRangeCoordinate(f"longitude {lon} outside [-180, 180]")


def parse_point_predictions(file, catalog: ClassCatalog, origin=None) -> PointPredictionSet:
    """Parse and validate a point-CSV into session-grouped predictions.

    `file` is a path or an open text stream. With the `lat,lon` header
    variant, coordinates are projected via latlon_to_local; `origin`
    defaults to the first point of the lexically first session.
    """
    if hasattr(file, "read"):
        return _parse_stream(file, catalog, origin)
    with open(file, "r", encoding="utf-8", newline="") as fh:
        return _parse_stream(fh, catalog, origin)


def _parse_stream(fh, catalog: ClassCatalog, origin) -> PointPredictionSet:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyFile("no header row") from None
    header = [h.strip() for h in header]

    prob_cols = {}
    for name in catalog.names:
        col = f"prob_{name}"
        if col not in header:
            raise MissingClassColumn(col)
        prob_cols[name] = header.index(col)

    geographic = "lat" in header and "lon" in header
    if geographic:
        xi, yi = header.index("lon"), header.index("lat")
    else:
        for col in ("x", "y"):
            if col not in header:
                raise MissingClassColumn(col)
        xi, yi = header.index("x"), header.index("y")
    for col in ("session_id", "seq"):
        if col not in header:
            raise MissingClassColumn(col)
    si, qi = header.index("session_id"), header.index("seq")

    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise MalformedRow(lineno, f"{len(row)} fields, header has {len(header)}")
        try:
            seq = int(row[qi])
            cx = float(row[xi])
            cy = float(row[yi])
            probs = tuple(float(row[prob_cols[name]]) for name in catalog.names)
        except ValueError as exc:
            raise MalformedRow(lineno, str(exc)) from None
        for name, p in zip(catalog.names, probs):
            if not (0.0 <= p <= 1.0) or math.isnan(p):
                raise ProbabilityOutOfRange(lineno, name, p)
        rows.append((row[si], seq, cx, cy, probs, lineno))
    if not rows:
        raise EmptyFile("no data rows")

    rows.sort(key=lambda r: (r[0], r[1]))

    if geographic:
        if origin is None:
            origin = (rows[0][3], rows[0][2])  # (lat, lon) of first point, first session
        local = latlon_to_local([(r[3], r[2]) for r in rows], origin)
        rows = [(sid, seq, x, y, probs, ln)
                for (sid, seq, _, _, probs, ln), (x, y) in zip(rows, local)]

    pset = PointPredictionSet(catalog=catalog)
    for sid, seq, cx, cy, probs, lineno in rows:
        pts = pset.sessions.setdefault(sid, [])
        if pts and seq <= pts[-1].seq:
            raise MalformedRow(lineno, f"seq {seq} not strictly increasing in session {sid!r}")
        pts.append(PointPrediction(session_id=sid, seq=seq, x=cx, y=cy, probs=probs))
    return pset


def median_consecutive_spacing(session) -> float:
    """Median Euclidean distance between consecutive points of one session.

    Even counts take the mean of the two central order statistics. Accepts
    a list of PointPrediction or an (n, 2) coordinate array.
    """
    if isinstance(session, np.ndarray):
        coords = session.reshape(-1, 2)
    else:
        coords = np.array([(p.x, p.y) for p in session], dtype=np.float64).reshape(-1, 2)
    if coords.shape[0] < 2:
        raise TooFewPoints(f"need at least 2 points, got {coords.shape[0]}")
    d = np.hypot(*(coords[1:] - coords[:-1]).T)
    return float(np.median(d))


def pool_class_values(pset: PointPredictionSet, class_id: int) -> np.ndarray:
    """All probabilities of one class across sessions, ordered by
    (session_id lexical, seq)."""
    if not (0 <= class_id < len(pset.catalog)):
        raise UnknownClass(f"class id {class_id} not in catalog of {len(pset.catalog)}")
    chunks = [
        np.array([p.probs[class_id] for p in pset.sessions[sid]], dtype=np.float64)
        for sid in pset.session_ids
    ]
    if not chunks:
        return np.empty(0, dtype=np.float64)
    return np.concatenate(chunks)


def write_point_csv(path, pset: PointPredictionSet) -> None:
    """Canonical projected-x,y point-CSV, the same format parse accepts."""
    names = pset.catalog.names
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["session_id", "seq", "x", "y"] + [f"prob_{n}" for n in names])
        for sid in pset.session_ids:
            for p in pset.sessions[sid]:
                writer.writerow([sid, p.seq, repr(float(p.x)), repr(float(p.y))]
                                + [repr(float(v)) for v in p.probs])

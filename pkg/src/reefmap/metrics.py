"""Segmentation evaluation: confusion counts, pixel accuracy, per-class and
mean IoU, plus report serialization.

Counting is exact integer accumulation over row blocks (associative merges),
so results are bit-identical for any worker count or chunking.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, LabelOutOfCatalog, NoEvaluatedPixels, NoPresentClasses
from .grids import UNLABELED, ClassCatalog, LabelRaster

_ROW_BLOCK = 512


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel counts, rows = true class, cols = predicted class.

    Pixels whose truth is Unlabeled are excluded entirely. Labeled-truth
    pixels predicted Unlabeled are kept out of the NxN matrix and reported
    in the `unpredicted` spill column so the matrix shape matches the
    usual N-class reporting.
    """

    catalog: ClassCatalog
    counts: np.ndarray = field(repr=False)        # (N, N) int64
    unpredicted: np.ndarray = field(repr=False)   # (N,) int64, pred == 255

    @property
    def evaluated_pixels(self) -> int:
        return int(self.counts.sum())

    def labeled_truth_pixels(self) -> int:
        return int(self.counts.sum() + self.unpredicted.sum())

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.catalog != self.catalog:
            raise LabelOutOfCatalog("cannot add counts over different catalogs")
        return ConfusionCounts(self.catalog, self.counts + other.counts,
                               self.unpredicted + other.unpredicted)


def confusion_matrix(truth: LabelRaster, pred: LabelRaster, catalog: ClassCatalog,
                     workers: int = 1) -> ConfusionCounts:
    if truth.grid != pred.grid:
        raise GridMismatch("truth and prediction are on different grids")
    n = len(catalog)
    for name, raster in (("truth", truth), ("prediction", pred)):
        bad = (raster.labels >= n) & (raster.labels != UNLABELED)
        if bad.any():
            raise LabelOutOfCatalog(
                f"{name} holds {int(bad.sum())} labels outside the {n}-class catalog")
    t = truth.labels
    p = pred.labels

    def tally(r0: int) -> tuple[np.ndarray, np.ndarray]:
        r1 = min(r0 + _ROW_BLOCK, t.shape[0])
        tc = t[r0:r1].ravel()
        pc = p[r0:r1].ravel()
        keep = tc != UNLABELED
        tc, pc = tc[keep], pc[keep]
        spilled = pc == UNLABELED
        spill = np.bincount(tc[spilled].astype(np.int64), minlength=n)
        tc, pc = tc[~spilled], pc[~spilled]
        idx = tc.astype(np.int64) * n + pc
        return np.bincount(idx, minlength=n * n).reshape(n, n), spill

    starts = range(0, t.shape[0], _ROW_BLOCK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(tally, starts))
    else:
        parts = [tally(r0) for r0 in starts]
    counts = np.zeros((n, n), dtype=np.int64)
    spill = np.zeros(n, dtype=np.int64)
    for c, s in parts:
        counts += c
        spill += s
    return ConfusionCounts(catalog=catalog, counts=counts, unpredicted=spill)


def normalize_confusion(cc: ConfusionCounts) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic matrix (percentage of true-class pixels per predicted
    class) and a per-row presence flag; all-zero rows stay zero."""
    row_sums = cc.counts.sum(axis=1)
    present = row_sums > 0
    norm = np.zeros_like(cc.counts, dtype=np.float64)
    norm[present] = cc.counts[present] / row_sums[present, None]
    return norm, present


def pixel_accuracy(cc: ConfusionCounts) -> float:
    if cc.evaluated_pixels == 0:
        raise NoEvaluatedPixels("no labeled pixels were evaluated")
    return float(np.trace(cc.counts) / cc.evaluated_pixels)


def iou_per_class(cc: ConfusionCounts) -> np.ndarray:
    """IoU_c = TP / (TP + FP + FN); NaN marks classes with an empty union
    (absent from both truth and prediction, printed as "/").

    Labeled-truth pixels that were predicted Unlabeled count as false
    negatives of their true class.
    """
    tp = np.diag(cc.counts).astype(np.float64)
    fp = cc.counts.sum(axis=0) - tp
    fn = cc.counts.sum(axis=1) - tp + cc.unpredicted
    union = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / np.maximum(union, 1e-300), np.nan)
    return iou


def mean_iou(ious) -> float:
    """Arithmetic mean over present classes only (NaN entries excluded)."""
    vals = np.asarray(ious, dtype=np.float64).ravel()
    present = ~np.isnan(vals)
    if not present.any():
        raise NoPresentClasses("every class has an empty union")
    return float(vals[present].mean())


@dataclass(frozen=True)
class EvalReport:
    catalog: ClassCatalog
    accuracy: float
    iou: np.ndarray                   # (N,), NaN = absent
    mean_iou: float
    normalized_confusion: np.ndarray  # (N, N) row-stochastic
    present: np.ndarray               # (N,) bool, truth rows with pixels
    evaluated_pixels: int
    unpredicted_pixels: int

    def to_json(self) -> dict:
        def cell(v):
            return None if np.isnan(v) else round(float(v), 6)

        return {
            "accuracy": round(self.accuracy, 6),
            "mean_iou": round(self.mean_iou, 6),
            "iou_per_class": {n: cell(v) for n, v in zip(self.catalog.names, self.iou)},
            "normalized_confusion": [[round(float(v), 6) for v in row]
                                     for row in self.normalized_confusion],
            "class_names": list(self.catalog.names),
            "evaluated_pixels": self.evaluated_pixels,
            "unpredicted_pixels": self.unpredicted_pixels,
            # pooled pixels across everything evaluated; an alternative
            # would average per-zone metrics instead
            "totals_policy": "pooled_pixels",
        }


def evaluate(truth: LabelRaster, pred: LabelRaster, catalog: ClassCatalog,
             workers: int = 1) -> EvalReport:
    cc = confusion_matrix(truth, pred, catalog, workers=workers)
    norm, present = normalize_confusion(cc)
    iou = iou_per_class(cc)
    return EvalReport(
        catalog=catalog,
        accuracy=pixel_accuracy(cc),
        iou=iou,
        mean_iou=mean_iou(iou),
        normalized_confusion=norm,
        present=present,
        evaluated_pixels=cc.evaluated_pixels,
        unpredicted_pixels=int(cc.unpredicted.sum()),
    )


def render_table(report: EvalReport, zone: str = "evaluated") -> str:
    """Plain-text table: accuracy, mean IoU, then per-class IoU ("/" for
    classes absent from both truth and prediction)."""
    headers = ["Zone", "Accuracy", "Mean IoU"] + [c.name for c in report.catalog.classes]
    row = [zone, f"{report.accuracy:.4f}", f"{report.mean_iou:.4f}"]
    row += ["/" if np.isnan(v) else f"{v:.4f}" for v in report.iou]
    widths = [max(len(h), len(r)) for h, r in zip(headers, row)]
    line = lambda cells: "  ".join(c.ljust(w) for c, w in zip(cells, widths))  # noqa: E731
    return "\n".join([line(headers), line(["-" * w for w in widths]), line(row)])


def confusion_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\pred"] + list(report.catalog.names))
    for name, row in zip(report.catalog.names, report.normalized_confusion):
        writer.writerow([name] + [f"{v:.6f}" for v in row])
    return buf.getvalue()


def save_report(report: EvalReport, json_path=None, text_path=None, csv_path=None) -> None:
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    if text_path is not None:
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(render_table(report) + "\n")
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(confusion_to_csv(report))

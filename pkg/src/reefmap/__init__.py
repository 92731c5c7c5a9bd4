"""reefmap: coarse segmentation labels, training datasets and analytics from
georeferenced point-level class-probability predictions."""

from .annotate import (
    NormalizationParams,
    QuantileStats,
    argmax_label,
    fit_normalization,
    normalize_raster,
    quantile_stats,
    upsample_nearest,
)
from .grids import (
    UNLABELED,
    ClassCatalog,
    GridSpec,
    LabelRaster,
    ProbabilityRaster,
    grid_from_extent,
    world_to_pixel,
)
from .ingest import (
    PointPrediction,
    PointPredictionSet,
    latlon_to_local,
    median_consecutive_spacing,
    parse_point_predictions,
    pool_class_values,
)
from .interpolate import (
    Triangulation,
    delaunay_triangulate,
    interpolate_linear,
    merge_session_rasters,
)
from .metrics import (
    ConfusionCounts,
    EvalReport,
    confusion_matrix,
    evaluate,
    iou_per_class,
    mean_iou,
    normalize_confusion,
    pixel_accuracy,
)

__version__ = "0.1.0"

__all__ = [
    "UNLABELED",
    "ClassCatalog",
    "ConfusionCounts",
    "EvalReport",
    "GridSpec",
    "LabelRaster",
    "NormalizationParams",
    "PointPrediction",
    "PointPredictionSet",
    "ProbabilityRaster",
    "QuantileStats",
    "Triangulation",
    "argmax_label",
    "confusion_matrix",
    "delaunay_triangulate",
    "evaluate",
    "fit_normalization",
    "grid_from_extent",
    "interpolate_linear",
    "iou_per_class",
    "latlon_to_local",
    "mean_iou",
    "median_consecutive_spacing",
    "merge_session_rasters",
    "normalize_confusion",
    "normalize_raster",
    "parse_point_predictions",
    "pixel_accuracy",
    "pool_class_values",
    "quantile_stats",
    "upsample_nearest",
    "world_to_pixel",
]

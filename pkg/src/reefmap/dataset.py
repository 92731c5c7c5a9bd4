"""Training-dataset construction and refine/distill round management.

A round lives under `round_<n>/` inside a dataset directory: label patches
as GRF tiles, a manifest.json describing every tile (geometry, histogram,
replication, split, content hash) and a train_config.json for the external
trainer. Predicted or refined masks come back under `round_<n>/pred/` and
feed the next round; manifests chain by content hash so any tampering with
referenced files is detectable.

The trainer itself is out of scope: the boundary is (tiles + config) out,
(masks) in.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import grf
from .errors import (
    BadNoiseRate,
    ExtraMask,
    GridMismatch,
    InputError,
    InvalidWeights,
    LabelOutOfCatalog,
    MissingMask,
    NoLabeledPixels,
    SizeMismatch,
    TileTooSmall,
    VerificationFailed,
)
from .grids import UNLABELED, ClassCatalog, GridSpec, LabelRaster

MANIFEST_FORMAT = "reefmap-manifest-v1"
DEFAULT_TILE_SIZE = 512
DEFAULT_MIN_LABELED = 0.5
DEFAULT_MAX_REPLICATION = 10
DEFAULT_VAL_FRACTION = 0.1
RARE_CLASS_LOSS_WEIGHT = 7.0  # extra Dice penalty for the Sea Cucumber class
RARE_LOSS_CLASS_NAME = "Sea Cucumber"


@dataclass(frozen=True)
class Tile:
    tile_id: str
    col: int                 # pixel origin in the source grid
    row: int
    size: int
    labeled_fraction: float
    histogram: tuple[int, ...]
    replication: int = 1
    split: str = "train"
    sha256: str | None = None

    def to_json(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "col": self.col,
            "row": self.row,
            "size": self.size,
            "labeled_fraction": self.labeled_fraction,
            "histogram": list(self.histogram),
            "replication": self.replication,
            "split": self.split,
            "file": f"tiles/{self.tile_id}.grf",
            "sha256": self.sha256,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Tile":
        return cls(
            tile_id=d["tile_id"], col=int(d["col"]), row=int(d["row"]), size=int(d["size"]),
            labeled_fraction=float(d["labeled_fraction"]),
            histogram=tuple(int(v) for v in d["histogram"]),
            replication=int(d["replication"]), split=d["split"], sha256=d.get("sha256"),
        )


@dataclass
class TileManifest:
    """Versioned description of one training-dataset round.

    `patches` carries the in-memory label patches between construction and
    `write_round`; it is never serialized.
    """

    round: int
    catalog: ClassCatalog
    grid: GridSpec
    tile_size: int
    min_labeled_fraction: float
    class_loss_weights: tuple[float, ...]
    replication_weights: tuple[float, ...]
    val_fraction: float
    tiles: list[Tile]
    parent_hash: str | None = None
    patches: dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def tile_ids(self) -> list[str]:
        return [t.tile_id for t in self.tiles]

    def to_json(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "round": self.round,
            "parent_hash": self.parent_hash,
            "catalog": self.catalog.to_json(),
            "grid": self.grid.to_dict(),
            "tile_size": self.tile_size,
            "min_labeled_fraction": self.min_labeled_fraction,
            "class_loss_weights": list(self.class_loss_weights),
            "replication_weights": list(self.replication_weights),
            "val_fraction": self.val_fraction,
            "tiles": [t.to_json() for t in self.tiles],
        }

    def canonical_bytes(self) -> bytes:
        return (json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")) + "\n").encode()

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    @classmethod
    def from_json(cls, doc: dict) -> "TileManifest":
        if doc.get("format") != MANIFEST_FORMAT:
            raise InputError(f"unknown manifest format {doc.get('format')!r}")
        return cls(
            round=int(doc["round"]),
            catalog=ClassCatalog.from_json(doc["catalog"]),
            grid=GridSpec.from_dict(doc["grid"]),
            tile_size=int(doc["tile_size"]),
            min_labeled_fraction=float(doc["min_labeled_fraction"]),
            class_loss_weights=tuple(float(w) for w in doc["class_loss_weights"]),
            replication_weights=tuple(float(w) for w in doc["replication_weights"]),
            val_fraction=float(doc["val_fraction"]),
            tiles=[Tile.from_json(t) for t in doc["tiles"]],
            parent_hash=doc.get("parent_hash"),
        )


def _split_of(tile_id: str, val_fraction: float) -> str:
    """Deterministic train/val split keyed on the tile id alone."""
    bucket = int.from_bytes(hashlib.sha256(tile_id.encode()).digest()[:8], "big") % 100
    return "val" if bucket < round(val_fraction * 100) else "train"


def default_class_loss_weights(catalog: ClassCatalog) -> tuple[float, ...]:
    """Dice-loss class weights: 1.0 everywhere, with the extra penalty for
    the manually added rare class when the catalog carries it."""
    return tuple(
        RARE_CLASS_LOSS_WEIGHT if c.name == RARE_LOSS_CLASS_NAME else 1.0
        for c in catalog.classes
    )


def _tile_stats(patch: np.ndarray, n_classes: int) -> tuple[float, tuple[int, ...]]:
    labeled = patch != UNLABELED
    hist = np.bincount(patch[labeled].astype(np.int64), minlength=n_classes)
    frac = float(labeled.sum() / patch.size)
    return frac, tuple(int(v) for v in hist)


def extract_tiles(labels: LabelRaster, catalog: ClassCatalog,
                  size: int = DEFAULT_TILE_SIZE,
                  min_labeled_fraction: float = DEFAULT_MIN_LABELED,
                  val_fraction: float = DEFAULT_VAL_FRACTION) -> TileManifest:
    """Cut a round-0 manifest of non-overlapping tiles on a regular lattice.

    Edge tiles are padded with Unlabeled; tiles whose labeled fraction falls
    below the threshold are dropped (they carry no Dice signal).
    """
    if size < 32:
        raise TileTooSmall(f"tile size must be >= 32, got {size}")
    labels.check_catalog(catalog)
    n = len(catalog)
    h, w = labels.labels.shape
    tiles: list[Tile] = []
    patches: dict[str, np.ndarray] = {}
    for row0 in range(0, h, size):
        for col0 in range(0, w, size):
            patch = np.full((size, size), UNLABELED, dtype=np.uint8)
            part = labels.labels[row0:row0 + size, col0:col0 + size]
            patch[:part.shape[0], :part.shape[1]] = part
            frac, hist = _tile_stats(patch, n)
            if frac < min_labeled_fraction:
                continue
            tile_id = f"t{row0 // size:04d}_{col0 // size:04d}"
            tiles.append(Tile(
                tile_id=tile_id, col=col0, row=row0, size=size,
                labeled_fraction=frac, histogram=hist,
                split=_split_of(tile_id, val_fraction),
            ))
            patches[tile_id] = patch
    manifest = TileManifest(
        round=0,
        catalog=catalog,
        grid=labels.grid,
        tile_size=size,
        min_labeled_fraction=min_labeled_fraction,
        class_loss_weights=default_class_loss_weights(catalog),
        replication_weights=tuple(0.0 for _ in range(n)),
        val_fraction=val_fraction,
        tiles=tiles,
        patches=patches,
    )
    return _reweight(manifest)


def rare_class_weights(labels: LabelRaster, catalog: ClassCatalog) -> np.ndarray:
    """w_c = median(pixel count over present classes) / count_c; absent
    classes get 0. Rare classes end up with large weights."""
    labels.check_catalog(catalog)
    counts = np.bincount(labels.labels[labels.labeled_mask].astype(np.int64),
                         minlength=len(catalog))
    return _weights_from_counts(counts)


def _weights_from_counts(counts: np.ndarray) -> np.ndarray:
    present = counts > 0
    if not present.any():
        raise NoLabeledPixels("no labeled pixels")
    med = float(np.median(counts[present]))
    weights = np.zeros(len(counts), dtype=np.float64)
    weights[present] = med / counts[present]
    return weights


def apply_replication(manifest: TileManifest, weights,
                      max_rep: int = DEFAULT_MAX_REPLICATION) -> TileManifest:
    """Set each tile's replication to clamp(round(max weight over classes
    present in the tile), 1, max_rep). Integer duplication keeps the
    oversampling reproducible by any trainer without shared RNG state."""
    weights = np.asarray(weights, dtype=np.float64)
    new_tiles = []
    for t in manifest.tiles:
        hist = np.asarray(t.histogram)
        present = hist > 0
        rep = 1
        if present.any():
            w = float(weights[:len(hist)][present].max())
            rep = int(min(max(math.floor(w + 0.5), 1), max_rep))
        new_tiles.append(replace(t, replication=rep))
    return replace(manifest, tiles=new_tiles,
                   replication_weights=tuple(float(v) for v in weights))


def _reweight(manifest: TileManifest, max_rep: int = DEFAULT_MAX_REPLICATION) -> TileManifest:
    """Recompute rare-class weights from the pooled tile histograms and
    refresh every tile's replication count."""
    n = len(manifest.catalog)
    totals = np.zeros(n, dtype=np.int64)
    for t in manifest.tiles:
        totals += np.asarray(t.histogram, dtype=np.int64)
    if not (totals > 0).any():
        return manifest
    return apply_replication(manifest, _weights_from_counts(totals), max_rep=max_rep)


def merge_manual_annotations(labels: LabelRaster, manual: LabelRaster) -> LabelRaster:
    """Overlay manual labels onto machine labels; manual wins on conflict."""
    if labels.grid != manual.grid:
        raise GridMismatch("manual annotations are on a different grid")
    merged = np.where(manual.labels != UNLABELED, manual.labels, labels.labels)
    return LabelRaster(grid=labels.grid, labels=merged)


@dataclass(frozen=True)
class TrainerHyperparams:
    """Defaults match the published training setup; the external trainer
    consumes these verbatim."""

    loss: str = "weighted_dice"
    optimizer: str = "adam"
    tile_size: int = DEFAULT_TILE_SIZE
    batch_size: int = 16
    learning_rate: float = 1e-5
    lr_decay_factor: float = 0.1
    lr_plateau_patience_epochs: int = 5


def emit_training_config(manifest: TileManifest,
                         hyper: TrainerHyperparams = TrainerHyperparams(),
                         path=None) -> dict:
    weights = manifest.class_loss_weights
    if any(w < 0 for w in weights):
        raise InvalidWeights(f"negative class loss weight in {weights}")
    train_tiles: list[str] = []
    for t in manifest.tiles:
        if t.split == "train":
            train_tiles.extend([t.tile_id] * t.replication)
    config = {
        "loss": hyper.loss,
        "optimizer": hyper.optimizer,
        "class_names": list(manifest.catalog.names),
        "class_loss_weights": list(weights),
        "tile_size": hyper.tile_size,
        "batch_size": hyper.batch_size,
        "learning_rate": hyper.learning_rate,
        "lr_decay_factor": hyper.lr_decay_factor,
        "lr_plateau_patience_epochs": hyper.lr_plateau_patience_epochs,
        "unlabeled_value": UNLABELED,
        "round": manifest.round,
        "train_tiles": train_tiles,
        "val_tiles": [t.tile_id for t in manifest.tiles if t.split == "val"],
    }
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(config, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return config


def mock_segment(truth: dict[str, np.ndarray], noise_rate: float, seed: int,
                 catalog: ClassCatalog) -> dict[str, np.ndarray]:
    """Test double for the external student model: each labeled pixel is
    independently resampled to a uniformly random catalog label with
    probability noise_rate (Unlabeled padding stays Unlabeled)."""
    if not (0.0 <= noise_rate <= 1.0):
        raise BadNoiseRate(f"noise rate must be in [0,1], got {noise_rate}")
    rng = np.random.default_rng(seed)
    n = len(catalog)
    out = {}
    for tile_id in sorted(truth):
        patch = truth[tile_id].copy()
        labeled = patch != UNLABELED
        flip = rng.random(patch.shape) < noise_rate
        resampled = rng.integers(0, n, size=patch.shape, dtype=np.int64).astype(np.uint8)
        patch = np.where(flip & labeled, resampled, patch)
        out[tile_id] = patch
    return out


def distill_round(manifest: TileManifest, predicted_masks: dict[str, np.ndarray],
                  max_rep: int = DEFAULT_MAX_REPLICATION) -> TileManifest:
    """Next-round manifest with annotations replaced by the (externally
    refined or raw) predicted masks. Tile geometry is preserved exactly;
    histograms, labeled fractions and replication are recomputed; the
    parent hash pins the source manifest."""
    want = set(manifest.tile_ids())
    have = set(predicted_masks)
    missing = sorted(want - have)
    if missing:
        raise MissingMask(missing[0])
    extra = sorted(have - want)
    if extra:
        raise ExtraMask(extra[0])
    n = len(manifest.catalog)
    new_tiles = []
    patches = {}
    for t in manifest.tiles:
        mask = np.asarray(predicted_masks[t.tile_id])
        if mask.shape != (t.size, t.size):
            raise SizeMismatch(
                f"tile {t.tile_id}: mask shape {mask.shape}, expected {(t.size, t.size)}")
        if mask.dtype != np.uint8:
            mask = mask.astype(np.uint8)
        bad = (mask >= n) & (mask != UNLABELED)
        if bad.any():
            raise LabelOutOfCatalog(
                f"tile {t.tile_id}: {int(bad.sum())} labels outside the {n}-class catalog")
        frac, hist = _tile_stats(mask, n)
        new_tiles.append(replace(t, labeled_fraction=frac, histogram=hist, sha256=None))
        patches[t.tile_id] = mask.copy()
    child = replace(manifest, round=manifest.round + 1, tiles=new_tiles,
                    parent_hash=manifest.content_hash(), patches=patches)
    return _reweight(child, max_rep=max_rep)


# ---------------------------------------------------------------------------
# round directories
# ---------------------------------------------------------------------------

def round_dir(dataset_dir, round_no: int) -> Path:
    return Path(dataset_dir) / f"round_{round_no}"


def _tile_grid(manifest: TileManifest, t: Tile) -> GridSpec:
    g = manifest.grid
    return GridSpec(
        origin_x=g.origin_x + t.col * g.spacing,
        origin_y=g.origin_y - t.row * g.spacing,
        spacing=g.spacing, width=t.size, height=t.size, crs_tag=g.crs_tag,
    )


def write_round(dataset_dir, manifest: TileManifest,
                hyper: TrainerHyperparams = TrainerHyperparams()) -> TileManifest:
    """Write tiles, manifest.json and train_config.json; returns the
    manifest with per-tile content hashes filled in."""
    rd = round_dir(dataset_dir, manifest.round)
    (rd / "tiles").mkdir(parents=True, exist_ok=True)
    hashed = []
    for t in manifest.tiles:
        patch = manifest.patches.get(t.tile_id)
        if patch is None:
            raise MissingMask(t.tile_id)
        path = rd / "tiles" / f"{t.tile_id}.grf"
        grf.write_labels(path, LabelRaster(grid=_tile_grid(manifest, t), labels=patch))
        hashed.append(replace(t, sha256=grf.sha256_file(path)))
    final = replace(manifest, tiles=hashed)
    (rd / "manifest.json").write_bytes(final.canonical_bytes())
    emit_training_config(final, hyper, path=rd / "train_config.json")
    return final


def load_round(dataset_dir, round_no: int) -> TileManifest:
    rd = round_dir(dataset_dir, round_no)
    doc = json.loads((rd / "manifest.json").read_text(encoding="utf-8"))
    manifest = TileManifest.from_json(doc)
    for t in manifest.tiles:
        raster = grf.read_labels(rd / "tiles" / f"{t.tile_id}.grf")
        manifest.patches[t.tile_id] = raster.labels
    return manifest


def load_pred_masks(dataset_dir, round_no: int, manifest: TileManifest) -> dict[str, np.ndarray]:
    """Predicted/refined masks for every manifest tile from round_<n>/pred/."""
    pd = round_dir(dataset_dir, round_no) / "pred"
    masks = {}
    for t in manifest.tiles:
        path = pd / f"{t.tile_id}.grf"
        if not path.exists():
            raise MissingMask(t.tile_id)
        masks[t.tile_id] = grf.read_labels(path).labels
    return masks


def write_pred_masks(dataset_dir, round_no: int, manifest: TileManifest,
                     masks: dict[str, np.ndarray]) -> None:
    pd = round_dir(dataset_dir, round_no) / "pred"
    pd.mkdir(parents=True, exist_ok=True)
    by_id = {t.tile_id: t for t in manifest.tiles}
    for tile_id in sorted(masks):
        t = by_id.get(tile_id)
        if t is None:
            raise ExtraMask(tile_id)
        raster = LabelRaster(grid=_tile_grid(manifest, t), labels=masks[tile_id])
        grf.write_labels(pd / f"{tile_id}.grf", raster)


def verify_round(dataset_dir, round_no: int) -> None:
    """Check the round's hash chain down to round 0.

    Raises VerificationFailed if any referenced tile file or ancestor
    manifest no longer matches its recorded hash.
    """
    rd = round_dir(dataset_dir, round_no)
    doc = json.loads((rd / "manifest.json").read_text(encoding="utf-8"))
    manifest = TileManifest.from_json(doc)
    if manifest.round != round_no:
        raise VerificationFailed(
            f"round_{round_no}/manifest.json claims round {manifest.round}")
    for t in manifest.tiles:
        path = rd / "tiles" / f"{t.tile_id}.grf"
        if not path.exists():
            raise VerificationFailed(f"round {round_no}: missing tile file {path}")
        actual = grf.sha256_file(path)
        if actual != t.sha256:
            raise VerificationFailed(
                f"round {round_no}: tile {t.tile_id} content hash mismatch")
    if manifest.parent_hash is not None:
        parent_path = round_dir(dataset_dir, round_no - 1) / "manifest.json"
        if not parent_path.exists():
            raise VerificationFailed(f"round {round_no}: parent manifest missing")
        actual = hashlib.sha256(parent_path.read_bytes()).hexdigest()
        if actual != manifest.parent_hash:
            raise VerificationFailed(
                f"round {round_no}: parent manifest hash mismatch")
        verify_round(dataset_dir, round_no - 1)

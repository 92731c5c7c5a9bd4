"""Command-line pipeline: points in, labels, datasets and reports out.

Stages write under `<workdir>/<stage>/` with content hashes recorded in a
stamp file, so re-running a stage on unchanged inputs is a no-op and every
output is byte-stable for any `--workers` value.

Defaults can come from a single JSON config file (`--config run.json`);
explicit flags always win over config values, which win over built-ins.

Exit codes: 0 success, 2 usage, 3 invalid input, 4 data inconsistency,
5 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analytics, annotate, dataset, grf, ingest, metrics, pipeline, synth
from .errors import DataMismatchError, InputError, ReefmapError
from .grids import ClassCatalog, GridSpec

log = logging.getLogger("reefmap")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_MISMATCH = 4
EXIT_IO = 5

#: config keys that name files which must exist when the command starts
_PATH_KEYS = ("input", "catalog", "truth", "pred", "points", "like", "config")


@dataclass(frozen=True)
class PipelineConfig:
    """Defaults loaded from a JSON config file; flags override these."""

    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise InputError(f"{path}: config must be a JSON object")
        cfg = cls(values=doc)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for key in _PATH_KEYS:
            value = self.values.get(key)
            if value is not None and not Path(value).exists():
                raise InputError(f"config {key}={value!r}: path does not exist")
        eps = self.values.get("epsilon")
        if eps is not None and not float(eps) > 0:
            raise InputError(f"config epsilon must be > 0, got {eps}")
        workers = self.values.get("workers")
        if workers is not None and int(workers) < 1:
            raise InputError(f"config workers must be >= 1, got {workers}")

    def apply_to(self, subparser: argparse.ArgumentParser) -> None:
        """Install config values as defaults for the options this subcommand
        actually has; unknown keys are left for other subcommands."""
        dests = {a.dest for a in subparser._actions}
        covered = {k: v for k, v in self.values.items() if k in dests}
        subparser.set_defaults(**covered)
        for action in subparser._actions:
            if action.dest in covered and getattr(action, "required", False):
                action.required = False


# ---------------------------------------------------------------------------
# workdir helpers
# ---------------------------------------------------------------------------

def _workdir(args) -> Path:
    wd = args.workdir or os.environ.get("REEF_WORKDIR")
    if not wd:
        raise InputError("no workdir: pass --workdir or set REEF_WORKDIR")
    return Path(wd)


def _stage_dir(args, stage: str) -> Path:
    d = _workdir(args) / stage
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_catalog(args) -> ClassCatalog:
    if getattr(args, "catalog", None):
        return ClassCatalog.load(args.catalog)
    return ClassCatalog.default()


def _hash_paths(paths) -> dict[str, str]:
    out = {}
    for p in sorted(str(p) for p in paths):
        out[p] = grf.sha256_file(p) if Path(p).is_file() else "missing"
    return out


def _stamp_path(stage_dir: Path) -> Path:
    return stage_dir / "stage.stamp.json"


def _up_to_date(stage_dir: Path, inputs: dict[str, str]) -> bool:
    stamp = _stamp_path(stage_dir)
    if not stamp.exists():
        return False
    try:
        doc = json.loads(stamp.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if doc.get("inputs") != inputs:
        return False
    for path, digest in doc.get("outputs", {}).items():
        if not Path(path).is_file() or grf.sha256_file(path) != digest:
            return False
    return True


def _write_stamp(stage_dir: Path, inputs: dict[str, str], outputs) -> None:
    doc = {"inputs": inputs, "outputs": _hash_paths(outputs)}
    _stamp_path(stage_dir).write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _find_points_csv(args) -> Path:
    if getattr(args, "input", None):
        return Path(args.input)
    wd = _workdir(args)
    for candidate in (wd / "ingest" / "points.csv", wd / "synth" / "points.csv"):
        if candidate.exists():
            return candidate
    raise InputError("no point CSV found; pass --input or run ingest/synth first")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    catalog = _load_catalog(args)
    out = _stage_dir(args, "synth")
    scene = synth.synth_scene(seed=args.seed, extent=args.extent,
                              transect_spacing=args.transect_spacing,
                              point_step=args.point_step, catalog=catalog,
                              noise=args.noise)
    ingest.write_point_csv(out / "points.csv", scene.points)
    grf.write_labels(out / "truth.grf", scene.ground_truth)
    grf.write_label_png(out / "truth.png", scene.ground_truth, catalog)
    _write_stamp(out, {"seed": str(args.seed), "noise": repr(args.noise)},
                 [out / "points.csv", out / "truth.grf"])
    log.info("synth: %d points, %dx%d truth grid",
             scene.points.total_points(),
             scene.ground_truth.grid.width, scene.ground_truth.grid.height)
    return EXIT_OK


def cmd_ingest(args) -> int:
    catalog = _load_catalog(args)
    out = _stage_dir(args, "ingest")
    src = Path(args.input)
    inputs = _hash_paths([src])
    if _up_to_date(out, inputs):
        log.info("ingest: up to date")
        return EXIT_OK
    origin = tuple(float(v) for v in args.origin.split(",")) if args.origin else None
    pset = ingest.parse_point_predictions(src, catalog, origin=origin)
    ingest.write_point_csv(out / "points.csv", pset)
    summary = {
        "sessions": {
            sid: {
                "points": len(pset.sessions[sid]),
                "median_consecutive_spacing_m":
                    ingest.median_consecutive_spacing(pset.sessions[sid])
                    if len(pset.sessions[sid]) >= 2 else None,
            }
            for sid in pset.session_ids
        },
        "total_points": pset.total_points(),
    }
    _write_json(out / "summary.json", summary)
    _write_stamp(out, inputs, [out / "points.csv", out / "summary.json"])
    log.info("ingest: %d points in %d sessions", pset.total_points(), len(pset.sessions))
    return EXIT_OK


def cmd_spacing(args) -> int:
    catalog = _load_catalog(args)
    pset = ingest.parse_point_predictions(_find_points_csv(args), catalog)
    per_session = {
        sid: ingest.median_consecutive_spacing(pset.sessions[sid])
        for sid in pset.session_ids if len(pset.sessions[sid]) >= 2
    }
    doc = {
        "per_session": per_session,
        "overall_median": float(np.median(list(per_session.values()))) if per_session else None,
    }
    print(json.dumps(doc, sort_keys=True, indent=2))
    if args.workdir or os.environ.get("REEF_WORKDIR"):
        _write_json(_stage_dir(args, "spacing") / "spacing.json", doc)
    return EXIT_OK


def _rasterize_task(task):
    (sid, class_id, coords, values, grid_dict) = task
    from .interpolate import delaunay_triangulate, interpolate_linear

    grid = GridSpec.from_dict(grid_dict)
    tri = delaunay_triangulate(coords)
    raster = interpolate_linear(tri, tri.collapse_values(values), grid, class_id=class_id)
    return sid, class_id, raster.values


def cmd_rasterize(args) -> int:
    catalog = _load_catalog(args)
    src = _find_points_csv(args)
    out = _stage_dir(args, "rasterize")
    inputs = _hash_paths([src])
    inputs["grid_spacing"] = repr(args.grid_spacing)
    if _up_to_date(out, inputs):
        log.info("rasterize: up to date")
        return EXIT_OK
    pset = ingest.parse_point_predictions(src, catalog)
    grid = pipeline.default_grid(pset, spacing=args.grid_spacing)
    n = len(catalog)

    tasks = []
    for sid in pset.session_ids:
        coords = pset.session_coords(sid)
        probs = pset.session_probs(sid)
        for c in range(n):
            tasks.append((sid, c, coords, probs[:, c], grid.to_dict()))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_rasterize_task, tasks))
    else:
        results = [_rasterize_task(t) for t in tasks]

    from .grids import ProbabilityRaster
    from .interpolate import merge_session_rasters

    outputs = []
    per_class: dict[int, list[ProbabilityRaster]] = {c: [] for c in range(n)}
    for sid, c, values in results:
        raster = ProbabilityRaster(grid=grid, class_id=c, values=values)
        per_class[c].append(raster)
        path = out / f"{sid}_{c}.grf"
        grf.write_probability(path, raster)
        outputs += [path, grf.sidecar_path(path)]
    for c in range(n):
        merged = merge_session_rasters(per_class[c])
        path = out / f"merged_{c}.grf"
        grf.write_probability(path, merged)
        outputs += [path, grf.sidecar_path(path)]
    _write_stamp(out, inputs, outputs)
    log.info("rasterize: %d sessions x %d classes on %dx%d grid (spacing %.4g m)",
             len(pset.sessions), n, grid.width, grid.height, grid.spacing)
    return EXIT_OK


def cmd_normalize(args) -> int:
    catalog = _load_catalog(args)
    src = _find_points_csv(args)
    rdir = Path(args.rasters) if args.rasters else _workdir(args) / "rasterize"
    out = _stage_dir(args, "normalize")
    n = len(catalog)
    merged_paths = [rdir / f"merged_{c}.grf" for c in range(n)]
    inputs = _hash_paths([src] + merged_paths)
    inputs["percentiles"] = args.percentiles
    inputs["epsilon"] = repr(args.epsilon)
    if _up_to_date(out, inputs):
        log.info("normalize: up to date")
        return EXIT_OK
    p_low, p_high = (float(v) for v in args.percentiles.split(","))
    pset = ingest.parse_point_predictions(src, catalog)
    params = annotate.fit_normalization(pset, p_low, p_high, args.epsilon)
    params.save(out / "normalization.json")
    outputs = [out / "normalization.json"]
    for c in range(n):
        raster = grf.read_probability(merged_paths[c], class_id=c)
        norm = annotate.normalize_raster(raster, params.stats[c], params.epsilon)
        path = out / f"norm_{c}.grf"
        grf.write_probability(path, norm)
        outputs += [path, grf.sidecar_path(path)]
    _write_stamp(out, inputs, outputs)
    log.info("normalize: %d classes rescaled", n)
    return EXIT_OK


def cmd_label(args) -> int:
    catalog = _load_catalog(args)
    ndir = Path(args.rasters) if args.rasters else _workdir(args) / "normalize"
    out = _stage_dir(args, "label")
    n = len(catalog)
    norm_paths = [ndir / f"norm_{c}.grf" for c in range(n)]
    inputs = _hash_paths(norm_paths)
    if _up_to_date(out, inputs):
        log.info("label: up to date")
        return EXIT_OK
    rasters = [grf.read_probability(p, class_id=c) for c, p in enumerate(norm_paths)]
    labels = annotate.argmax_label(rasters, catalog)
    grf.write_labels(out / "labels.grf", labels)
    grf.write_label_png(out / "labels.png", labels, catalog)
    _write_json(out / "labels.json",
                {"unlabeled_fraction": labels.unlabeled_fraction()})
    _write_stamp(out, inputs, [out / "labels.grf"])
    log.info("label: unlabeled fraction %.3f", labels.unlabeled_fraction())
    return EXIT_OK


def cmd_upsample(args) -> int:
    catalog = _load_catalog(args)
    src = Path(args.input) if args.input else _workdir(args) / "label" / "labels.grf"
    out = _stage_dir(args, "upsample")
    labels = grf.read_labels(src)
    if args.like:
        meta = json.loads(Path(args.like).read_text(encoding="utf-8")) \
            if str(args.like).endswith(".json") \
            else json.loads(grf.sidecar_path(args.like).read_text(encoding="utf-8"))
        dst_grid = GridSpec.from_dict(meta)
    elif args.target_spacing:
        g = labels.grid
        ratio = g.spacing / args.target_spacing
        dst_grid = GridSpec(origin_x=g.origin_x, origin_y=g.origin_y,
                            spacing=args.target_spacing,
                            width=int(round(g.width * ratio)),
                            height=int(round(g.height * ratio)), crs_tag=g.crs_tag)
    else:
        raise InputError("pass --target-spacing or --like")
    fine = annotate.upsample_nearest(labels, dst_grid)
    grf.write_labels(out / "labels_fine.grf", fine)
    grf.write_label_png(out / "labels_fine.png", fine, catalog)
    log.info("upsample: %dx%d -> %dx%d", labels.grid.width, labels.grid.height,
             dst_grid.width, dst_grid.height)
    return EXIT_OK


def _build_round0(args) -> int:
    catalog = _load_catalog(args)
    src = Path(args.input) if args.input else _workdir(args) / "label" / "labels.grf"
    ddir = _stage_dir(args, "dataset")
    labels = grf.read_labels(src)
    manifest = dataset.extract_tiles(labels, catalog, size=args.tile_size,
                                     min_labeled_fraction=args.min_labeled)
    written = dataset.write_round(ddir, manifest)
    log.info("tile: round 0 with %d tiles under %s", len(written.tiles),
             dataset.round_dir(ddir, 0))
    return EXIT_OK


def cmd_tile(args) -> int:
    return _build_round0(args)


def cmd_distill(args) -> int:
    if args.action == "init":
        return _build_round0(args)
    ddir = _workdir(args) / "dataset"
    round_no = args.round
    if round_no is None:
        rounds = sorted(int(p.name.split("_")[1]) for p in ddir.glob("round_*"))
        if not rounds:
            raise InputError(f"no rounds under {ddir}; run tile/distill init first")
        round_no = rounds[-1]
    manifest = dataset.load_round(ddir, round_no)
    pred_dir = dataset.round_dir(ddir, round_no) / "pred"
    if not pred_dir.exists() and args.mock_noise is not None:
        masks = dataset.mock_segment(manifest.patches, args.mock_noise, args.seed,
                                     manifest.catalog)
        dataset.write_pred_masks(ddir, round_no, manifest, masks)
        log.info("distill: wrote mock predictions (noise %.3f, seed %d)",
                 args.mock_noise, args.seed)
    masks = dataset.load_pred_masks(ddir, round_no, manifest)
    child = dataset.distill_round(manifest, masks)
    dataset.write_round(ddir, child)
    dataset.verify_round(ddir, child.round)
    log.info("distill: round %d -> round %d (%d tiles)", round_no, child.round,
             len(child.tiles))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    catalog = _load_catalog(args)
    out = _stage_dir(args, "evaluate")
    truth = grf.read_labels(args.truth)
    pred = grf.read_labels(args.pred)
    report = metrics.evaluate(truth, pred, catalog, workers=args.workers)
    metrics.save_report(report, json_path=out / "report.json",
                        text_path=out / "report.txt", csv_path=out / "confusion.csv")
    print(metrics.render_table(report))
    return EXIT_OK


def cmd_analyze(args) -> int:
    catalog = _load_catalog(args)
    src = Path(args.input) if args.input else _workdir(args) / "label" / "labels.grf"
    out = _stage_dir(args, "analyze")
    labels = grf.read_labels(src)
    analytics.export_cover_json(out / "cover.json", labels, catalog)
    min_x, min_y, max_x, max_y = labels.grid.extent
    surveyed = (max_x - min_x) * (max_y - min_y)
    all_instances = []
    lengths_doc = {}
    for c in range(len(catalog)):
        instances = analytics.connected_components(
            labels, c, catalog, connectivity=args.connectivity, min_pixels=args.min_pixels)
        all_instances += instances
        entry = {"count": len(instances),
                 "density_per_m2": analytics.density(instances, surveyed)}
        if instances:
            mean, se = analytics.length_summary([r.length_m for r in instances])
            entry["mean_length_m"] = mean
            entry["se_length_m"] = se
            entry["length_display"] = f"{mean * 100:.1f} +/- {se * 100:.2f} cm"
        lengths_doc[catalog.name_of(c)] = entry
    (out / "instances.csv").write_text(analytics.instances_to_csv(all_instances),
                                       encoding="utf-8")
    _write_json(out / "instances.geojson",
                analytics.instances_to_geojson(all_instances, catalog,
                                               crs_tag=labels.grid.crs_tag))
    _write_json(out / "instances.json", lengths_doc)
    if args.points:
        pset = ingest.parse_point_predictions(args.points, catalog)
        freqs = analytics.relative_abundance(pset, threshold=args.threshold)
        _write_json(out / "abundance.json",
                    {n: float(f) for n, f in zip(catalog.names, freqs)})
    log.info("analyze: %d instances across %d classes", len(all_instances), len(catalog))
    return EXIT_OK


def cmd_report(args) -> int:
    wd = _workdir(args)
    out = _stage_dir(args, "report")
    doc = {}
    for stage, name in [("ingest", "summary.json"), ("spacing", "spacing.json"),
                        ("label", "labels.json"), ("evaluate", "report.json"),
                        ("analyze", "cover.json"), ("analyze", "instances.json")]:
        path = wd / stage / name
        if path.exists():
            doc.setdefault(stage, {})[name] = json.loads(path.read_text(encoding="utf-8"))
    rounds = sorted(p.name for p in (wd / "dataset").glob("round_*")) \
        if (wd / "dataset").exists() else []
    doc["dataset_rounds"] = rounds
    _write_json(out / "report.json", doc)
    print(json.dumps(doc, sort_keys=True, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser(config: PipelineConfig | None = None) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reefmap",
        description="Turn georeferenced point class probabilities into "
                    "segmentation label rasters, training datasets and reports.")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = []

    def add(name, func, help_msg):
        p = sub.add_parser(name, help=help_msg)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file with option defaults (flags win)")
        p.add_argument("--workdir", help="work directory (or $REEF_WORKDIR)")
        p.add_argument("--catalog", help="class catalog JSON (default: built-in 5 classes)")
        subparsers.append(p)
        return p

    p = add("synth", cmd_synth, "generate a deterministic synthetic scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", type=float, default=50.0, help="square side, meters")
    p.add_argument("--transect-spacing", type=float, default=0.5)
    p.add_argument("--point-step", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.0,
                   help="sigma of the probability perturbation")

    p = add("ingest", cmd_ingest, "validate a point-prediction CSV")
    p.add_argument("--input", required=True, help="point CSV (x,y or lat,lon variant)")
    p.add_argument("--origin", help="lat,lon origin for the lat/lon variant")

    p = add("spacing", cmd_spacing, "median consecutive spacing per session")
    p.add_argument("--input", help="point CSV (default: workdir ingest/synth output)")

    p = add("rasterize", cmd_rasterize, "interpolate per-session, per-class rasters")
    p.add_argument("--input", help="point CSV (default: workdir ingest/synth output)")
    p.add_argument("--grid-spacing", type=float, default=None,
                   help="meters per pixel (default: median consecutive spacing)")
    p.add_argument("--workers", type=int, default=1)

    p = add("normalize", cmd_normalize, "fit quantile stats and rescale rasters")
    p.add_argument("--input", help="point CSV for pooled statistics")
    p.add_argument("--rasters", help="directory with merged_<c>.grf (default: workdir)")
    p.add_argument("--percentiles", default="0.01,0.99")
    p.add_argument("--epsilon", type=float, default=annotate.DEFAULT_EPSILON)

    p = add("label", cmd_label, "argmax-label normalized rasters")
    p.add_argument("--rasters", help="directory with norm_<c>.grf (default: workdir)")

    p = add("upsample", cmd_upsample, "align labels to a finer grid")
    p.add_argument("--input", help="label GRF (default: workdir label output)")
    p.add_argument("--target-spacing", type=float, help="destination meters per pixel")
    p.add_argument("--like", help="GRF (or sidecar) whose grid to copy")

    p = add("tile", cmd_tile, "cut round-0 training tiles and manifest")
    p.add_argument("--input", help="label GRF (default: workdir label output)")
    p.add_argument("--tile-size", type=int, default=dataset.DEFAULT_TILE_SIZE)
    p.add_argument("--min-labeled", type=float, default=dataset.DEFAULT_MIN_LABELED)

    p = add("distill", cmd_distill, "manage refine/distill rounds")
    p.add_argument("action", choices=["init", "next"])
    p.add_argument("--input", help="label GRF for init (default: workdir label output)")
    p.add_argument("--tile-size", type=int, default=dataset.DEFAULT_TILE_SIZE)
    p.add_argument("--min-labeled", type=float, default=dataset.DEFAULT_MIN_LABELED)
    p.add_argument("--round", type=int, default=None, help="source round (default: latest)")
    p.add_argument("--mock-noise", type=float, default=None,
                   help="generate mock predictions at this noise rate if pred/ is absent")
    p.add_argument("--seed", type=int, default=0)

    p = add("evaluate", cmd_evaluate, "confusion, accuracy and IoU of two label rasters")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = add("analyze", cmd_analyze, "cover, instances, lengths, densities, abundance")
    p.add_argument("--input", help="label GRF (default: workdir label output)")
    p.add_argument("--points", help="point CSV for relative abundance")
    p.add_argument("--connectivity", type=int, default=8, choices=[4, 8])
    p.add_argument("--min-pixels", type=int, default=4)
    p.add_argument("--threshold", type=float, default=0.5)

    add("report", cmd_report, "aggregate stage outputs into one report")
    if config is not None:
        for p in subparsers:
            config.apply_to(p)
    return parser


def run_cli(argv=None) -> int:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        config = PipelineConfig.load(known.config) if known.config else None
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"error: bad JSON config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    parser = build_parser(config)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DataMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except ReefmapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except json.JSONDecodeError as exc:
        print(f"error: bad JSON input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

"""Batch command-line front end.

Subcommands:

* ``prep``     normalize + enhance a directory of fundus images
* ``extract``  compute the feature CSV from segmentation masks
* ``eval``     score predictions against ground truth and summarize
* ``config``   print the default configuration

Per-image failures are logged and skipped so cohort batches survive
corrupt files; exit codes are 0 (all ok), 1 (configuration/input error),
2 (some items failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import biomarkers, evalstats, prep, raster
from .config import ConfigError, RunConfig
from .raster import Keypoint, LabelMask, LabelScheme

log = logging.getLogger("fundusvasc")

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_PARTIAL = 2


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save(save_fn, obj, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".png")
    os.close(fd)
    try:
        save_fn(obj, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _read_csv(path: Path) -> list[dict[str, str]]:
    import csv

    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# prep


def _prep_one(image_path: Path, out_dir: Path, cfg: RunConfig) -> None:
    image = raster.load_image(image_path)
    bounds = prep.detect_bounds(image)
    norm, transform = prep.normalize(
        image, bounds, out_size=cfg.out_size, big_cut_fraction=cfg.big_cut_fraction
    )
    norm_bounds = prep.transform_bounds(bounds, transform)
    enhanced = prep.enhance(
        norm, norm_bounds, sigma_fraction=cfg.enhance_sigma_fraction, alpha=cfg.enhance_alpha
    )
    stem = image_path.stem
    _atomic_save(raster.save_image, norm, out_dir / f"{stem}_norm.png")
    _atomic_save(raster.save_image, enhanced, out_dir / f"{stem}_enh.png")
    payload = {"bounds": bounds.to_dict(), "transform": transform.to_dict()}
    _atomic_write_text(out_dir / f"{stem}_meta.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_prep(args, cfg: RunConfig) -> int:
    in_dir = Path(args.images)
    if not in_dir.is_dir():
        log.error("input directory %s not readable", in_dir)
        return EXIT_INPUT_ERROR
    images = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    if not images:
        log.error("no images found in %s", in_dir)
        return EXIT_INPUT_ERROR
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    failures = 0

    def _run(path: Path):
        try:
            _prep_one(path, out_dir, cfg)
            return None
        except Exception as exc:
            return f"{path.name}: {exc}"

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for err in pool.map(_run, images):
            if err is not None:
                failures += 1
                log.error("prep failed for %s", err)
    log.info("prep: %d ok, %d failed", len(images) - failures, failures)
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# extract


def _discover_ids(masks_dir: Path) -> list[str]:
    ids = set()
    for p in masks_dir.glob("*_av.png"):
        ids.add(p.name[: -len("_av.png")])
    for p in masks_dir.glob("*_artery.png"):
        name = p.name[: -len("_artery.png")]
        if (masks_dir / f"{name}_vein.png").exists():
            ids.add(name)
    return sorted(ids)


def _load_av_pair(masks_dir: Path, image_id: str) -> tuple[LabelMask, LabelMask]:
    av_path = masks_dir / f"{image_id}_av.png"
    if av_path.exists():
        return raster.split_av(raster.load_mask(av_path, LabelScheme.AV4))
    artery = raster.load_mask(masks_dir / f"{image_id}_artery.png", LabelScheme.BINARY)
    vein = raster.load_mask(masks_dir / f"{image_id}_vein.png", LabelScheme.BINARY)
    return artery, vein


def _load_region(masks_dir: Path, image_id: str, shape: tuple[int, int]) -> biomarkers.RegionSpec:
    disc_path = masks_dir / f"{image_id}_disc.png"
    disc = raster.load_mask(disc_path, LabelScheme.BINARY) if disc_path.exists() else None
    fovea = None
    fovea_path = masks_dir / f"{image_id}_fovea.json"
    if fovea_path.exists():
        data = json.loads(fovea_path.read_text())
        fovea = Keypoint(float(data["x"]), float(data["y"]))
    meta_path = masks_dir / f"{image_id}_meta.json"
    if meta_path.exists():
        bounds, transform = prep.load_sidecar(meta_path)
        roi = prep.bounds_mask(prep.transform_bounds(bounds, transform), shape)
    else:
        roi = np.ones(shape, dtype=bool)
    return biomarkers.region_from_masks(roi, disc, fovea)


def _extract_one(masks_dir: Path, image_id: str, cfg: RunConfig) -> list[list]:
    artery, vein = _load_av_pair(masks_dir, image_id)
    region = _load_region(masks_dir, image_id, artery.labels.shape)
    records = biomarkers.extract_features(artery, vein, region, cfg.feature_config())
    rows = []
    for vessel_class in (biomarkers.ARTERY, biomarkers.VEIN):
        rec = records[vessel_class].as_dict()
        rows.append([image_id, vessel_class] + [rec[c] for c in biomarkers.FEATURE_COLUMNS])
    return rows


def cmd_extract(args, cfg: RunConfig) -> int:
    masks_dir = Path(args.masks)
    if not masks_dir.is_dir():
        log.error("masks directory %s not readable", masks_dir)
        return EXIT_INPUT_ERROR
    ids = _discover_ids(masks_dir)
    if not ids:
        log.error("no artery/vein masks found in %s", masks_dir)
        return EXIT_INPUT_ERROR

    failures = 0
    all_rows: dict[str, list[list]] = {}

    def _run(image_id: str):
        try:
            return image_id, _extract_one(masks_dir, image_id, cfg)
        except Exception as exc:
            return image_id, exc

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for image_id, result in pool.map(_run, ids):
            if isinstance(result, Exception):
                failures += 1
                log.error("extract failed for %s: %s", image_id, result)
            else:
                all_rows[image_id] = result

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    header = ["image", "vessel_class"] + list(biomarkers.FEATURE_COLUMNS)
    rows = [row for image_id in sorted(all_rows) for row in all_rows[image_id]]
    _write_csv(out_path, header, rows)
    log.info("extract: %d ok, %d failed -> %s", len(all_rows), failures, out_path)
    if not all_rows:
        return EXIT_INPUT_ERROR
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _find_masks(directory: Path, image_id: str) -> dict[str, LabelMask]:
    """Class-keyed binary masks for one image id."""
    out: dict[str, LabelMask] = {}
    av_path = directory / f"{image_id}_av.png"
    if av_path.exists():
        artery, vein = raster.split_av(raster.load_mask(av_path, LabelScheme.AV4))
        out["artery"], out["vein"] = artery, vein
    for cls in ("artery", "vein", "vessel", "disc"):
        p = directory / f"{image_id}_{cls}.png"
        if p.exists() and cls not in out:
            out[cls] = raster.load_mask(p, LabelScheme.BINARY)
    return out


def _load_fovea(directory: Path, image_id: str) -> Keypoint | None:
    p = directory / f"{image_id}_fovea.json"
    if not p.exists():
        return None
    data = json.loads(p.read_text())
    return Keypoint(float(data["x"]), float(data["y"]))


def _load_feature_csv(path: Path) -> dict[str, dict[str, float | None]]:
    """Feature CSV -> image id -> {"<feature>_<class>": value}."""
    table: dict[str, dict[str, float | None]] = {}
    for row in _read_csv(path):
        image_id = row["image"]
        cls = row["vessel_class"]
        rec = table.setdefault(image_id, {})
        for col in biomarkers.FEATURE_COLUMNS:
            raw = row.get(col, "")
            rec[f"{col}_{cls}"] = float(raw) if raw not in ("", None) else None
    return table


def cmd_eval(args, cfg: RunConfig) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    if not pred_dir.is_dir() or not gt_dir.is_dir():
        log.error("prediction/ground-truth directory not readable")
        return EXIT_INPUT_ERROR
    metadata = {row["image"]: row for row in _read_csv(Path(args.metadata))}
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    records: list[evalstats.EvalRecord] = []
    classes_seen: set[str] = set()
    for image_id in sorted(metadata):
        gt_masks = _find_masks(gt_dir, image_id)
        pred_masks = _find_masks(pred_dir, image_id)
        common = sorted(set(gt_masks) & set(pred_masks))
        rec = evalstats.EvalRecord(
            image_id=image_id,
            group_id=metadata[image_id].get("group", image_id),
            quality=metadata[image_id].get("quality") or None,
            region=metadata[image_id].get("region") or None,
        )
        for cls in common:
            rec.dice[cls] = evalstats.dice(pred_masks[cls], gt_masks[cls])
            classes_seen.add(cls)
        gt_fovea = _load_fovea(gt_dir, image_id)
        pred_fovea = _load_fovea(pred_dir, image_id)
        if gt_fovea is not None and pred_fovea is not None:
            rec.fovea_l2 = evalstats.keypoint_error(pred_fovea, gt_fovea)
        if rec.dice or rec.fovea_l2 is not None:
            records.append(rec)
    if not records:
        log.error("no image ids matched between metadata, predictions, and ground truth")
        return EXIT_INPUT_ERROR

    classes = sorted(classes_seen)
    header = ["image", "group", "quality", "region"] + [f"dice_{c}" for c in classes] + ["fovea_l2"]
    rows = [
        [r.image_id, r.group_id, r.quality, r.region]
        + [r.dice.get(c) for c in classes]
        + [r.fovea_l2]
        for r in records
    ]
    _write_csv(out_dir / "metrics.csv", header, rows)

    for axis, bins in (("quality", evalstats.QUALITY_BINS), ("region", evalstats.REGION_BINS)):
        axis_rows = []
        for cls in classes:
            pairs = [
                (getattr(r, axis), r.dice[cls])
                for r in records
                if getattr(r, axis) is not None and cls in r.dice
            ]
            if not pairs:
                continue
            present = tuple(b for b in bins if any(p[0] == b for p in pairs))
            stats = evalstats.binned_summary(pairs, bins=present or None)
            for bin_name, s in stats.items():
                axis_rows.append(
                    [cls, bin_name, s.n, s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi]
                )
        if axis_rows:
            _write_csv(
                out_dir / f"binned_{axis}.csv",
                ["class", "bin", "n", "median", "q1", "q3", "whisker_lo", "whisker_hi"],
                axis_rows,
            )

    if args.features_gt:
        systems = {}
        for spec in args.features_system or []:
            name, _, path = spec.partition("=")
            if not path:
                log.error("--features-system expects NAME=PATH, got %r", spec)
                return EXIT_INPUT_ERROR
            systems[name] = _load_feature_csv(Path(path))
        if systems:
            gt_features = _load_feature_csv(Path(args.features_gt))
            comparison = evalstats.compare_features(
                gt_features, systems, reference=args.reference
            )
            names = sorted(systems)
            comp_header = (
                ["feature", "grader_mean"]
                + [f"mae_{n}" for n in names]
                + [f"r_{n}" for n in names]
                + [f"sig_{n}" for n in names]
                + [f"n_{n}" for n in names]
            )
            comp_rows = [
                [row.feature, row.grader_mean]
                + [row.mae[n] for n in names]
                + [row.pearson_r[n] for n in names]
                + [row.significance[n] for n in names]
                + [row.n[n] for n in names]
                for row in comparison
            ]
            _write_csv(out_dir / "comparison.csv", comp_header, comp_rows)

    log.info("eval: %d images -> %s", len(records), out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------


def cmd_config(args, cfg: RunConfig) -> int:
    if args.print_defaults:
        sys.stdout.write(RunConfig().to_json())
    else:
        sys.stdout.write(cfg.to_json())
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    # Shared flags live in a parent parser with SUPPRESS defaults so they
    # are accepted both before and after the subcommand without the
    # subparser clobbering values parsed at the top level.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", type=str, default=argparse.SUPPRESS, help="JSON config file"
    )
    common.add_argument(
        "--threads", type=int, default=argparse.SUPPRESS, help="worker threads"
    )
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="fundusvasc", description=__doc__, parents=[common])
    parser.set_defaults(config=None, threads=None, seed=None, verbose=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="normalize and enhance fundus images", parents=[common])
    p.add_argument("images", help="directory of input images")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("extract", help="compute vascular features from masks", parents=[common])
    p.add_argument("masks", help="directory with *_av.png or *_artery/_vein.png masks")
    p.add_argument("--out", required=True, help="output feature CSV")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="score predictions against ground truth", parents=[common])
    p.add_argument("pred", help="prediction mask directory")
    p.add_argument("gt", help="ground-truth mask directory")
    p.add_argument("metadata", help="CSV with image,group,quality,region columns")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--features-gt", help="ground-truth feature CSV for the comparison table")
    p.add_argument(
        "--features-system",
        action="append",
        metavar="NAME=PATH",
        help="system feature CSV (repeatable)",
    )
    p.add_argument("--reference", help="reference system for significance tests")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("config", help="print configuration", parents=[common])
    p.add_argument("--print-defaults", action="store_true")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
        if args.threads is not None:
            cfg.threads = args.threads
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.__post_init__()
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_INPUT_ERROR
    return args.func(args, cfg)


if __name__ == "__main__":
    sys.exit(main())

"""Single entry point exposing the pipeline as subcommands.

Every run writes a manifest (config hash + seed + outputs) into the output
directory so identical invocations are provably identical. Diagnostics go to
stderr; machine-readable results go to files. Exit codes: 0 success,
1 validation error, 2 I/O error. Log level comes from the DEFECTKIT_LOG
environment variable only.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, metrics, patches, stream, synthesis
from .config import ConfigError, PipelineConfig, load_config, parse_rational
from .imagetypes import GroundTruthMask, ImageLabel, Patch, ValidationError, to_gray
from .metrics import EvaluateOptions, MetricError
from .rng import STAGE_AUGMENT, STAGE_EXTRACT, STAGE_SYNTH, derive_rng

log = logging.getLogger("defectkit")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

_VALIDATION_ERRORS = (ConfigError, ValidationError, dataio.DataError, stream.StreamError,
                      MetricError, synthesis.SynthesisError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit status 1."""

    def error(self, message: str):  # noqa: D401 - argparse contract
        raise _UsageError(message)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None, help="pipeline config file (YAML)")
    sub.add_argument("--seed", type=int, default=None, help="master seed (default: config value)")
    sub.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="defectkit", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", parents=[], help="synthesize defective patch/mask pairs")
    _add_common(p)
    p.add_argument("--good", type=Path, required=True, help="directory of fault-free patch PNGs")
    p.add_argument("--count", type=int, required=True, help="number of defective samples to emit")
    p.add_argument("--modality", choices=["lsm1", "lsm2", "asm"], required=True)

    p = subs.add_parser("extract", help="extract patches from full acquisitions")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True, help="full-frame PNG or directory of PNGs")
    p.add_argument("--mode", choices=["random", "grid"], required=True)
    p.add_argument("--roi", type=str, default=None, help="x,y,w,h (default: whole frame)")
    p.add_argument("--n", type=int, default=10, help="patches per frame in random mode")
    p.add_argument("--stride", type=int, default=None, help="grid stride (default: config)")
    p.add_argument("--augment", action="store_true", help="apply the modality augmentation row")
    p.add_argument("--modality", choices=["lsm1", "lsm2", "asm"], required=True)

    p = subs.add_parser("pack", help="pack patch/mask PNG folders into the supervised container")
    _add_common(p)
    p.add_argument("--images", type=Path, required=True, help="directory of patch PNGs")
    p.add_argument("--masks", type=Path, default=None, help="directory of mask PNGs (<stem>_mask.png)")
    p.add_argument("--modality", choices=["lsm1", "lsm2", "asm"], required=True)

    p = subs.add_parser("sample", help="materialize a mixed supervised epoch into a container")
    _add_common(p)
    p.add_argument("--good", type=Path, required=True, help="directory of fault-free 256x256 PNGs")
    p.add_argument("--real", type=Path, default=None,
                   help="real defect directory with points/ and area/ subfolders of raw PNGs")
    p.add_argument("--modality", choices=["lsm1", "lsm2", "asm"], required=True)
    p.add_argument("--fraction", type=str, default="1", help="active real-defect fraction, e.g. 1/16")
    p.add_argument("--group", choices=["points", "area", "mixed"], default="mixed")
    p.add_argument("--p-inject", type=str, default=None, help="injection probability override, e.g. 1/32")
    p.add_argument("--r-syn", type=str, default=None, help="synthesis rate override, e.g. 1/2")
    p.add_argument("--n", type=int, required=True, help="epoch length")
    p.add_argument("--force-extreme-injection", action="store_true",
                   help="allow p_inject >= 1/2 (degenerate streams)")

    p = subs.add_parser("evaluate", help="score a predictions CSV against a folder split")
    _add_common(p)
    p.add_argument("--pred", type=Path, required=True, help="predictions CSV (id,score[,map_path])")
    p.add_argument("--data", type=Path, required=True, help="MVTec-style split root")
    p.add_argument("--modality", choices=["lsm1", "lsm2", "asm"], default=None,
                   help="use this modality's default border crop")
    p.add_argument("--border-crop", type=int, default=None,
                   help="crop width applied to maps/masks before pixel metrics")

    p = subs.add_parser("report", help="render saved evaluation reports as a table")
    p.add_argument("reports", type=Path, nargs="+", help="report JSON files")
    p.add_argument("--config", type=Path, default=None, help="pipeline config file (YAML)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None, help="also write the table and a manifest here")

    return parser


def _setup_logging() -> None:
    level = os.environ.get("DEFECTKIT_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _write_manifest(out_dir: Path, command: str, argv: list[str], config: PipelineConfig,
                    seed: int, extra: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": argv,
        "seed": seed,
        "config_hash": config.config_hash(),
        **extra,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")


def _load_good_patches(good_dir: Path, modality: str, size: int) -> list[Patch]:
    files = sorted(good_dir.glob("*.png"))
    if not files:
        raise dataio.DataError(f"{good_dir}: no fault-free PNG patches found")
    out = []
    for f in files:
        px = to_gray(dataio.load_png(f))
        if px.shape != (size, size):
            raise dataio.DataError(f"{f}: expected {size}x{size} patch, got {px.shape}")
        out.append(Patch(pixels=px, modality=modality, source=f.name))
    return out


def _parse_roi(text: str | None, image: np.ndarray) -> tuple[int, int, int, int]:
    if text is None:
        h, w = image.shape[:2]
        return (0, 0, w, h)
    parts = text.split(",")
    if len(parts) != 4:
        raise ConfigError(f"roi: expected x,y,w,h, got {text!r}")
    return tuple(int(p) for p in parts)  # type: ignore[return-value]


# -- subcommand implementations -------------------------------------------------


def _cmd_synth(args, argv: list[str]) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.master_seed
    modality = config.modality(args.modality)
    goods = _load_good_patches(args.good, args.modality, config.patch_size)
    images_dir = args.out / "images"
    masks_dir = args.out / "masks"
    records = []
    for i in range(args.count):
        seed_path = (STAGE_SYNTH, i)
        rng = derive_rng(seed, seed_path)
        base = goods[int(rng.integers(len(goods)))]
        defective, mask, params = synthesis.synthesize(base, modality.synthesis, rng)
        name = f"{i:05d}"
        dataio.save_png(images_dir / f"{name}.png", defective.pixels)
        dataio.save_png(masks_dir / f"{name}_mask.png", mask.to_uint8())
        records.append({
            "index": i,
            "seed_path": list(seed_path),
            "base": base.source,
            "params": params.to_record(),
        })
    (args.out / "synth_manifest.json").write_text(
        json.dumps({"texture_model": synthesis.TEXTURE_MODEL, "samples": records}, indent=2) + "\n",
        encoding="utf-8")
    _write_manifest(args.out, "synth", argv, config, seed,
                    {"count": args.count, "modality": args.modality})
    return EXIT_OK


def _cmd_extract(args, argv: list[str]) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.master_seed
    modality = config.modality(args.modality)
    stride = args.stride if args.stride is not None else config.stride
    inputs = sorted(args.input.glob("*.png")) if args.input.is_dir() else [args.input]
    if not inputs:
        raise dataio.DataError(f"{args.input}: no input PNGs found")
    patches_dir = args.out / "patches"
    rows = []
    patch_index = 0
    for img_idx, path in enumerate(inputs):
        frame = to_gray(dataio.load_png(path))
        roi = _parse_roi(args.roi, frame)
        if args.mode == "random":
            rng = derive_rng(seed, (STAGE_EXTRACT, img_idx))
            extracted = patches.extract_random_patches(
                frame, roi, args.n, rng, size=config.patch_size,
                modality=args.modality, source=path.name)
        else:
            extracted = patches.extract_grid_patches(
                frame, roi, stride=stride, size=config.patch_size,
                modality=args.modality, source=path.name)
        for p in extracted:
            aug_path = ()
            if args.augment:
                aug_path = (STAGE_AUGMENT, patch_index)
                p = patches.augment(p, modality.augmentation, derive_rng(seed, aug_path))
            name = f"{path.stem}_{patch_index:05d}.png"
            dataio.save_png(patches_dir / name, p.pixels)
            rows.append((name, p.source, p.offset[0], p.offset[1],
                         "/".join(str(v) for v in aug_path)))
            patch_index += 1
    with open(args.out / "patches.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "source", "offset_x", "offset_y", "seed_path"])
        writer.writerows(rows)
    _write_manifest(args.out, "extract", argv, config, seed,
                    {"n_patches": patch_index, "mode": args.mode, "modality": args.modality})
    return EXIT_OK


def _cmd_pack(args, argv: list[str]) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.master_seed
    files = sorted(args.images.glob("*.png"))
    if not files:
        raise dataio.DataError(f"{args.images}: no patch PNGs found")
    items = []
    for f in files:
        px = to_gray(dataio.load_png(f))
        patch = Patch(pixels=px, modality=args.modality, source=f.name)
        mask = None
        if args.masks is not None:
            mask_path = args.masks / f"{f.stem}_mask.png"
            if mask_path.is_file():
                mask = dataio._load_mask_png(mask_path)
        if mask is not None and not mask.empty:
            items.append(stream.StreamItem(patch=patch, mask=mask,
                                           label=ImageLabel.defect("synthetic"), source="synthetic"))
        else:
            items.append(stream.StreamItem(patch=patch,
                                           mask=GroundTruthMask.zeros(patch.height, patch.width),
                                           label=ImageLabel.good(), source="fault_free"))
    out_file = args.out / "packed.h5"
    info = dataio.write_supervised_container(items, out_file, args.modality, seed)
    _write_manifest(args.out, "pack", argv, config, seed, {"container": info})
    return EXIT_OK


def _load_real_pool(real_dir: Path, modality: str, raw_size: int, shuffle_seed: int) -> stream.RealDefectPool:
    items = []
    for group in ("points", "area"):
        group_dir = real_dir / group
        if not group_dir.is_dir():
            continue
        for f in sorted(group_dir.glob("*.png")):
            px = to_gray(dataio.load_png(f))
            if px.shape != (raw_size, raw_size):
                raise dataio.DataError(f"{f}: raw real defects must be {raw_size}x{raw_size}, "
                                       f"got {px.shape}")
            items.append(stream.PoolItem(
                patch=Patch(pixels=px, modality=modality, source=f.name),
                label=ImageLabel.defect(group)))
    if not items:
        raise dataio.DataError(f"{real_dir}: no real defect PNGs under points/ or area/")
    return stream.RealDefectPool(items=items, shuffle_seed=shuffle_seed)


def _cmd_sample(args, argv: list[str]) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.master_seed
    modality = config.modality(args.modality)
    goods = _load_good_patches(args.good, args.modality, config.patch_size)

    p_inject = parse_rational(args.p_inject, "p_inject") if args.p_inject is not None else config.p_inject
    r_syn = parse_rational(args.r_syn, "r_syn") if args.r_syn is not None else config.r_syn
    active: list[stream.PoolItem] = []
    fraction_info = None
    if args.real is not None:
        pool = _load_real_pool(args.real, args.modality, config.raw_defect_size, seed)
        fraction = parse_rational(args.fraction, "fraction")
        schedule = stream.FractionSchedule(fractions=tuple(sorted(set(config.fractions) | {fraction})),
                                           group_filter=args.group)
        fracs = build_fractions_logged(pool, schedule)
        active = fracs.by_fraction[fraction]
        fraction_info = {"fraction": str(fraction), "group": args.group,
                         "pool_size": fracs.pool_size, "active_size": len(active),
                         "warnings": fracs.warnings}
    mixed = stream.MixedStream(
        fault_free=goods,
        modality=modality,
        master_seed=seed,
        active_real=active,
        p_inject=p_inject,
        r_syn=r_syn,
        allow_extreme_injection=args.force_extreme_injection or config.allow_extreme_injection,
    )
    counter = stream.EpochCounter()
    out_file = args.out / "stream.h5"
    info = dataio.write_supervised_container(
        (counter.add(item) for item in mixed.iter_epoch(args.n)),
        out_file, args.modality, seed)
    summary = counter.summary(mixed.warnings)
    dataio.set_container_composition(out_file, summary.to_dict())
    composition = summary.to_dict()
    if fraction_info:
        composition["fraction"] = fraction_info
    (args.out / "composition.json").write_text(json.dumps(composition, indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")
    _write_manifest(args.out, "sample", argv, config, seed, {"container": info})
    return EXIT_OK


def build_fractions_logged(pool: stream.RealDefectPool, schedule: stream.FractionSchedule) -> stream.FractionMap:
    fracs = stream.build_fractions(pool, schedule)
    for warning in fracs.warnings:
        log.warning("%s", warning)
    return fracs


def _cmd_evaluate(args, argv: list[str]) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.master_seed
    split = dataio.read_folder_split(args.data)
    samples, join_report = dataio.read_predictions(args.pred, split)
    for key in ("only_in_csv", "only_in_ground_truth"):
        if join_report[key]:
            log.warning("%s: %s", key, ", ".join(join_report[key]))
    if args.border_crop is not None:
        border = args.border_crop
    elif args.modality is not None:
        border = config.modality(args.modality).border_crop
    else:
        border = 0
    report = metrics.evaluate(samples, EvaluateOptions(border_crop=border))
    report.warnings.extend(f"{k}: {v}" for k, v in join_report.items() if v)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    table = metrics.format_report_table([(args.pred.stem, report)])
    (args.out / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    _write_manifest(args.out, "evaluate", argv, config, seed,
                    {"n_samples": report.n_samples, "border_crop": border})
    return EXIT_OK


def _report_from_dict(raw: dict) -> metrics.EvaluationReport:
    counts = metrics.ConfusionCounts(**raw["counts"])
    return metrics.EvaluationReport(
        threshold=raw["threshold"],
        counts=counts,
        image=dict(raw["image"]),
        pixel=dict(raw["pixel"]) if raw.get("pixel") else None,
        pixel_threshold=raw.get("pixel_threshold"),
        border_crop=raw.get("border_crop", 0),
        n_samples=raw.get("n_samples", counts.total),
        warnings=list(raw.get("warnings", [])),
    )


def _cmd_report(args, argv: list[str]) -> int:
    rows = []
    for path in args.reports:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        rows.append((Path(path).parent.name or Path(path).stem, _report_from_dict(raw)))
    table = metrics.format_report_table(rows)
    print(table)
    if args.out is not None:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else config.master_seed
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(table + "\n", encoding="utf-8")
        _write_manifest(args.out, "report", argv, config, seed,
                        {"inputs": [str(p) for p in args.reports]})
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "extract": _cmd_extract,
    "pack": _cmd_pack,
    "sample": _cmd_sample,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def run(argv: list[str]) -> int:
    """Execute one CLI invocation; returns the process exit status."""
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        return _COMMANDS[args.command](args, list(argv))
    except _VALIDATION_ERRORS as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("%s", exc)
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entry()

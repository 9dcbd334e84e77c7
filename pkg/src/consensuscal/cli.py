"""Command-line entry point: ``consensus-cal <verb> [options]``.

Exit codes: 0 on success, 2 when a grid finished with failed cells, 1 on a
fatal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .calibrators import CalibratorKind, calibrate_stack
from .consensus import ConsensusImage, build_consensus
from .distortion import SEVERITY_PRESETS, derive_seed, synthesize_stack
from .harness import (
    DEFAULT_CONFIG_YAML,
    RANDOM_REFERENCE,
    REFERENCE_KINDS,
    ExperimentConfig,
    emit_csv,
    emit_histograms,
    emit_summary,
    load_stack_dir,
    run_experiment,
    save_stack_dir,
    seeded_index,
)
from .imaging import ImageStack, load_image, save_image
from .metrics import score_stack
from .scenes import load_scene

log = logging.getLogger("consensuscal")

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _config(args) -> ExperimentConfig:
    base = ExperimentConfig.from_yaml(args.config) if getattr(args, "config", None) else ExperimentConfig()
    return base.with_overrides(
        master_seed=args.seed,
        output_dir=args.out,
        severity=args.severity,
        consensus_methods=_list(args.consensus),
        calibrators=_list(args.calibrator),
        repetitions=args.repetitions,
        emit_images=True if args.emit_images else None,
        bit_depth=args.bit_depth,
    )


def _reference(stack: ImageStack, kind: str, seed: int):
    if kind == RANDOM_REFERENCE:
        return stack[seeded_index(derive_seed(seed, 2), len(stack))]
    return build_consensus(stack, kind)


def cmd_synthesize(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    truths = [args.truth] if args.truth else cfg.truth
    for entry in truths:
        truth = load_scene(entry, cfg.scene_size)
        name = entry.split(":", 1)[1] if entry.startswith("builtin:") else Path(entry).stem
        syn = synthesize_stack(truth, args.n or cfg.n, cfg.master_seed, cfg.severity, scene_id=name)
        scene_dir = out / name if len(truths) > 1 else out
        save_stack_dir(syn.stack, scene_dir, cfg.bit_depth)
        save_image(truth, scene_dir / "truth.png", cfg.bit_depth)
        (scene_dir / "recipes.json").write_text(
            json.dumps([r.to_dict() for r in syn.recipes], indent=2), encoding="utf-8"
        )
        print(f"wrote {len(syn.stack)} images to {scene_dir}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    stack = load_stack_dir(args.stack)
    out = Path(cfg.output_dir)
    multi = len(cfg.consensus_methods) * len(cfg.calibrators) > 1
    for kind in cfg.consensus_methods:
        reference = _reference(stack, kind, cfg.master_seed)
        ref_img = reference.image if isinstance(reference, ConsensusImage) else reference
        for cal in cfg.calibrators:
            result = calibrate_stack(stack, reference, cal, **cfg.calibrator_options(cal))
            cell = out / kind / cal if multi else out
            save_stack_dir(result.images, cell, cfg.bit_depth)
            save_image(ref_img, cell / "reference.png", cfg.bit_depth)
            (cell / "models.json").write_text(
                json.dumps([m.to_dict() for m in result.models], indent=2), encoding="utf-8"
            )
            print(f"{kind}/{cal}: wrote {len(result.images)} images to {cell}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    truth = load_image(args.truth)
    before = load_stack_dir(args.before)
    after = load_stack_dir(args.after) if args.after else None
    rows = []
    reports = [("before", score_stack(before, truth))]
    if after is not None:
        reports.append(("after", score_stack(after, truth)))
    for label, rep in reports:
        for i, cam in enumerate(rep.per_camera):
            rows.append([label, i, f"{cam.psnr_db:.3f}", f"{cam.perceptual:.3f}", "", int(cam.identical)])
        rows.append([label, "mean", f"{rep.mean_psnr_db:.3f}", f"{rep.mean_perceptual:.3f}", f"{rep.histogram_spread:.3f}", ""])
        print(
            f"{label}: PSNR {rep.mean_psnr_db:.3f} dB, {rep.perceptual_label} {rep.mean_perceptual:.3f}, "
            f"histogram spread {rep.histogram_spread:.3f}"
        )
    if args.out:
        path = Path(args.out)
        if path.suffix.lower() != ".csv":
            path.mkdir(parents=True, exist_ok=True)
            path = path / "evaluation.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stack", "camera", "psnr_db", "perceptual", "histogram_spread", "identical"])
            w.writerows(rows)
    return EXIT_OK


def cmd_histograms(args) -> int:
    stack = load_stack_dir(args.stack)
    kind = (_list(args.consensus) or ["median"])[0]
    reference = _reference(stack, kind, args.seed or 0)
    path = Path(args.out) if args.out else Path("histograms.csv")
    if path.suffix.lower() != ".csv":
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"histograms_{kind}.csv"
    emit_histograms(stack, reference, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.dump_config:
        sys.stdout.write(DEFAULT_CONFIG_YAML)
        return EXIT_OK
    cfg = _config(args)
    if args.workers:
        cfg = cfg.with_overrides(workers=args.workers)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = run_experiment(cfg)
    emit_csv(table, out / "results.csv")
    emit_summary(table, out / "summary.csv")
    (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    print(f"{len(table)} cells, {len(table.failures)} failed; results in {out / 'results.csv'}")
    return EXIT_PARTIAL if table.failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consensus-cal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--severity", choices=sorted(SEVERITY_PRESETS))
    common.add_argument("--consensus", help=f"comma list from {','.join(REFERENCE_KINDS)}")
    common.add_argument("--calibrator", help=f"comma list from {','.join(k.value for k in CalibratorKind)}")
    common.add_argument("--repetitions", type=int)
    common.add_argument("--emit-images", action="store_true")
    common.add_argument("--bit-depth", type=int, choices=(8, 16))

    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synthesize", parents=[common], help="write a distorted synthetic stack")
    p.add_argument("--truth", help="truth image path or builtin:<name>")
    p.add_argument("--n", type=int, help="number of cameras")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate a stack directory")
    p.add_argument("--stack", required=True, help="directory of registered images")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", parents=[common], help="score stacks against a truth image")
    p.add_argument("--truth", required=True)
    p.add_argument("--before", required=True, help="uncalibrated stack directory")
    p.add_argument("--after", help="calibrated stack directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", parents=[common], help="run the full experiment grid")
    p.add_argument("--workers", type=int)
    p.add_argument("--dump-config", action="store_true", help="print the documented default config and exit")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("histograms", parents=[common], help="export per-camera histograms as CSV")
    p.add_argument("--stack", required=True)
    p.set_defaults(func=cmd_histograms)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - top-level error reporting
        log.error("%s", exc)
        if args.verbose:
            raise
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())

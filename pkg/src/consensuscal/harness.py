"""Experiment grid runner: synthesize or load stacks, build references,
calibrate, score, and write CSV tables.

A grid cell is one (scene, repetition, reference kind, calibrator)
combination. Cells of one (scene, repetition) share a stack and run as one
job; jobs may go to a process pool, and the table is always assembled in
key order, so output does not depend on scheduling.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .calibrators import DEFAULT_CCMF_DEGREE, DEFAULT_POLY_DEGREE, CalibratorKind, calibrate_stack
from .consensus import ConsensusImage, ConsensusMethod, WeightMode, build_consensus
from .distortion import SEVERITY_PRESETS, derive_seed, synthesize_stack
from .imaging import NUM_BINS, Image, ImageStack, histogram, load_image, save_image, validate_stack
from .metrics import score_stack
from .scenes import load_scene

__all__ = [
    "RANDOM_REFERENCE",
    "REFERENCE_KINDS",
    "DEFAULT_CONFIG_YAML",
    "ExperimentConfig",
    "ResultRow",
    "ResultTable",
    "ConfigError",
    "run_experiment",
    "emit_csv",
    "read_csv",
    "emit_summary",
    "emit_histograms",
    "load_stack_dir",
    "save_stack_dir",
    "seeded_index",
]

log = logging.getLogger(__name__)

RANDOM_REFERENCE = "random"
REFERENCE_KINDS = tuple(m.value for m in ConsensusMethod) + (RANDOM_REFERENCE,)
CALIBRATOR_KINDS = tuple(k.value for k in CalibratorKind)
EVALUATIONS = ("truth", "leave-one")
_IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")

DEFAULT_CONFIG_YAML = """\
# Experiment configuration. Every key is optional; the values shown are the defaults.

# Truth images to distort: file paths, or builtin:<name> for a scikit-image
# sample (astronaut, coffee, chelsea, rocket, immunohistochemistry).
truth: [builtin:astronaut]
# Alternatively a directory of pre-captured stacks (one sub-directory per
# scene, or images directly in it). Requires evaluation: leave-one.
stack_dir: null
# Side length that builtin scenes are cropped and resized to.
scene_size: 256
# Cameras per synthetic stack.
n: 9
# Distortion preset: mild, paper-like or harsh.
severity: paper-like
# Seed from which every stack, recipe and random draw is derived.
master_seed: 0
# Independent stacks per scene.
repetitions: 1
# References: consensus estimators, or random for a seeded stack member.
consensus_methods: [mean, weighted-mean, median, weighted-median, random]
# Calibrators: linear, polynomial, affine, ccmf, histogram.
calibrators: [linear, polynomial, affine, ccmf, histogram]
# truth: score against the clean original.
# leave-one: hold out a random stack member and score against it.
evaluation: truth
# Weighted consensus: deviation (per-camera |x - mean|) or sigma (pixel std).
weight_mode: deviation
# Multiplier on the deviation inside 1 / (1 + d); 255 mimics 8-bit values.
deviation_scale: 1.0
polynomial_degree: 2
ccmf_degree: 3
# Fit on every stride-th pixel.
stride: 1
# Compute the perceptual score (slower than PSNR).
perceptual: true
output_dir: results
emit_images: false
emit_histograms: false
bit_depth: 8
# Worker processes for grid jobs; 1 runs serially.
workers: 1
"""


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    truth: list[str] = field(default_factory=lambda: ["builtin:astronaut"])
    stack_dir: str | None = None
    scene_size: int = 256
    n: int = 9
    severity: str = "paper-like"
    master_seed: int = 0
    repetitions: int = 1
    consensus_methods: list[str] = field(default_factory=lambda: list(REFERENCE_KINDS))
    calibrators: list[str] = field(default_factory=lambda: list(CALIBRATOR_KINDS))
    evaluation: str = "truth"
    weight_mode: str = "deviation"
    deviation_scale: float = 1.0
    polynomial_degree: int = DEFAULT_POLY_DEGREE
    ccmf_degree: int = DEFAULT_CCMF_DEGREE
    stride: int = 1
    perceptual: bool = True
    output_dir: str = "results"
    emit_images: bool = False
    emit_histograms: bool = False
    bit_depth: int = 8
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.consensus_methods:
            raise ConfigError("select at least one consensus method")
        if not self.calibrators:
            raise ConfigError("select at least one calibrator")
        for m in self.consensus_methods:
            if m not in REFERENCE_KINDS:
                raise ConfigError(f"unknown consensus method {m!r}; choose from {REFERENCE_KINDS}")
        for c in self.calibrators:
            if c not in CALIBRATOR_KINDS:
                raise ConfigError(f"unknown calibrator {c!r}; choose from {CALIBRATOR_KINDS}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.evaluation not in EVALUATIONS:
            raise ConfigError(f"evaluation must be one of {EVALUATIONS}")
        if self.stack_dir is None:
            if not self.truth:
                raise ConfigError("give truth images or a stack_dir")
            if self.master_seed is None:
                raise ConfigError("master_seed is required when synthesizing")
            if self.severity not in SEVERITY_PRESETS:
                raise ConfigError(f"unknown severity {self.severity!r}")
            if self.n < 2:
                raise ConfigError("n must be >= 2")
        elif self.evaluation != "leave-one":
            raise ConfigError("pre-captured stacks have no truth; use evaluation: leave-one")
        if self.bit_depth not in (8, 16):
            raise ConfigError("bit_depth must be 8 or 16")
        if not 1 <= self.polynomial_degree <= 5 or not 1 <= self.ccmf_degree <= 5:
            raise ConfigError("polynomial degrees must be in [1, 5]")
        WeightMode(self.weight_mode)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("truth", "consensus_methods", "calibrators"):
            if isinstance(d.get(key), str):
                d[key] = [d[key]]
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_yaml(self) -> str:
        return yaml.safe_dump(asdict(self), sort_keys=False)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def calibrator_options(self, kind: str) -> dict:
        opts: dict = {"stride": self.stride}
        if kind == CalibratorKind.POLYNOMIAL.value:
            opts["degree"] = self.polynomial_degree
        elif kind == CalibratorKind.CCMF.value:
            opts["poly_degree"] = self.ccmf_degree
        return opts


NUMERIC_COLUMNS = (
    "psnr_before",
    "psnr_after",
    "perceptual_before",
    "perceptual_after",
    "hist_spread_before",
    "hist_spread_after",
    "delta_psnr",
    "delta_perceptual",
)
KEY_COLUMNS = ("scene", "repetition", "calibrator", "reference")
CSV_COLUMNS = KEY_COLUMNS + ("status",) + NUMERIC_COLUMNS


@dataclass(frozen=True)
class ResultRow:
    scene: str
    repetition: int
    calibrator: str
    reference: str
    psnr_before: float = float("nan")
    psnr_after: float = float("nan")
    perceptual_before: float = float("nan")
    perceptual_after: float = float("nan")
    hist_spread_before: float = float("nan")
    hist_spread_after: float = float("nan")
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def delta_psnr(self) -> float:
        return self.psnr_after - self.psnr_before

    @property
    def delta_perceptual(self) -> float:
        return self.perceptual_after - self.perceptual_before

    @property
    def key(self) -> tuple:
        return (self.scene, self.repetition, self.calibrator, self.reference)


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def failures(self) -> list[ResultRow]:
        return [r for r in self.rows if not r.ok]

    def select(self, **criteria) -> list[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in criteria.items())]

    def values(self, column: str, **criteria) -> np.ndarray:
        return np.array([getattr(r, column) for r in self.select(**criteria) if r.ok], dtype=np.float64)

    def summary(self) -> list[dict]:
        """Means of every numeric column per (scene, calibrator, reference), plus pooled rows (scene ``ALL``)."""
        groups: dict[tuple, list[ResultRow]] = {}
        for r in self.rows:
            if not r.ok:
                continue
            groups.setdefault((r.scene, r.calibrator, r.reference), []).append(r)
            groups.setdefault(("ALL", r.calibrator, r.reference), []).append(r)
        out = []
        for (scene, cal, ref), rows in groups.items():
            entry = {"scene": scene, "calibrator": cal, "reference": ref, "runs": len(rows)}
            for col in NUMERIC_COLUMNS:
                entry[col] = float(np.mean([getattr(r, col) for r in rows]))
            out.append(entry)
        return out


def _fmt(x: float) -> str:
    return "" if not np.isfinite(x) else f"{x:.3f}"


def _write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def emit_csv(table: ResultTable, path) -> None:
    """Write one row per cell with 3-decimal numbers; failed cells keep their key and status."""
    rows = []
    for r in table.rows:
        rows.append(
            [r.scene, r.repetition, r.calibrator, r.reference, r.status]
            + [_fmt(getattr(r, c)) if r.ok else "" for c in NUMERIC_COLUMNS]
        )
    _write_rows(path, CSV_COLUMNS, rows)


def read_csv(path) -> ResultTable:
    """Parse a table written by :func:`emit_csv`. Delta columns are recomputed."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            nums = {c: float(rec[c]) if rec[c] else float("nan") for c in NUMERIC_COLUMNS[:6]}
            rows.append(
                ResultRow(rec["scene"], int(rec["repetition"]), rec["calibrator"], rec["reference"], status=rec["status"], **nums)
            )
    return ResultTable(rows)


def emit_summary(table: ResultTable, path) -> None:
    header = ("scene", "calibrator", "reference", "runs") + NUMERIC_COLUMNS
    rows = [[e["scene"], e["calibrator"], e["reference"], e["runs"]] + [_fmt(e[c]) for c in NUMERIC_COLUMNS] for e in table.summary()]
    _write_rows(path, header, rows)


def emit_histograms(stack: ImageStack, reference: ConsensusImage | Image, path) -> None:
    """256-row CSV of bin counts: one column per camera and channel, then the reference channels."""
    validate_stack(stack)
    ref = reference.image if isinstance(reference, ConsensusImage) else reference
    if ref.shape != stack.shape:
        raise ValueError("reference shape does not match the stack")
    header = ["bin"]
    cols = []
    for i, im in enumerate(stack.images):
        h = histogram(im)
        for c in range(im.channels):
            header.append(f"cam{i}_ch{c}")
            cols.append(h.bins[c])
    h = histogram(ref)
    for c in range(ref.channels):
        header.append(f"reference_ch{c}")
        cols.append(h.bins[c])
    data = np.column_stack([np.arange(NUM_BINS)] + cols)
    _write_rows(path, header, data.tolist())


def load_stack_dir(directory, scene_id: str | None = None) -> ImageStack:
    """Load the images of one stack directory in file-name order.

    ``cam_*`` files are used when present; otherwise every supported image
    except ``truth.*`` and ``reference.*``.
    """
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    cams = [p for p in files if p.name.startswith("cam_")]
    if not cams:
        cams = [p for p in files if p.stem not in ("truth", "reference")]
    stack = ImageStack(tuple(load_image(p) for p in cams), scene_id or directory.name)
    validate_stack(stack)
    return stack


def save_stack_dir(stack: ImageStack, directory, bit_depth: int = 8) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, im in enumerate(stack.images):
        p = directory / f"cam_{i:02d}.png"
        save_image(im, p, bit_depth)
        paths.append(p)
    return paths


@dataclass(frozen=True)
class _Scene:
    scene_id: str
    truth: Image | None = None
    stack: ImageStack | None = None


def _scene_id(entry: str) -> str:
    return entry.split(":", 1)[1] if entry.startswith("builtin:") else Path(entry).stem


def _load_scenes(config: ExperimentConfig) -> list[_Scene]:
    if config.stack_dir is not None:
        root = Path(config.stack_dir)
        subdirs = sorted(p for p in root.iterdir() if p.is_dir())
        if subdirs:
            return [_Scene(d.name, stack=load_stack_dir(d)) for d in subdirs]
        return [_Scene(root.name, stack=load_stack_dir(root))]
    scenes = []
    seen: dict[str, int] = {}
    for entry in config.truth:
        sid = _scene_id(entry)
        if sid in seen:
            seen[sid] += 1
            sid = f"{sid}_{seen[sid]}"
        else:
            seen[sid] = 0
        scenes.append(_Scene(sid, truth=load_scene(entry, config.scene_size)))
    return scenes


def seeded_index(seed: int, n: int) -> int:
    """Index in ``range(n)`` drawn from a PCG64 stream seeded with ``seed``."""
    return int(np.random.Generator(np.random.PCG64(seed)).integers(n))


def _run_job(config: ExperimentConfig, scene_index: int, scene: _Scene, rep: int) -> list[ResultRow]:
    seed = derive_seed(config.master_seed, scene_index, rep)
    if scene.stack is None:
        stack = synthesize_stack(scene.truth, config.n, seed, config.severity, scene_id=scene.scene_id).stack
    else:
        stack = scene.stack

    if config.evaluation == "truth":
        target = scene.truth
        working = stack
    else:
        held_out = seeded_index(derive_seed(seed, 1), len(stack))
        target = stack[held_out]
        working = ImageStack(tuple(im for i, im in enumerate(stack.images) if i != held_out), stack.scene_id)
    validate_stack(working)

    before = score_stack(working, target, config.perceptual)
    out_dir = Path(config.output_dir)
    cell_dir = out_dir / "images" / scene.scene_id / f"rep{rep:03d}"
    if config.emit_images:
        save_stack_dir(working, cell_dir / "uncalibrated", config.bit_depth)

    rows = []
    for ref_kind in config.consensus_methods:
        try:
            if ref_kind == RANDOM_REFERENCE:
                # Draws only from the working stack, so the held-out image is never chosen.
                reference: ConsensusImage | Image = working[seeded_index(derive_seed(seed, 2), len(working))]
            else:
                reference = build_consensus(working, ref_kind, config.weight_mode, config.deviation_scale)
        except Exception as exc:  # noqa: BLE001 - recorded as failed cells
            log.warning("reference %s failed for %s rep %d: %s", ref_kind, scene.scene_id, rep, exc)
            rows.extend(
                ResultRow(scene.scene_id, rep, cal, ref_kind, status=f"failed: {exc}") for cal in config.calibrators
            )
            continue
        ref_img = reference.image if isinstance(reference, ConsensusImage) else reference
        if config.emit_images:
            (cell_dir / ref_kind).mkdir(parents=True, exist_ok=True)
            save_image(ref_img, cell_dir / ref_kind / "reference.png", config.bit_depth)
        for cal in config.calibrators:
            try:
                result = calibrate_stack(working, reference, cal, **config.calibrator_options(cal))
                after = score_stack(result.images, target, config.perceptual)
            except Exception as exc:  # noqa: BLE001 - recorded as failed cells
                log.warning("cell %s/%d/%s/%s failed: %s", scene.scene_id, rep, cal, ref_kind, exc)
                rows.append(ResultRow(scene.scene_id, rep, cal, ref_kind, status=f"failed: {exc}"))
                continue
            rows.append(
                ResultRow(
                    scene.scene_id,
                    rep,
                    cal,
                    ref_kind,
                    psnr_before=before.mean_psnr_db,
                    psnr_after=after.mean_psnr_db,
                    perceptual_before=before.mean_perceptual,
                    perceptual_after=after.mean_perceptual,
                    hist_spread_before=before.histogram_spread,
                    hist_spread_after=after.histogram_spread,
                )
            )
            if config.emit_images:
                save_stack_dir(result.images, cell_dir / ref_kind / cal, config.bit_depth)
            if config.emit_histograms:
                hist_dir = out_dir / "histograms"
                hist_dir.mkdir(parents=True, exist_ok=True)
                emit_histograms(result.images, reference, hist_dir / f"{scene.scene_id}_rep{rep:03d}_{ref_kind}_{cal}.csv")
    return rows


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Run the full grid described by ``config``; the result is deterministic."""
    config.validate()
    scenes = _load_scenes(config)
    jobs = [(i, scene, rep) for i, scene in enumerate(scenes) for rep in range(config.repetitions)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_job, config, i, scene, rep) for i, scene, rep in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_run_job(config, i, scene, rep) for i, scene, rep in jobs]

    ref_order = {k: n for n, k in enumerate(config.consensus_methods)}
    cal_order = {k: n for n, k in enumerate(config.calibrators)}
    scene_order = {s.scene_id: n for n, s in enumerate(scenes)}
    rows = [r for job_rows in results for r in job_rows]
    rows.sort(key=lambda r: (scene_order[r.scene], r.repetition, ref_order[r.reference], cal_order[r.calibrator]))
    return ResultTable(rows)

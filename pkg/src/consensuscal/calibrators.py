"""Per-camera color mapping models fitted from a source image to a reference.

Five model kinds are available:

``linear``
    Per-channel gain and offset by least squares.
``polynomial``
    Per-channel polynomial in the sample value, solved with an orthogonal
    (SVD based) least-squares solver.
``affine``
    A C x (C + 1) matrix mapping ``[r, g, b, 1]`` to the reference pixel,
    fitted densely over all registered pixels.
``ccmf``
    A 256-entry mapping extracted from the joint (source, reference)
    histogram, made monotone by isotonic regression and smoothed by a
    polynomial that is used when the model is applied.
``histogram``
    Classic CDF matching through a 256-entry lookup table.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .consensus import ConsensusImage
from .imaging import NUM_BINS, Image, ImageStack, bin_index, validate_stack

__all__ = [
    "CalibratorKind",
    "CalibrationModel",
    "CalibratedStack",
    "CalibrationError",
    "fit_linear",
    "fit_polynomial",
    "fit_affine_color",
    "fit_ccmf",
    "fit_histogram_match",
    "fit_model",
    "apply_model",
    "calibrate_stack",
    "isotonic_regression",
]

DEFAULT_POLY_DEGREE = 2
DEFAULT_CCMF_DEGREE = 3
RIDGE = 1e-8
_VAR_EPS = 1e-14


class CalibratorKind(str, enum.Enum):
    LINEAR = "linear"
    POLYNOMIAL = "polynomial"
    AFFINE = "affine"
    CCMF = "ccmf"
    HISTOGRAM = "histogram"


class CalibrationError(RuntimeError):
    """A per-camera fit or apply failure; ``camera`` holds the stack index."""

    def __init__(self, message: str, camera: int | None = None):
        super().__init__(message)
        self.camera = camera


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    """A fitted color mapping.

    ``coefficients`` layout depends on ``kind``:

    - linear: (C, 2) rows of (gain, offset)
    - polynomial, ccmf: (C, degree + 1) ascending powers
    - affine: (C, C + 1) matrix acting on ``[pixel, 1]``
    - histogram: unused (empty); the mapping lives in ``table``

    ``table`` is a (C, 256) mapping for ccmf and histogram models.
    """

    kind: CalibratorKind
    channels: int
    coefficients: np.ndarray
    table: np.ndarray | None = None
    degree: int | None = None
    fit_residual: float = 0.0
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", CalibratorKind(self.kind))
        coef = np.array(self.coefficients, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(coef)):
            raise ValueError("model coefficients must be finite")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        if self.table is not None:
            t = np.array(self.table, dtype=np.float64, copy=True)
            t.setflags(write=False)
            object.__setattr__(self, "table", t)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "channels": self.channels,
            "degree": self.degree,
            "coefficients": self.coefficients.tolist(),
            "table": None if self.table is None else self.table.tolist(),
            "fit_residual": self.fit_residual,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        return cls(
            kind=d["kind"],
            channels=int(d["channels"]),
            coefficients=np.asarray(d["coefficients"], dtype=np.float64),
            table=None if d.get("table") is None else np.asarray(d["table"], dtype=np.float64),
            degree=d.get("degree"),
            fit_residual=float(d.get("fit_residual", 0.0)),
            diagnostics=dict(d.get("diagnostics", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CalibrationModel":
        return cls.from_dict(json.loads(text))


def _pairs(source: Image, reference: Image, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    if source.shape != reference.shape:
        raise ValueError(f"source shape {source.shape} does not match reference {reference.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    c = source.channels
    s = source.samples.reshape(-1, c)[::stride]
    r = reference.samples.reshape(-1, c)[::stride]
    return s, r


def _rms(pred: np.ndarray, r: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - r) ** 2)))


def fit_linear(source: Image, reference: Image, stride: int = 1) -> CalibrationModel:
    """Least-squares gain and offset per channel.

    A channel whose source samples are constant gets gain 1 and the offset
    that matches the means; it is listed under ``diagnostics["degenerate"]``.
    """
    s, r = _pairs(source, reference, stride)
    coef = np.empty((s.shape[1], 2))
    degenerate = []
    for c in range(s.shape[1]):
        sc, rc = s[:, c], r[:, c]
        ms, mr = sc.mean(), rc.mean()
        ds = sc - ms
        var = np.dot(ds, ds) / ds.size
        if var <= _VAR_EPS:
            coef[c] = (1.0, mr - ms)
            degenerate.append(c)
            continue
        gain = np.dot(ds, rc - mr) / ds.size / var
        coef[c] = (gain, mr - gain * ms)
    pred = s * coef[:, 0] + coef[:, 1]
    diag = {"degenerate": degenerate} if degenerate else {}
    return CalibrationModel(CalibratorKind.LINEAR, s.shape[1], coef, degree=1, fit_residual=_rms(pred, r), diagnostics=diag)


def _polyfit(x: np.ndarray, y: np.ndarray, degree: int, w: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Least squares in the monomial basis; returns (coefficients, effective degree).

    The degree drops until the design has full column rank, and unused higher
    coefficients are zero.
    """
    n_distinct = np.unique(x).size
    eff = min(degree, n_distinct - 1)
    coef = np.zeros(degree + 1)
    if eff <= 0:
        coef[0] = np.average(y, weights=w)
        return coef, 0
    while True:
        v = np.vander(x, eff + 1, increasing=True)
        rhs = y
        if w is not None:
            sw = np.sqrt(w)
            v = v * sw[:, None]
            rhs = y * sw
        sol, _, rank, _ = np.linalg.lstsq(v, rhs, rcond=None)
        if rank == eff + 1 or eff == 0:
            break
        eff -= 1
    coef[: eff + 1] = sol
    return coef, eff


def fit_polynomial(source: Image, reference: Image, degree: int = DEFAULT_POLY_DEGREE, stride: int = 1) -> CalibrationModel:
    if not 1 <= degree <= 5:
        raise ValueError(f"polynomial degree must be in [1, 5], got {degree}")
    s, r = _pairs(source, reference, stride)
    coef = np.empty((s.shape[1], degree + 1))
    reduced = {}
    for c in range(s.shape[1]):
        coef[c], eff = _polyfit(s[:, c], r[:, c], degree)
        if eff < degree:
            reduced[c] = eff
    pred = np.column_stack([np.polynomial.polynomial.polyval(s[:, c], coef[c]) for c in range(s.shape[1])])
    diag = {"reduced_degree": {str(k): v for k, v in reduced.items()}} if reduced else {}
    return CalibrationModel(CalibratorKind.POLYNOMIAL, s.shape[1], coef, degree=degree, fit_residual=_rms(pred, r), diagnostics=diag)


def fit_affine_color(source: Image, reference: Image, stride: int = 1) -> CalibrationModel:
    """Dense least-squares affine color transform with cross-channel mixing.

    Rank-deficient designs (for example a constant image) are solved with a
    small ridge term and flagged in ``diagnostics["regularized"]``.
    """
    s, r = _pairs(source, reference, stride)
    c = s.shape[1]
    x = np.hstack([s, np.ones((s.shape[0], 1))])
    diag = {}
    if np.linalg.matrix_rank(x) < c + 1:
        m = np.linalg.solve(x.T @ x + RIDGE * np.eye(c + 1), x.T @ r)
        diag["regularized"] = True
    else:
        m, *_ = np.linalg.lstsq(x, r, rcond=None)
    coef = m.T
    return CalibrationModel(CalibratorKind.AFFINE, c, coef, fit_residual=_rms(x @ m, r), diagnostics=diag)


def isotonic_regression(y, w=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit (pool adjacent violators)."""
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64)
    means: list[float] = []
    weights: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y, w):
        means.append(yi)
        weights.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, n2 = means.pop(), weights.pop(), sizes.pop()
            wt = weights[-1] + w2
            means[-1] = (means[-1] * weights[-1] + m2 * w2) / wt
            weights[-1] = wt
            sizes[-1] += n2
    return np.repeat(means, sizes)


def _bin_means(values: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(idx, minlength=NUM_BINS)
    # Average offsets from each bin's minimum so a constant bin stays exact.
    lows = np.full(NUM_BINS, np.inf)
    np.minimum.at(lows, idx, values)
    lows[counts == 0] = 0.0
    sums = np.bincount(idx, weights=values - lows[idx], minlength=NUM_BINS)
    centres = (np.arange(NUM_BINS) + 0.5) / (NUM_BINS - 1)
    means = np.where(counts > 0, lows + sums / np.maximum(counts, 1), np.minimum(centres, 1.0))
    return means, counts


def _ccmf_channel(sc: np.ndarray, rc: np.ndarray, degree: int):
    si, ri = bin_index(sc), bin_index(rc)
    # Joint counts of co-located (source bin, reference bin) pairs.
    corr = np.bincount(si * NUM_BINS + ri, minlength=NUM_BINS * NUM_BINS).reshape(NUM_BINS, NUM_BINS)
    src_level, src_counts = _bin_means(sc, si)
    ref_level, _ = _bin_means(rc, ri)

    filled = src_counts > 0
    centroid = np.zeros(NUM_BINS)
    centroid[filled] = corr[filled] @ ref_level / src_counts[filled]
    mono = isotonic_regression(centroid[filled], src_counts[filled])

    table = np.interp(src_level, src_level[filled], mono)
    interpolated = int(np.count_nonzero(~filled))
    coef, eff = _polyfit(src_level[filled], mono, degree, w=src_counts[filled].astype(np.float64))
    return table, coef, eff, interpolated


def fit_ccmf(source: Image, reference: Image, poly_degree: int = DEFAULT_CCMF_DEGREE, stride: int = 1) -> CalibrationModel:
    """Histogram cross-correlation model function.

    For each channel the joint histogram of co-located source and reference
    bins is reduced to the mean reference level per source bin, made
    non-decreasing by count-weighted isotonic regression, and smoothed by a
    polynomial of ``poly_degree``. Empty source bins are filled by linear
    interpolation between their non-empty neighbours.
    """
    if not 1 <= poly_degree <= 5:
        raise ValueError(f"poly_degree must be in [1, 5], got {poly_degree}")
    s, r = _pairs(source, reference, stride)
    c = s.shape[1]
    tables = np.empty((c, NUM_BINS))
    coef = np.empty((c, poly_degree + 1))
    diag: dict[str, Any] = {"interpolated_bins": [], "reduced_degree": {}}
    for ch in range(c):
        tables[ch], coef[ch], eff, n_interp = _ccmf_channel(s[:, ch], r[:, ch], poly_degree)
        diag["interpolated_bins"].append(n_interp)
        if eff < poly_degree:
            diag["reduced_degree"][str(ch)] = eff
    pred = np.column_stack([np.polynomial.polynomial.polyval(s[:, ch], coef[ch]) for ch in range(c)])
    pred = np.clip(pred, 0.0, 1.0)
    return CalibrationModel(
        CalibratorKind.CCMF, c, coef, table=tables, degree=poly_degree, fit_residual=_rms(pred, r), diagnostics=diag
    )


def fit_histogram_match(source: Image, reference: Image, stride: int = 1) -> CalibrationModel:
    """CDF matching: bin k maps to the first reference level whose CDF reaches the source CDF at k."""
    s, r = _pairs(source, reference, stride)
    c = s.shape[1]
    tables = np.empty((c, NUM_BINS))
    for ch in range(c):
        si, ri = bin_index(s[:, ch]), bin_index(r[:, ch])
        src_cdf = np.cumsum(np.bincount(si, minlength=NUM_BINS))
        ref_cdf = np.cumsum(np.bincount(ri, minlength=NUM_BINS))
        ref_level, ref_counts = _bin_means(r[:, ch], ri)
        # Both images have the same pixel count, so integer CDFs compare directly.
        j = np.searchsorted(ref_cdf, src_cdf, side="left")
        j = np.clip(j, 0, NUM_BINS - 1)
        first = int(np.argmax(ref_counts > 0))
        j = np.maximum(j, first)
        tables[ch] = ref_level[j]
    pred = np.column_stack([tables[ch][bin_index(s[:, ch])] for ch in range(c)])
    return CalibrationModel(CalibratorKind.HISTOGRAM, c, np.empty((c, 0)), table=tables, fit_residual=_rms(pred, r))


def fit_model(source: Image, reference: Image, kind: CalibratorKind | str, **options) -> CalibrationModel:
    kind = CalibratorKind(kind)
    if kind is CalibratorKind.LINEAR:
        return fit_linear(source, reference, **options)
    if kind is CalibratorKind.POLYNOMIAL:
        return fit_polynomial(source, reference, **options)
    if kind is CalibratorKind.AFFINE:
        return fit_affine_color(source, reference, **options)
    if kind is CalibratorKind.CCMF:
        return fit_ccmf(source, reference, **options)
    return fit_histogram_match(source, reference, **options)


def apply_model(img: Image, model: CalibrationModel) -> Image:
    if img.channels != model.channels:
        raise ValueError(f"model expects {model.channels} channels, image has {img.channels}")
    x = img.samples
    kind = model.kind
    if kind is CalibratorKind.LINEAR:
        out = x * model.coefficients[:, 0] + model.coefficients[:, 1]
    elif kind in (CalibratorKind.POLYNOMIAL, CalibratorKind.CCMF):
        out = np.stack(
            [np.polynomial.polynomial.polyval(x[:, :, c], model.coefficients[c]) for c in range(model.channels)],
            axis=-1,
        )
    elif kind is CalibratorKind.AFFINE:
        a = model.coefficients
        out = x @ a[:, :-1].T + a[:, -1]
    else:
        idx = bin_index(x)
        out = np.stack([model.table[c][idx[:, :, c]] for c in range(model.channels)], axis=-1)
    return Image.clamped(out, img.source_bit_depth)


@dataclass(frozen=True, eq=False)
class CalibratedStack:
    images: ImageStack
    models: tuple[CalibrationModel, ...]
    reference: ConsensusImage | Image

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if len(self.models) != len(self.images):
            raise ValueError("one model per calibrated image is required")


def calibrate_stack(
    stack: ImageStack, reference: ConsensusImage | Image, kind: CalibratorKind | str, **options
) -> CalibratedStack:
    """Fit one model per camera against the shared reference and apply it."""
    validate_stack(stack)
    ref_img = reference.image if isinstance(reference, ConsensusImage) else reference
    if ref_img.shape != stack.shape:
        raise ValueError(f"reference shape {ref_img.shape} does not match stack {stack.shape}")
    outputs, models = [], []
    for i, img in enumerate(stack.images):
        try:
            model = fit_model(img, ref_img, kind, **options)
            outputs.append(apply_model(img, model))
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise CalibrationError(f"camera {i}: {exc}", camera=i) from exc
        models.append(model)
    return CalibratedStack(ImageStack(tuple(outputs), stack.scene_id), tuple(models), reference)

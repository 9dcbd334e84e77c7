"""Multi-camera color calibration against per-pixel consensus images."""

from .calibrators import (
    CalibratedStack,
    CalibrationError,
    CalibrationModel,
    CalibratorKind,
    apply_model,
    calibrate_stack,
    fit_affine_color,
    fit_ccmf,
    fit_histogram_match,
    fit_linear,
    fit_polynomial,
)
from .consensus import (
    ConsensusImage,
    ConsensusMethod,
    WeightMap,
    WeightMode,
    build_consensus,
    deviation_weights,
    pixel_mean,
    pixel_median,
    pixel_std,
    pixel_weighted_mean,
    pixel_weighted_median,
)
from .distortion import DistortionRecipe, SyntheticStack, apply_recipe, random_recipe, synthesize_stack
from .harness import ExperimentConfig, ResultTable, emit_csv, emit_histograms, run_experiment
from .imaging import Histogram, Image, ImageStack, histogram, load_image, save_image, validate_stack
from .metrics import MetricReport, histogram_spread, mse, perceptual_diff, psnr, report

__version__ = "0.1.0"

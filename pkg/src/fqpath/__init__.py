"""No-reference focus quality scoring for whole-slide microscopy images."""

from .errors import ConvergenceError, DesignError, FQPathError, InvariantError, ParseError
from .evaluation import (
    CorrelationReport,
    PairedSamples,
    correlation_report,
    krcc,
    make_blur_ladder,
    plcc,
    rmse_after_fit,
    significance_test,
    srcc,
    threshold_sweep,
)
from .filters import DerivativeFilter, design_derivative_filter
from .hvsm import HvsmKernel, load_kernel, save_kernel, synthesize_kernel
from .optics import PsfModel, SampledSpectrum, psf_spectrum, psf_value
from .projection import ProjectionModel, TrainingProfiles, fit_projection, load_projection, project_score, save_projection
from .scoring import PatchScore, ScoringParams, score_patch
from .wsi import HeatmapGrid, SlideDecision, TissueConfig, cumsum_curve, decide, render_heatmap, tile_and_score

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DesignError",
    "FQPathError",
    "InvariantError",
    "ParseError",
    "CorrelationReport",
    "PairedSamples",
    "correlation_report",
    "krcc",
    "make_blur_ladder",
    "plcc",
    "rmse_after_fit",
    "significance_test",
    "srcc",
    "threshold_sweep",
    "DerivativeFilter",
    "design_derivative_filter",
    "HvsmKernel",
    "load_kernel",
    "save_kernel",
    "synthesize_kernel",
    "PsfModel",
    "SampledSpectrum",
    "psf_spectrum",
    "psf_value",
    "ProjectionModel",
    "TrainingProfiles",
    "fit_projection",
    "load_projection",
    "project_score",
    "save_projection",
    "PatchScore",
    "ScoringParams",
    "score_patch",
    "HeatmapGrid",
    "SlideDecision",
    "TissueConfig",
    "cumsum_curve",
    "decide",
    "render_heatmap",
    "tile_and_score",
]

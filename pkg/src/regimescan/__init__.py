"""Spatial regime detection with adaptive weights, plus global and regime-specific spatial models."""

from .data import (
    DatasetConfig,
    Region,
    RunResult,
    SynthSpec,
    generate_synthetic,
    half_plane_regions,
    load_dataset,
    quadrant_regions,
    read_results,
    read_trace,
    trace_to_csv,
    write_dataset,
    write_results,
    write_trace,
)
from .detector import (
    OUTLIER,
    Detection,
    DetectorConfig,
    RegimePartition,
    WeightState,
    chi_kernel,
    detect_regimes,
    extract_regimes,
    tau_from_alpha,
    wald_matrix,
    wald_statistic,
)
from .errors import *  # noqa: F401,F403
from .local import (
    BandwidthSearch,
    Dataset,
    LocalFit,
    LocalFits,
    aic_c,
    effective_parameters,
    fit_all,
    gwr_hat_matrix,
    initial_weights,
    lwls_fit,
    select_bandwidth,
)
from .models import (
    MODEL_KINDS,
    ModelFit,
    ModelSpec,
    SpatialWeights,
    build_knn_weights,
    compare_models,
    fit_model,
    regime_design,
    significance_stars,
)
from .pipeline import RunConfig, run_pipeline
from .spatial import Coordinates, KernelSpec, adaptive_radii, adaptive_radius, kernel_weight, pairwise_distances

__version__ = "0.1.0"

"""Cluster, segregate and perturb: model-agnostic explainability for land-surface forecasters.

Weather series are clustered per variable with soft-DTW k-means, samples are
grouped into weather segments by their cluster tuple, and each segment is
perturbed one meteorological quantity at a time to measure how a black-box
forecaster's NDVI responds.
"""
from .analysis import (
    CorrelationPoints,
    FitReport,
    FitResult,
    SegmentNdviCurve,
    correlation_points,
    fit_curves,
    global_sensitivity,
    local_sensitivity,
    segment_ndvi_curve,
    standardize_curve,
)
from .clustering import (
    ClusterScores,
    KMeansModel,
    inter_centroid_score,
    intra_cluster_score,
    kmeans_fit,
    predict_cluster,
    predict_clusters,
    soft_dtw_barycenter,
    sweep_k,
)
from .data import (
    Dataset,
    GridShape,
    Quantity,
    Sample,
    downsample_channel,
    load_archive,
    normalized_to_physical,
    physical_to_normalized,
    write_archive,
)
from .errors import CSPError
from .external import ExternalForecaster
from .forecaster import Forecast, SyntheticForecaster, SyntheticModelParams, forecast, ndvi, synthetic_forecast
from .metrics import dtw, soft_dtw, soft_dtw_divergence, soft_dtw_grad, soft_min
from .perturbation import PerturbationGrid, PerturbationSpec, perturb, perturbation_batch
from .pipeline import PipelineConfig, run_stage
from .segmentation import WeatherSegment, assign_segment, segregate
from .synthgen import PlantedRegimeSpec, generate_archive

__version__ = "0.1.0"

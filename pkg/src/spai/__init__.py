"""Spectral detector of AI-generated images.

A frozen encoder pretrained on frequency reconstruction of real images
provides the reference spectral model; per-patch similarity features between
an image and its low/high frequency components, fused by a single-query
attention over any number of patches, yield the detection score.
"""

from .backbone import (
    BackboneConfig,
    DecodingHead,
    SpectralEncoder,
    load_pretrained,
    parameter_checksum,
    pretext_step,
    pretrain_toy,
    save_backbone,
)
from .detector import DetectorConfig, SpectralDetector, load_detector, save_detector
from .errors import (
    CheckpointError,
    InvalidDatasetError,
    InvalidInputError,
    SpaiError,
    SymmetryViolationError,
    UndefinedMetricError,
)
from .evaluation import (
    ManifestRecord,
    MetricsReport,
    auc,
    average_precision,
    balanced_accuracy,
    evaluate_detector,
    load_manifest,
    perturb,
    write_manifest,
)
from .sca import (
    ClassificationHead,
    DetectionResult,
    PatchGrid,
    SpectralContextAttention,
    attention_heatmap,
    patchify,
)
from .scv import SpectralMap, assemble_spectral_vector, pool_block_stats, spectral_context
from .spectral import (
    FrequencyComponents,
    RadialMask,
    Spectrum,
    build_radial_mask,
    dft2,
    frequency_distance,
    idft2,
    sample_component,
    split_frequency,
)
from .srs import ProjectionBank, ProjectionOperator, SrsTriplet, pool_srs, srs, srs_triplet
from .training import (
    AugmentationPolicy,
    FitResult,
    TrainConfig,
    augment_views,
    bce_loss,
    fit,
    lr_schedule,
)

__version__ = "0.1.0"

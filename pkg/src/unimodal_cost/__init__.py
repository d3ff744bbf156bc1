"""Noise-sampling cross-entropy regularizers for stereo cost volumes.

Cost volumes, softargmin disparity regression, label distributions, losses
with closed-form gradients, classic matching costs, synthetic scenes,
evaluation metrics and file formats.
"""

from .errors import DomainError, EmptySupervisionError, FormatError, NumericalAbort
from .labels import (
    Gaussian,
    LabelDistribution,
    Laplacian,
    OneHot,
    ThreePixel,
    gaussian_label,
    label_rows,
    label_volume,
    laplacian_label,
    one_hot,
    three_pixel,
)
from .losses import (
    LossConfig,
    LossReport,
    combined_loss,
    combined_loss_gradient,
    cross_entropy,
    finite_difference_check,
    noise_sampling_loss,
    regression_loss,
)
from .matching import (
    census_cost_volume,
    optimize_free_volume,
    patch_cost_volume,
    sad_cost_volume,
    train_patch_matcher,
)
from .metrics import MetricsReport, ShapeDiagnostics, d1_metrics, shape_diagnostics, three_px_error
from .scenes import SceneSpec, StereoPair, generate_scene
from .volume import CostVolume, DisparityMap, ProbabilityVolume, softargmin, softmax_neg_cost, wta_argmin

__version__ = "0.1.0"

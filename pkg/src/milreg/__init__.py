"""milreg: weakly-supervised regression of tumor-area percentage from bags of
slide patches, with mean / attention / clustering-constrained pooling and a
recursive proxy-label segmenter."""

from .bags import Bag, Instance, Prediction, TumorPercentage, load_bags, make_bag, save_bags
from .datasets import (
    CohortSpec,
    PercentageDistribution,
    RasterCohortSpec,
    generate_bag,
    generate_cohort,
    generate_raster_cohort,
    generate_slide_raster,
)
from .estimators import (
    AttentionMilRegressor,
    ClamRegressor,
    MeanPoolRegressor,
    bag_loss,
    bag_loss_and_gradients,
    load_checkpoint,
    make_estimator,
    save_checkpoint,
)
from .features import RandomProjectionFeatures
from .heatmaps import Heatmap, build_heatmap, save_heatmap
from .metrics import (
    InterpretabilityResult,
    MetricReport,
    aggregate_folds,
    interpretability_auc,
    pearson,
    roc_auc,
    roc_curve,
    spearman,
)
from .model_selection import (
    CaseRecord,
    FoldMembership,
    FoldPlan,
    early_stop_check,
    make_cv_folds,
    optimize_threshold,
)
from .pooling import (
    MilModel,
    attention_pool,
    attention_weights,
    clam_instance_loss,
    forward,
    instance_forward,
    mean_pool,
    weseg_percentage,
    weseg_proxy_labels,
)
from .preprocessing import (
    MarkerNotFound,
    PatchGrid,
    SlideRaster,
    extract_marker_region,
    extract_patches,
    marker_percentage,
    patch_labels_from_mask,
    percentage_from_marker,
    percentage_from_mask,
    segment_tissue,
    tile_slide,
)
from .targets import AmplifySpec, NoiseSpec, amplify, binarize, deamplify, inject_noise
from .weseg import SmallConvNet, WesegModel

__version__ = "0.1.0"

__all__ = [
    "AmplifySpec",
    "AttentionMilRegressor",
    "Bag",
    "CaseRecord",
    "ClamRegressor",
    "CohortSpec",
    "FoldMembership",
    "FoldPlan",
    "Heatmap",
    "Instance",
    "InterpretabilityResult",
    "MarkerNotFound",
    "MeanPoolRegressor",
    "MetricReport",
    "MilModel",
    "NoiseSpec",
    "PatchGrid",
    "PercentageDistribution",
    "Prediction",
    "RandomProjectionFeatures",
    "RasterCohortSpec",
    "SlideRaster",
    "SmallConvNet",
    "TumorPercentage",
    "WesegModel",
    "aggregate_folds",
    "amplify",
    "attention_pool",
    "attention_weights",
    "bag_loss",
    "bag_loss_and_gradients",
    "binarize",
    "build_heatmap",
    "clam_instance_loss",
    "deamplify",
    "early_stop_check",
    "extract_marker_region",
    "extract_patches",
    "forward",
    "generate_bag",
    "generate_cohort",
    "generate_raster_cohort",
    "generate_slide_raster",
    "inject_noise",
    "instance_forward",
    "interpretability_auc",
    "load_bags",
    "load_checkpoint",
    "make_bag",
    "make_cv_folds",
    "make_estimator",
    "marker_percentage",
    "mean_pool",
    "optimize_threshold",
    "patch_labels_from_mask",
    "pearson",
    "percentage_from_marker",
    "percentage_from_mask",
    "roc_auc",
    "roc_curve",
    "save_bags",
    "save_checkpoint",
    "save_heatmap",
    "segment_tissue",
    "spearman",
    "tile_slide",
    "weseg_percentage",
    "weseg_proxy_labels",
]

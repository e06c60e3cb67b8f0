"""Puzzle-CAM toolkit: class activation maps with tile-consistency training.

The package trains an image classifier whose class activation maps are
regularized to agree between a full image and its four merged quadrants, then
turns those maps into pseudo segmentation labels and scores them with mIoU.
Everything runs on numpy with an internal reverse-mode tape, double
precision, deterministically under fixed seeds.
"""

from .cams import (
    GROUND_TRUTH,
    NORM_EPS,
    PREDICTION,
    CAMStack,
    ClassifierWeights,
    FeatureMap,
    LabelVector,
    compute_cams,
    gap,
    mask_by_labels,
    normalize_array,
    normalize_cams,
)
from .data import (
    AugmentationConfig,
    DatasetDescriptor,
    DatasetItem,
    SyntheticConfig,
    augment,
    load_dataset,
    load_image,
    load_mask,
    make_synthetic,
    resize_bilinear,
    resize_chw,
    save_image,
    save_mask,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetError,
    DivergenceError,
    PCAMFormatError,
    PuzzleCAMError,
)
from .inference import (
    InferenceConfig,
    MIoUReport,
    PseudoLabelConfig,
    evaluate_checkpoint,
    evaluate_miou,
    export_cams,
    import_cams,
    infer_cams,
    make_pseudo_labels,
)
from .losses import (
    AlphaSchedule,
    LossBreakdown,
    alpha_at,
    reconstruction_loss,
    reconstruction_loss_grads,
    soft_margin_cls_loss,
    soft_margin_cls_loss_grad,
    total_loss,
)
from .model import BackboneSpec, Classifier, ForwardResult, load_model
from .puzzle import GRID_POSITIONS, PuzzleTiles, merge, merge_batch, tile, tile_batch
from .train import (
    ABLATION_ROWS,
    TrainConfig,
    TrainLogRecord,
    TrainOutcome,
    run_ablation,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "GROUND_TRUTH",
    "NORM_EPS",
    "PREDICTION",
    "GRID_POSITIONS",
    "ABLATION_ROWS",
    "AlphaSchedule",
    "AugmentationConfig",
    "BackboneSpec",
    "CAMStack",
    "CheckpointError",
    "Classifier",
    "ClassifierWeights",
    "ConfigError",
    "ContractError",
    "DatasetDescriptor",
    "DatasetError",
    "DatasetItem",
    "DivergenceError",
    "FeatureMap",
    "ForwardResult",
    "InferenceConfig",
    "LabelVector",
    "LossBreakdown",
    "MIoUReport",
    "PCAMFormatError",
    "PseudoLabelConfig",
    "PuzzleCAMError",
    "PuzzleTiles",
    "SyntheticConfig",
    "TrainConfig",
    "TrainLogRecord",
    "TrainOutcome",
    "alpha_at",
    "augment",
    "compute_cams",
    "evaluate_checkpoint",
    "evaluate_miou",
    "export_cams",
    "gap",
    "import_cams",
    "infer_cams",
    "load_dataset",
    "load_image",
    "load_mask",
    "load_model",
    "make_pseudo_labels",
    "make_synthetic",
    "mask_by_labels",
    "merge",
    "merge_batch",
    "normalize_array",
    "normalize_cams",
    "reconstruction_loss",
    "reconstruction_loss_grads",
    "resize_bilinear",
    "resize_chw",
    "run_ablation",
    "save_image",
    "save_mask",
    "soft_margin_cls_loss",
    "soft_margin_cls_loss_grad",
    "tile",
    "tile_batch",
    "total_loss",
    "train",
]

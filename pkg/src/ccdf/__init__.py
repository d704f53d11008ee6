"""Unsupervised bi-temporal change detection.

Style-transfer generators with a cycle term learn what stays the same
between two acquisitions; a mask-gated segmentation network absorbs what
cannot be reconstructed; augmentation consistency regularizes the masks.
"""

from .change_segmentation import (
    SegmentationNet,
    SegmenterConfig,
    binarize,
    predict_mask,
    reg_loss,
    seg_loss,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .cycle_consistency import (
    Generator,
    GeneratorConfig,
    IdentityFeatures,
    LossWeights,
    RandomConvFeatures,
    VggFeatures,
    build_feature_extractor,
    content_loss,
    cycle_loss,
    generation_loss,
    l1_loss,
    stage1_loss,
    translate,
)
from .dataio import (
    CHANGED,
    UNCHANGED,
    UNDEFINED,
    ChangeRegion,
    ImageTensor,
    ReferenceMap,
    SyntheticSpec,
    load_change_map,
    load_raster,
    load_reference_map,
    make_synthetic_pair,
    save_change_map,
    save_raster,
    save_reference_map,
)
from .metrics import ConfusionMatrix, MetricSet, accumulate_confusion, compute_metrics, evaluation_report
from .preprocess import DegenerateImageError, PatchGrid, standardize, stitch, tile
from .semantic_consistency import Augmentation, augment, restore, sem_loss, stage2_loss
from .trainer_pipeline import (
    TrainConfig,
    TrainReport,
    TrainingDivergedError,
    infer_full_image,
    lr_at_step,
    run_stage1,
    run_stage2,
    run_stage3,
    stage3_loss,
    train_pipeline,
)

__version__ = "0.1.0"

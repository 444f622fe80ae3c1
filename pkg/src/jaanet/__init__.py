"""Joint facial action-unit detection and face alignment.

A desk-scale implementation of the joint AU detection / face alignment
architecture with hierarchical multi-scale region layers and landmark-driven
adaptive attention, plus its data pipeline, training harness, metrics, and
CLI.
"""

from .attention import (AU_CENTER_RULES, SUPPORTED_AU_IDS, compute_au_centers,
                        image_to_map_coords, predefine_all,
                        predefine_attention_map)
from .config import JAANetConfig, TrainConfig, Variant, lr_at
from .data import (Manifest, Sample, SyntheticConfig, generate_synthetic,
                   load_manifest, occlude, random_crop_flip, save_manifest,
                   similarity_align, subject_folds)
from .evaluation import (ConfusionCounts, accuracy, confusion_counts,
                         evaluate_model, f1_frame, failure_rate, mean_error,
                         occlusion_sweep)
from .landmarks import (CANONICAL_TEMPLATE, DEFAULT_INDEX_MAP, LandmarkSet,
                        SemanticIndexMap)
from .layers import (HMRegionLayer, PartitionedConv2d, PlainBlock,
                     RegionLayer, count_partitioned_params)
from .losses import (au_detection_loss, au_weights, bp_enhancement,
                     face_alignment_loss, local_au_loss,
                     refinement_constraint, total_loss, weighted_cross_entropy,
                     weighted_dice)
from .network import (JAANet, ModelOutputs, load_checkpoint, save_checkpoint)
from .training import TrainResult, train, transfer_init

__version__ = "0.1.0"

__all__ = [
    "AU_CENTER_RULES", "SUPPORTED_AU_IDS", "CANONICAL_TEMPLATE",
    "ConfusionCounts", "DEFAULT_INDEX_MAP", "HMRegionLayer", "JAANet",
    "JAANetConfig", "LandmarkSet", "Manifest", "ModelOutputs",
    "PartitionedConv2d", "PlainBlock", "RegionLayer", "Sample",
    "SemanticIndexMap", "SyntheticConfig", "TrainConfig", "TrainResult",
    "Variant", "accuracy", "au_detection_loss", "au_weights",
    "bp_enhancement", "compute_au_centers", "confusion_counts",
    "count_partitioned_params", "evaluate_model", "f1_frame", "failure_rate",
    "face_alignment_loss", "generate_synthetic", "image_to_map_coords",
    "load_checkpoint", "load_manifest", "local_au_loss", "lr_at",
    "mean_error", "occlude", "occlusion_sweep", "predefine_all",
    "predefine_attention_map", "random_crop_flip", "refinement_constraint",
    "save_checkpoint", "save_manifest", "similarity_align", "subject_folds",
    "total_loss", "train", "transfer_init", "weighted_cross_entropy",
    "weighted_dice",
]

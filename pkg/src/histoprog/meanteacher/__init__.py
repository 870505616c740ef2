"""Semi-supervised tissue classification of slide patches with a Mean Teacher."""

from .compare import SSLComparison, baseline_config, compare_ssl, macro_f1
from .maps import MAP_PALETTE, ClassificationMap, classification_map, read_map
from .model import (CLASSIFIER, DEFAULT_LAYER, LAYERS, MTConfig, MTModel, PseudoLabels, consistency_loss,
                    extract_features, pseudo_label_select, train_mean_teacher)
from .patches import (AUGMENT_MODES, PatchSample, apply_manifest, augment_patch, augment_pixels, extract_patches,
                      grid_shape, label_fraction, majority_labels, random_augment, read_manifest, split_by_slide,
                      stack_patches, synthetic_patches, tile, write_manifest)

__all__ = [
    "SSLComparison", "baseline_config", "compare_ssl", "macro_f1",
    "MAP_PALETTE", "ClassificationMap", "classification_map", "read_map",
    "CLASSIFIER", "DEFAULT_LAYER", "LAYERS", "MTConfig", "MTModel", "PseudoLabels", "consistency_loss",
    "extract_features", "pseudo_label_select", "train_mean_teacher",
    "AUGMENT_MODES", "PatchSample", "apply_manifest", "augment_patch", "augment_pixels", "extract_patches",
    "grid_shape", "label_fraction", "majority_labels", "random_augment", "read_manifest", "split_by_slide",
    "stack_patches", "synthetic_patches", "tile", "write_manifest",
]

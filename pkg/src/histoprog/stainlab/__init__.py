"""Stain normalization: Reinhard, Macenko, SSIM/PCC and the style-transfer normalizer."""

from .color import delta_e, lab_to_rgb, rgb_lab_roundtrip, rgb_to_lab, to_gray
from .evaluate import class_mean_lab, cross_style_distance, paired_distance
from .io import load_lab_stats, load_stain_basis, read_png, save_json, write_png
from .macenko import StainBasis, angle_deg, estimate_stain_basis, macenko_normalize, optical_density
from .metrics import pcc, ssim, ssim_tensor
from .reinhard import LabStats, lab_stats, reinhard_lab, reinhard_normalize
from .style import (StyleConfig, StyleModel, adversarial_losses, feature_preserving_loss, gray_normalize,
                    kl_divergence, normalize_image, recon_loss, train_style_transfer, train_tumor_classifier)

__all__ = [
    "delta_e", "lab_to_rgb", "rgb_lab_roundtrip", "rgb_to_lab", "to_gray",
    "class_mean_lab", "cross_style_distance", "paired_distance",
    "load_lab_stats", "load_stain_basis", "read_png", "save_json", "write_png",
    "StainBasis", "angle_deg", "estimate_stain_basis", "macenko_normalize", "optical_density",
    "pcc", "ssim", "ssim_tensor",
    "LabStats", "lab_stats", "reinhard_lab", "reinhard_normalize",
    "StyleConfig", "StyleModel", "adversarial_losses", "feature_preserving_loss", "gray_normalize",
    "kl_divergence", "normalize_image", "recon_loss", "train_style_transfer", "train_tumor_classifier",
]

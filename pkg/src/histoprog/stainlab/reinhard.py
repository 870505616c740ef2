"""Reinhard color transfer: match per-channel LAB mean and spread to a target."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import lab_to_rgb, rgb_to_lab


@dataclass(frozen=True)
class LabStats:
    mean: tuple
    std: tuple

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("LabStats needs three means and three standard deviations")
        if min(self.std) <= 0:
            raise ValueError("LabStats standard deviations must be positive")

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, d) -> "LabStats":
        return cls(tuple(float(v) for v in d["mean"]), tuple(float(v) for v in d["std"]))


def lab_stats(img) -> LabStats:
    lab = rgb_to_lab(img).reshape(-1, 3)
    return LabStats(tuple(lab.mean(axis=0)), tuple(lab.std(axis=0)))


def reinhard_lab(src, target: LabStats) -> np.ndarray:
    """The matched LAB image before conversion back (and gamut clamping)."""
    lab = rgb_to_lab(src)
    flat = lab.reshape(-1, 3)
    mu, sd = flat.mean(axis=0), flat.std(axis=0)
    if np.any(sd <= 1e-12):
        raise ValueError(f"degenerate channel: LAB channel {int(np.argmin(sd))} of the source is constant")
    return (lab - mu) / sd * np.asarray(target.std) + np.asarray(target.mean)


def reinhard_normalize(src, target: LabStats) -> np.ndarray:
    return lab_to_rgb(reinhard_lab(src, target))

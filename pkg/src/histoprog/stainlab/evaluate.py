"""Per-class color distances used to compare normalizers."""

from __future__ import annotations

import numpy as np

from .color import delta_e, rgb_to_lab

MIN_CLASS_PIXELS = 50


def class_mean_lab(img, mask) -> dict:
    lab = rgb_to_lab(img)
    return {int(k): lab[mask == k].mean(axis=0) for k in np.unique(mask) if np.sum(mask == k) >= MIN_CLASS_PIXELS}


def paired_distance(x, y, mask) -> float:
    """Mean over tissue classes of the CIE76 distance between class-mean LAB colors of two renderings."""
    px, py = class_mean_lab(x, mask), class_mean_lab(y, mask)
    return float(np.mean([delta_e(px[k], py[k]) for k in px]))


def cross_style_distance(pairs, normalizer=None) -> float:
    """Average paired distance between the A and B renderings of the same tissue.

    ``pairs`` yields ``(image_a, image_b, mask)``; with a ``normalizer`` both renderings
    pass through it first, so the number measures how much style variation survives.
    """
    f = normalizer or (lambda im: im)
    return float(np.mean([paired_distance(f(a), f(b), m) for a, b, m in pairs]))

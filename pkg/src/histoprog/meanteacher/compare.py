"""Mean Teacher against a supervised-only baseline trained on the same labels."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..synthdata.slides import N_CLASSES
from .model import MTConfig, MTModel, train_mean_teacher
from .patches import stack_patches


def macro_f1(pred, truth, n_classes: int = N_CLASSES) -> float:
    """Unweighted mean F1 over classes present in ``truth`` or ``pred``."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    scores = []
    for c in range(n_classes):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        if tp + fp + fn == 0:
            continue
        scores.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores)) if scores else float("nan")


def baseline_config(cfg: MTConfig) -> MTConfig:
    """Supervised-only counterpart of ``cfg``: no consistency, no pseudo-labels, the same number of epochs."""
    return replace(cfg, consistency=0.0, pseudo_rounds=0, epochs=cfg.epochs * (1 + cfg.pseudo_rounds))


@dataclass
class SSLComparison:
    mean_teacher: MTModel
    baseline: MTModel

    def rows(self, test_pixels, test_labels) -> list:
        """Accuracy and macro F1 rows: the baseline's student and the Mean Teacher's teacher."""
        out = []
        for name, model, which in (("supervised", self.baseline, "student"), ("mean_teacher", self.mean_teacher,
                                                                              "teacher")):
            pred = model.predict(test_pixels, which)
            out.append({"model": name, "accuracy": float(np.mean(pred == test_labels)),
                        "macro_f1": macro_f1(pred, test_labels)})
        return out


def compare_ssl(train_samples, cfg: MTConfig) -> SSLComparison:
    """Train both models on ``train_samples``; patches without a label form the unlabeled pool."""
    x, y, _ = stack_patches(train_samples)
    lab = y >= 0
    if not lab.any():
        raise ValueError("no labeled training patches")
    labeled, unlabeled = (x[lab], y[lab]), (x, np.full(len(x), -1))
    mt = train_mean_teacher(labeled, unlabeled, cfg)
    base = train_mean_teacher(labeled, unlabeled, baseline_config(cfg))
    return SSLComparison(mt, base)

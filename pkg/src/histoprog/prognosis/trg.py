"""Tumor regression grade prediction from pooled tissue-class maps."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .model import PatientBatch, PrognosisConfig, PrognosisModel, train_prognosis

# dichotomizations and three-way splits of the 1..5 grade
GROUPINGS = (
    "1 vs 2-5", "1-2 vs 3-5", "1-3 vs 4-5",
    "1 vs 2-3 vs 4-5", "1-2 vs 3 vs 4-5", "1-2 vs 3-4 vs 5",
)


def parse_grouping(grouping: str) -> list:
    """``"1-2 vs 3-5"`` -> ``[[1, 2], [3, 4, 5]]``; groups must tile 1..5 in order."""
    groups = []
    for part in grouping.split("vs"):
        part = part.strip()
        lo, _, hi = part.partition("-")
        lo, hi = int(lo), int(hi or lo)
        groups.append(list(range(lo, hi + 1)))
    flat = [g for grp in groups for g in grp]
    if flat != [1, 2, 3, 4, 5]:
        raise ValueError(f"grouping {grouping!r} must cover grades 1..5 exactly once, in order")
    return groups


def group_labels(grades, grouping: str) -> np.ndarray:
    lookup = {}
    for k, grp in enumerate(parse_grouping(grouping)):
        for g in grp:
            lookup[g] = k
    return np.array([lookup[int(g)] for g in grades])


def pooled_map_features(maps_or_features) -> np.ndarray:
    """Average class probabilities of each classification map, or pass (N, 5) arrays through."""
    if hasattr(maps_or_features, "probs"):
        maps_or_features = [maps_or_features]
    if isinstance(maps_or_features, (list, tuple)) and maps_or_features and hasattr(maps_or_features[0], "probs"):
        return np.stack([m.probs.reshape(-1, m.probs.shape[-1]).mean(axis=0) for m in maps_or_features])
    f = np.asarray(maps_or_features, dtype=np.float64)
    return f[None, :] if f.ndim == 1 else f


def train_trg(features, grades, grouping: str = "1-2 vs 3-5", *, val_features=None, val_grades=None,
              cfg: PrognosisConfig | None = None) -> PrognosisModel:
    n_groups = len(parse_grouping(grouping))
    cfg = cfg or PrognosisConfig(head="trg", use_attention=False, hidden=(16,), strategy="mean",
                                 lr=0.01, max_epochs=400, patience=40)
    if cfg.head != "trg":
        raise ValueError("train_trg needs a trg head configuration")
    cfg = replace(cfg, trg_grouping=grouping)
    val = PatientBatch.from_vectors(pooled_map_features(val_features)) if val_features is not None else None
    val_labels = group_labels(val_grades, grouping) if val_grades is not None else None
    return train_prognosis(PatientBatch.from_vectors(pooled_map_features(features)), None, cfg,
                           train_labels=group_labels(grades, grouping), val=val, val_labels=val_labels,
                           n_out=n_groups)


def predict_trg(maps_or_features, model: PrognosisModel, grouping: str | None = None) -> tuple:
    """``(group index per input, group probabilities)``; group 0 is the lowest grades."""
    if model.cfg.head != "trg":
        raise ValueError("model head is not trg")
    if grouping is not None and grouping != model.cfg.trg_grouping:
        raise ValueError(f"grouping {grouping!r} does not match the model's {model.cfg.trg_grouping!r}")
    probs = model.predict_probs(PatientBatch.from_vectors(pooled_map_features(maps_or_features)))
    return np.argmax(probs, axis=1), probs

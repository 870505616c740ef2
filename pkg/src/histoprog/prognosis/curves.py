"""Held-out c-index as a function of the fraction of training patients used."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .metrics import concordance_index
from .model import PatientBatch, PrognosisConfig, train_prognosis

LABEL_FRACTIONS = (0.125, 0.25, 0.375, 0.5, 0.75, 1.0)


def subsample(train_idx, fraction: float, seed: int) -> np.ndarray:
    """A seeded subset of ``train_idx`` holding ``round(fraction * n)`` patients (at least two)."""
    if not 0 < fraction <= 1:
        raise ValueError(f"label fraction must be in (0, 1], got {fraction}")
    idx = np.asarray(train_idx)
    n = max(2, int(round(fraction * len(idx))))
    return np.sort(idx[np.random.default_rng([seed, 7]).permutation(len(idx))[:n]])


def label_fraction_curve(patients, split: tuple, cfg: PrognosisConfig, fractions=LABEL_FRACTIONS,
                         seeds=(0,)) -> list:
    """Rows ``{"fraction", "seed", "n_train", "c_index"}``, one per (fraction, seed).

    ``split`` is ``(train, val, test)`` index arrays into ``patients``. Validation and test
    sets stay fixed; only the training set shrinks.
    """
    tr, va, te = split
    t = np.array([p.record.time for p in patients], dtype=np.float64)
    e = np.array([p.record.event for p in patients], dtype=bool)
    batch = lambda idx: PatientBatch.from_patients([patients[i] for i in idx])
    val, test = batch(va), batch(te)
    rows = []
    for frac in fractions:
        for seed in seeds:
            sub = subsample(tr, frac, seed)
            model = train_prognosis(batch(sub), (t[sub], e[sub]), replace(cfg, seed=seed), val=val,
                                    val_records=(t[va], e[va]))
            rows.append({"fraction": float(frac), "seed": int(seed), "n_train": len(sub),
                         "c_index": concordance_index(model.predict_risk(test), (t[te], e[te]))})
    return rows


def mean_curve(rows) -> list:
    """``(fraction, mean c-index)`` pairs in increasing fraction order."""
    fr = sorted({r["fraction"] for r in rows})
    return [(f, float(np.mean([r["c_index"] for r in rows if r["fraction"] == f]))) for f in fr]

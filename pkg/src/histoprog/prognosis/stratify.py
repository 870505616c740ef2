"""Median-risk stratification into low/high groups with KM curves and a log-rank test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import KMCurve, kaplan_meier, log_rank_test


@dataclass
class Stratification:
    low: np.ndarray           # indices
    high: np.ndarray
    threshold: float
    km_low: KMCurve | None = None
    km_high: KMCurve | None = None
    p_value: float = float("nan")
    statistic: float = float("nan")


def stratify_risks(risks, records=None) -> Stratification:
    """Split at the median risk; risks equal to the median go to the low group."""
    r = np.asarray(risks, dtype=np.float64)
    if len(r) < 2:
        raise ValueError("stratification needs at least two patients")
    thr = float(np.median(r))
    low = np.flatnonzero(r <= thr)
    high = np.flatnonzero(r > thr)
    out = Stratification(low, high, thr)
    if records is not None:
        if isinstance(records, tuple):
            t, e = (np.asarray(x) for x in records)
        else:
            t = np.array([x.time for x in records])
            e = np.array([x.event for x in records], dtype=bool)
        out.km_low = kaplan_meier((t[low], e[low]))
        if len(high):
            out.km_high = kaplan_meier((t[high], e[high]))
            lr = log_rank_test((t[low], e[low]), (t[high], e[high]))
            out.p_value, out.statistic = lr.p_value, lr.statistic
    return out

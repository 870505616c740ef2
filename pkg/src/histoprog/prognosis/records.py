"""Survival records, lesion features and the discrete time grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ENDPOINTS = ("OS", "TTR")


@dataclass(frozen=True)
class SurvivalRecord:
    patient_id: str
    time: float
    event: bool
    endpoint: str = "OS"

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time <= 0:
            raise ValueError(f"survival time must be finite and positive, got {self.time}")
        if self.endpoint not in ENDPOINTS:
            raise ValueError(f"endpoint must be one of {ENDPOINTS}, got {self.endpoint!r}")


def as_arrays(records: Sequence[SurvivalRecord]) -> tuple:
    """``(times, events)`` as float and bool arrays."""
    times = np.array([r.time for r in records], dtype=np.float64)
    events = np.array([r.event for r in records], dtype=bool)
    return times, events


@dataclass
class LesionFeature:
    vector: np.ndarray
    volume: float
    patch_features: np.ndarray | None = None

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if not self.volume > 0:
            raise ValueError(f"lesion volume must be positive, got {self.volume}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("lesion features must be finite")


@dataclass(frozen=True)
class TimeGrid:
    """Interval boundaries ``0 = t0 < t1 < ... < t_{m-1}``; the last interval is open to +inf."""

    boundaries: tuple = field()

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or len(b) < 1 or b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise ValueError("time grid boundaries must start at 0 and increase strictly")

    @property
    def m(self) -> int:
        return len(self.boundaries)

    @classmethod
    def from_event_quantiles(cls, times, events, m: int = 4) -> "TimeGrid":
        t = np.asarray(times, dtype=np.float64)[np.asarray(events, dtype=bool)]
        if len(t) == 0:
            raise ValueError("cannot place a time grid without events")
        cuts = np.quantile(t, np.arange(1, m) / m)
        bounds = np.unique(np.concatenate([[0.0], cuts]))
        return cls(tuple(float(x) for x in bounds))

    def interval_of(self, times) -> np.ndarray:
        """Index of the right-open interval ``[t_k, t_{k+1})`` holding each time."""
        return np.searchsorted(np.asarray(self.boundaries), np.asarray(times, dtype=np.float64), side="right") - 1

    def censor_interval(self, times) -> np.ndarray:
        """Latest interval whose right endpoint is at or before the censoring time (-1 if none)."""
        b = np.asarray(self.boundaries)
        ends = np.append(b[1:], np.inf)
        t = np.asarray(times, dtype=np.float64)
        return np.searchsorted(ends, t, side="right") - 1

    def midpoints(self) -> np.ndarray:
        b = np.asarray(self.boundaries)
        if len(b) == 1:
            return np.array([0.0])
        widths = np.diff(b)
        mids = b[:-1] + widths / 2
        return np.append(mids, b[-1] + np.median(widths))

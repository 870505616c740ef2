"""Survival objectives: Cox partial likelihood and censored cross-entropy."""

from __future__ import annotations

import warnings

import numpy as np

from ..gradcore import Tensor, where
from .records import TimeGrid, as_arrays


class NoInformativePatients(ValueError):
    pass


def _times_events(records) -> tuple:
    if isinstance(records, tuple) and len(records) == 2:
        return np.asarray(records[0], dtype=np.float64), np.asarray(records[1], dtype=bool)
    return as_arrays(records)


def cox_pl_loss(risks, records, reduction: str = "sum") -> Tensor:
    """Negative Cox partial log-likelihood.

    ``sum_i E_i * ln sum_{j: T_j >= T_i} exp(r_j - r_i)``; tied event times share one risk
    set (Breslow). ``records`` is a list of :class:`SurvivalRecord` or a ``(times, events)`` pair.
    """
    r = risks if isinstance(risks, Tensor) else Tensor(risks)
    times, events = _times_events(records)
    if not events.any():
        raise NoInformativePatients("no informative patients: every record is censored")
    if not np.all(np.isfinite(r.data)):
        raise ValueError("risks must be finite")
    idx = np.flatnonzero(events)
    at_risk = times[None, :] >= times[idx, None]            # (n_events, n)
    diffs = r.reshape(1, -1) - r[idx].reshape(-1, 1)        # r_j - r_i
    masked = where(at_risk, diffs, -np.inf)
    per_event = masked.logsumexp(axis=1)
    return per_event.sum() if reduction == "sum" else per_event.mean()


def _target_masks(times, events, grid: TimeGrid) -> tuple:
    """Per-patient mask over intervals that the likelihood sums, and the kept-row selector."""
    m = grid.m
    mask = np.zeros((len(times), m), dtype=bool)
    keep = np.ones(len(times), dtype=bool)
    ev_int = grid.interval_of(times)
    cz = grid.censor_interval(times)
    for i in range(len(times)):
        if events[i]:
            mask[i, ev_int[i]] = True
        else:
            mask[i, cz[i] + 1:] = True
            if not mask[i].any():
                keep[i] = False
    return mask, keep


def censored_ce_loss(interval_probs, records, grid: TimeGrid, reduction: str = "mean") -> Tensor:
    """Negative censored log-likelihood over a discrete time grid.

    Events contribute ``-ln p[Y_i]`` (``Y_i`` the interval holding the event); censored
    patients contribute ``-ln sum_{y > Z_i} p[y]`` with ``Z_i`` the last interval ending at or
    before the censoring time. Patients with nothing after ``Z_i`` are dropped with a warning.
    """
    p = interval_probs if isinstance(interval_probs, Tensor) else Tensor(interval_probs)
    times, events = _times_events(records)
    mask, keep = _target_masks(times, events, grid)
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} censored patient(s) carry no information and were excluded")
    mass = (p * mask.astype(np.float64)).sum(axis=1)
    nll = -mass.clip(1e-300, np.inf).log()[np.flatnonzero(keep)]
    return nll.sum() if reduction == "sum" else nll.mean()


def censored_ce_from_logits(logits: Tensor, records, grid: TimeGrid, reduction: str = "mean") -> Tensor:
    """Same objective as :func:`censored_ce_loss`, evaluated stably from unnormalized scores."""
    times, events = _times_events(records)
    mask, keep = _target_masks(times, events, grid)
    logp = logits.log_softmax(axis=1)
    nll = -where(mask, logp, -np.inf).logsumexp(axis=1)
    nll = nll[np.flatnonzero(keep)]
    return nll.sum() if reduction == "sum" else nll.mean()


def risk_score(interval_probs, grid: TimeGrid) -> np.ndarray:
    """Negative expected interval midpoint; larger means earlier predicted events."""
    p = np.asarray(interval_probs.data if isinstance(interval_probs, Tensor) else interval_probs)
    return -(p @ grid.midpoints())

"""Concordance, Kaplan-Meier, log-rank and bootstrap intervals."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import chi2, rankdata

from .records import as_arrays


def _te(records):
    if isinstance(records, tuple) and len(records) == 2:
        return np.asarray(records[0], dtype=np.float64), np.asarray(records[1], dtype=bool)
    return as_arrays(records)


class _Fenwick:
    def __init__(self, n: int):
        self.tree = np.zeros(n + 1, dtype=np.int64)

    def add(self, i: int) -> None:
        i += 1
        while i < len(self.tree):
            self.tree[i] += 1
            i += i & -i

    def prefix(self, i: int) -> int:
        """Count of inserted ranks < i."""
        s = 0
        while i > 0:
            s += self.tree[i]
            i -= i & -i
        return int(s)


def concordance_counts(risks, records) -> tuple:
    """``(concordant, tied_risk, comparable)`` integer pair counts.

    A pair is comparable when the shorter time is an event, or when both times are
    equal and only the first subject had the event. Higher risk should mean the
    earlier event.
    """
    t, e = _te(records)
    r = np.asarray(risks, dtype=np.float64)
    ranks = rankdata(r, method="dense").astype(int) - 1
    n_rank = int(ranks.max()) + 1 if len(r) else 0
    bit = _Fenwick(n_rank)
    counts = np.zeros(n_rank, dtype=np.int64)
    inserted = 0
    conc = ties = comp = 0
    order = np.argsort(-t, kind="stable")
    k = 0
    while k < len(order):
        j = k
        while j < len(order) and t[order[j]] == t[order[k]]:
            j += 1
        group = order[k:j]
        cens = group[~e[group]]
        evs = group[e[group]]
        for c in cens:
            bit.add(ranks[c])
            counts[ranks[c]] += 1
            inserted += 1
        for i in evs:
            less = bit.prefix(ranks[i])
            eq = int(counts[ranks[i]])
            conc += less
            ties += eq
            comp += inserted
        for i in evs:
            bit.add(ranks[i])
            counts[ranks[i]] += 1
            inserted += 1
        k = j
    return conc, ties, comp


def concordance_index(risks, records) -> float:
    """Harrell's c-index; tied risks count one half."""
    conc, ties, comp = concordance_counts(risks, records)
    if comp == 0:
        raise ValueError("no comparable pairs")
    return (conc + 0.5 * ties) / comp


@dataclass
class KMCurve:
    times: np.ndarray      # step locations, starting with 0
    survival: np.ndarray   # S(t) on [times[k], times[k+1])
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1
        return self.survival[np.clip(idx, 0, None)]


def kaplan_meier(records) -> KMCurve:
    """Product-limit estimate; steps only at event times, censored leave after their time."""
    t, e = _te(records)
    if len(t) == 0:
        raise ValueError("kaplan_meier needs at least one record")
    ev_times = np.unique(t[e])
    s = 1.0
    steps, surv, n_risk, n_ev = [0.0], [1.0], [len(t)], [0]
    for u in ev_times:
        n = int(np.sum(t >= u))
        d = int(np.sum((t == u) & e))
        s = s * (1.0 - d / n)
        steps.append(float(u))
        surv.append(s)
        n_risk.append(n)
        n_ev.append(d)
    return KMCurve(np.array(steps), np.array(surv), np.array(n_risk), np.array(n_ev))


@dataclass
class LogRankResult:
    statistic: float
    p_value: float
    observed_a: float
    expected_a: float
    variance: float


def log_rank_test(group_a, group_b) -> LogRankResult:
    """Two-sample log-rank test with one degree of freedom."""
    ta, ea = _te(group_a)
    tb, eb = _te(group_b)
    if len(ta) == 0 or len(tb) == 0:
        raise ValueError("log-rank test needs two non-empty groups")
    t = np.concatenate([ta, tb])
    e = np.concatenate([ea, eb])
    in_a = np.concatenate([np.ones(len(ta), bool), np.zeros(len(tb), bool)])
    if not e.any():
        raise ValueError("log-rank test needs at least one event")
    obs = exp = var = 0.0
    for u in np.unique(t[e]):
        risk = t >= u
        n = risk.sum()
        na = (risk & in_a).sum()
        d = ((t == u) & e).sum()
        da = ((t == u) & e & in_a).sum()
        obs += da
        exp += d * na / n
        if n > 1:
            var += d * (na / n) * (1 - na / n) * (n - d) / (n - 1)
    stat = (obs - exp) ** 2 / var if var > 0 else 0.0
    return LogRankResult(float(stat), float(chi2.sf(stat, 1)), float(obs), float(exp), float(var))


def bootstrap_ci(metric: Callable[[np.ndarray], float], n: int, seed: int, n_resamples: int = 200,
                 level: float = 0.95, workers: int = 1) -> tuple:
    """Percentile interval of ``metric(indices)`` over seeded resamples.

    Each resample draws from its own child seed, so the result is the same for any
    ``workers``. Resamples where the metric is undefined are skipped.
    """
    children = np.random.SeedSequence(seed).spawn(n_resamples)

    def one(ss):
        idx = np.random.default_rng(ss).integers(0, n, size=n)
        try:
            return metric(idx)
        except ValueError:
            return np.nan

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = list(pool.map(one, children))
    else:
        vals = [one(c) for c in children]
    vals = np.asarray(vals, dtype=np.float64)
    vals = vals[np.isfinite(vals)]
    alpha = (1 - level) / 2
    return float(np.quantile(vals, alpha)), float(np.quantile(vals, 1 - alpha))

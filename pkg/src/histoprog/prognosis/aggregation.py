"""Pooling patch features into lesion vectors and lesions into a patient vector."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..gradcore import Tensor, glorot
from .records import LesionFeature

STRATEGIES = ("max", "mean", "weighted")


def aggregate_lesions(lesions: Sequence[LesionFeature], strategy: str) -> np.ndarray:
    """Coordinate-wise max, mean, or volume-weighted mean of lesion feature vectors."""
    if not lesions:
        raise ValueError("cannot aggregate an empty lesion list")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown aggregation strategy {strategy!r}; expected one of {STRATEGIES}")
    V = np.stack([np.asarray(l.vector, dtype=np.float64) for l in lesions])
    if strategy == "max":
        return V.max(axis=0)
    vols = np.array([l.volume for l in lesions], dtype=np.float64)
    if strategy == "mean" or np.all(vols == vols[0]):
        # equal volumes give equal weights: take the mean path so both agree bit for bit
        return V.mean(axis=0)
    w = vols / vols.sum()
    return w @ V


def init_attention(params: dict, dim: int, hidden: int, rng: np.random.Generator, prefix: str = "att") -> dict:
    params[f"{prefix}.V"] = Tensor(glorot(rng, dim, hidden), requires_grad=True, name=f"{prefix}.V")
    params[f"{prefix}.U"] = Tensor(glorot(rng, dim, hidden), requires_grad=True, name=f"{prefix}.U")
    params[f"{prefix}.w"] = Tensor(glorot(rng, hidden, 1)[:, 0], requires_grad=True, name=f"{prefix}.w")
    return params


def attention_scores(x: Tensor, params, prefix: str = "att") -> Tensor:
    """Gated score ``w . (tanh(V x) * sigmoid(U x))`` for every row along the last axis."""
    gate = (x @ params[f"{prefix}.U"]).sigmoid()
    content = (x @ params[f"{prefix}.V"]).tanh()
    return (content * gate) @ params[f"{prefix}.w"]


def attention_pool_tensor(x: Tensor, params, prefix: str = "att") -> tuple:
    """Pool ``x`` of shape (..., n, d) over its patch axis; returns ``(pooled, weights)``."""
    weights = attention_scores(x, params, prefix).softmax(axis=-1)
    pooled = (x * weights.reshape(weights.shape + (1,))).sum(axis=-2)
    return pooled, weights


def attention_pool(patch_features, params, prefix: str = "att") -> tuple:
    """Numpy front end: ``(pooled d-vector, attention weights over the n patches)``."""
    x = np.asarray(patch_features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1:
        raise ValueError("patch_features must be an (n, d) array with n >= 1")
    consts = {k: Tensor(v.data if isinstance(v, Tensor) else v) for k, v in params.items()}
    pooled, w = attention_pool_tensor(Tensor(x), consts, prefix)
    return pooled.data, w.data

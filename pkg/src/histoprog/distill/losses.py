"""Distillation objectives: CE + KL + adversarial feature matching, and contrastive (CRD) alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gradcore import MLPSpec, Tensor, concat, cross_entropy, mlp_forward
from ..prognosis.losses import censored_ce_from_logits
from ..prognosis.records import TimeGrid


@dataclass(frozen=True)
class KDConfig:
    alpha1: float = 0.5
    alpha2: float = 0.1
    tau: float = 0.07
    negatives: int | None = None
    crd_weight: float = 0.5
    softening: float = 2.0

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or self.crd_weight < 0:
            raise ValueError("distillation weights must be nonnegative")
        if self.tau <= 0 or self.softening <= 0:
            raise ValueError("temperatures must be positive")
        if self.negatives is not None and self.negatives < 1:
            raise ValueError("need at least one negative per anchor")


@dataclass(frozen=True)
class SurvivalTargets:
    """Censored survival labels on the teacher's interval grid."""

    times: np.ndarray
    events: np.ndarray
    grid: TimeGrid

    def subset(self, idx) -> "SurvivalTargets":
        return SurvivalTargets(self.times[idx], self.events[idx], self.grid)


@dataclass
class KDLoss:
    ce: Tensor
    kl: Tensor
    gan: Tensor
    total: Tensor

    def values(self) -> dict:
        return {k: float(getattr(self, k).data) for k in ("ce", "kl", "gan", "total")}


def disc_spec(feature_dim: int, hidden: int = 32) -> MLPSpec:
    return MLPSpec((feature_dim, hidden, 1), ("relu", "sigmoid"), prefix="kdisc")


def discriminate(disc: dict, feats: Tensor) -> Tensor:
    """Probability that each feature row came from the teacher."""
    spec = disc_spec(disc["kdisc.0.W"].shape[0], disc["kdisc.0.W"].shape[1])
    return mlp_forward(disc, feats, spec).reshape(-1).clip(1e-7, 1.0 - 1e-7)


def supervised_loss(logits: Tensor, labels) -> Tensor:
    if isinstance(labels, SurvivalTargets):
        return censored_ce_from_logits(logits, (labels.times, labels.events), labels.grid)
    return cross_entropy(logits, np.asarray(labels, dtype=int))


def softened_kl(teacher_logits, student_logits: Tensor, temperature: float) -> Tensor:
    """Batch mean of KL(teacher || student) between temperature-softened distributions."""
    t = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits) / temperature
    t = t - t.max(axis=-1, keepdims=True)
    logq_t = t - np.log(np.exp(t).sum(axis=-1, keepdims=True))
    q_t = np.exp(logq_t)
    logp_s = (student_logits * (1.0 / temperature)).log_softmax(axis=-1)
    return ((Tensor(logq_t) - logp_s) * Tensor(q_t)).sum(axis=-1).mean()


def kd_gan_loss(student_out, teacher_out, labels, disc: dict, cfg: KDConfig) -> KDLoss:
    """``ce + alpha1 * kl + alpha2 * gan`` for a batch.

    ``student_out``/``teacher_out`` carry ``logits`` and ``features``. The GAN term is the
    student's (generator's) non-saturating loss against a discriminator that treats teacher
    features as real and student features as fake.
    """
    t_logits = np.asarray(getattr(teacher_out.logits, "data", teacher_out.logits))
    t_feats = np.asarray(getattr(teacher_out.features, "data", teacher_out.features))
    if not (np.all(np.isfinite(t_logits)) and np.all(np.isfinite(t_feats))):
        raise ValueError("teacher outputs contain non-finite values")
    ce = supervised_loss(student_out.logits, labels)
    kl = softened_kl(t_logits, student_out.logits, cfg.softening)
    gan = -discriminate(disc, student_out.features).log().mean()
    total = ce + kl * cfg.alpha1 + gan * cfg.alpha2
    return KDLoss(ce, kl, gan, total)


def discriminator_loss(disc: dict, student_feats, teacher_feats) -> Tensor:
    fake = discriminate(disc, Tensor(np.asarray(getattr(student_feats, "data", student_feats))))
    real = discriminate(disc, Tensor(np.asarray(getattr(teacher_feats, "data", teacher_feats))))
    return -(real.log().mean() + (1.0 - fake).log().mean())


def _unit_rows(x: Tensor) -> Tensor:
    norms = np.sqrt(np.sum(x.data * x.data, axis=-1))
    if np.any(norms == 0):
        raise ValueError("zero-norm feature vector cannot be normalized")
    return x / (x * x).sum(axis=-1, keepdims=True).sqrt()


def crd_loss(student_feat, teacher_feat_anchor, teacher_feat_negatives, tau: float) -> Tensor:
    """InfoNCE with the matched teacher feature as the positive, averaged over the batch.

    Shapes: student and anchor ``(d,)`` or ``(B, d)``; negatives ``(N, d)`` or ``(B, N, d)``.
    All features are L2-normalized first.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    s = student_feat if isinstance(student_feat, Tensor) else Tensor(student_feat)
    a = teacher_feat_anchor if isinstance(teacher_feat_anchor, Tensor) else Tensor(teacher_feat_anchor)
    n = teacher_feat_negatives if isinstance(teacher_feat_negatives, Tensor) else Tensor(teacher_feat_negatives)
    if s.ndim == 1:
        s, a, n = s.reshape(1, -1), a.reshape(1, -1), n.reshape((1,) + n.shape)
    if n.ndim != 3 or n.shape[1] < 1:
        raise ValueError("need at least one negative per anchor")
    s, a, n = _unit_rows(s), _unit_rows(a), _unit_rows(n)
    pos = (s * a).sum(axis=-1, keepdims=True) * (1.0 / tau)                 # (B, 1)
    neg = (n @ s.reshape(s.shape[0], s.shape[1], 1)).reshape(n.shape[0], n.shape[1]) * (1.0 / tau)
    logits = concat([pos, neg], axis=1)
    return -(logits.log_softmax(axis=-1)[:, 0]).mean()


def in_batch_negatives(teacher_feats: np.ndarray, n_neg: int | None = None) -> np.ndarray:
    """For row i, the other rows' teacher features (the first ``n_neg`` of them in cyclic order)."""
    t = np.asarray(teacher_feats, dtype=np.float64)
    b = len(t)
    k = b - 1 if n_neg is None else min(n_neg, b - 1)
    if k < 1:
        raise ValueError("in-batch negatives need a batch of at least two")
    idx = (np.arange(b)[:, None] + np.arange(1, k + 1)[None, :]) % b
    return t[idx]

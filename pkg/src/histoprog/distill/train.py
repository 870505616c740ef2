"""Distillation of a discrete-time prognosis teacher into a TinyViT over patient thumbnails."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..gradcore import OptimState, TrainingDiverged, frozen, init_mlp, step
from ..prognosis.losses import risk_score
from ..prognosis.metrics import bootstrap_ci, concordance_index
from ..prognosis.model import PatientBatch, PrognosisModel
from .losses import (KDConfig, SurvivalTargets, crd_loss, disc_spec, discriminator_loss, in_batch_negatives,
                     kd_gan_loss, supervised_loss)
from .vit import TinyViT, ViTConfig, ViTOutput

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("model", "aggregation_strategy", "endpoint", "c_index", "ci_low", "ci_high")


@dataclass(frozen=True)
class DistillConfig:
    alpha1: float = 0.5
    alpha2: float = 0.1
    tau: float = 0.07
    negatives: int | None = None
    crd_weight: float = 0.5
    softening: float = 2.0
    lr: float = 0.01
    d_lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 60
    batch: int = 32
    clip_norm: float = 1.0
    patience: int = 15
    use_clinical: bool = True
    positional: bool = True
    seed: int = 0

    @property
    def kd(self) -> KDConfig:
        return KDConfig(self.alpha1, self.alpha2, self.tau, self.negatives, self.crd_weight, self.softening)


@dataclass
class DistillData:
    """Per-patient student inputs (thumbnail, clinical), teacher inputs and survival labels."""

    images: np.ndarray
    clinical: np.ndarray
    times: np.ndarray
    events: np.ndarray
    teacher_batch: PatientBatch | None = None

    def __len__(self) -> int:
        return len(self.images)

    @classmethod
    def from_patients(cls, patients) -> "DistillData":
        patients = list(patients)
        return cls(np.stack([p.thumbnail for p in patients]),
                   np.stack([np.asarray(p.clinical, dtype=np.float64) for p in patients]),
                   np.array([p.record.time for p in patients], dtype=np.float64),
                   np.array([p.record.event for p in patients], dtype=bool),
                   PatientBatch.from_patients(patients))


@dataclass
class TeacherOutputs:
    logits: np.ndarray
    features: np.ndarray


@dataclass
class DistillResult:
    student: TinyViT
    disc: dict | None
    history: list = field(default_factory=list)
    trace: list = field(default_factory=list)


def teacher_outputs(teacher: PrognosisModel, data: DistillData) -> TeacherOutputs:
    if teacher.cfg.head != "discrete":
        raise ValueError("distillation needs a discrete-time teacher (interval logits to soften)")
    out, hidden = teacher.forward(data.teacher_batch, return_hidden=True)
    feats = hidden[-2].data if len(hidden) > 1 else hidden[-1].data
    return TeacherOutputs(out.data.copy(), feats.copy())


def student_risk(student: TinyViT, data: DistillData, grid) -> np.ndarray:
    out = student.forward(data.images, data.clinical if student.cfg.clinical_dim else None)
    return risk_score(out.logits.softmax(axis=1).data, grid)


def train_distilled(teacher: PrognosisModel | None, train: DistillData, cfg: DistillConfig = DistillConfig(), *,
                    grid=None, val: DistillData | None = None, student: TinyViT | None = None) -> DistillResult:
    """Fit a TinyViT on ``ce + a1*kl + a2*gan + crd_weight*crd`` against a frozen teacher.

    With ``teacher=None`` the student is trained on the censored CE alone (the plain baseline).
    The discriminator is updated after every student step on detached features.
    """
    if teacher is not None:
        if teacher.cfg.head != "discrete":
            raise ValueError("distillation needs a discrete-time teacher (interval logits to soften)")
        grid = teacher.grid
    if grid is None:
        raise ValueError("a time grid is required when no teacher is given")
    rng = np.random.default_rng(cfg.seed)
    t_out = teacher_outputs(teacher, train) if teacher is not None else None
    if student is None:
        student = TinyViT(ViTConfig(n_out=grid.m, feature_dim=t_out.features.shape[1] if t_out else 32,
                                    clinical_dim=train.clinical.shape[1] if cfg.use_clinical else 0,
                                    positional=cfg.positional, seed=cfg.seed))
    clin = train.clinical if student.cfg.clinical_dim else None
    opt = OptimState(cfg.lr, cfg.momentum)
    disc = d_opt = None
    if t_out is not None:
        disc = init_mlp(disc_spec(student.cfg.feature_dim), np.random.default_rng([cfg.seed, 1]))
        d_opt = OptimState(cfg.d_lr, cfg.momentum)
    targets = SurvivalTargets(train.times, train.events, grid)
    kd = cfg.kd
    result = DistillResult(student, disc)
    best, best_params, best_epoch = -np.inf, None, 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        sums = {"ce": 0.0, "kl": 0.0, "gan": 0.0, "crd": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, len(order), cfg.batch):
            bi = order[start:start + cfg.batch]
            out = student.forward(train.images[bi], None if clin is None else clin[bi], params=student.params)
            if t_out is None:
                loss = supervised_loss(out.logits, targets.subset(bi))
                parts = {"ce": float(loss.data), "total": float(loss.data)}
            else:
                tb = ViTOutput(t_out.logits[bi], t_out.features[bi], [])
                kdl = kd_gan_loss(out, tb, targets.subset(bi), frozen(disc), kd)
                loss = kdl.total
                parts = kdl.values()
                if len(bi) > 1:
                    crd = crd_loss(out.features, t_out.features[bi], in_batch_negatives(t_out.features[bi],
                                                                                        kd.negatives), kd.tau)
                    loss = loss + crd * kd.crd_weight
                    parts["crd"] = float(crd.data)
                parts["total"] = float(loss.data)
            if not np.isfinite(parts["total"]) or parts["total"] > 1e4:
                raise TrainingDiverged(f"distillation diverged at epoch {epoch}: loss {parts['total']}",
                                       student.to_checkpoint())
            loss.backward()
            step(student.params, opt, max_norm=cfg.clip_norm)
            result.trace.append(parts["total"])
            if disc is not None:
                d_loss = discriminator_loss(disc, out.features.data, t_out.features[bi])
                d_loss.backward()
                step(disc, d_opt, max_norm=cfg.clip_norm)
            for k, v in parts.items():
                sums[k] += v
            n_batches += 1
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        if val is not None:
            row["val_c_index"] = concordance_index(student_risk(student, val, grid), (val.times, val.events))
            if row["val_c_index"] > best:
                best, best_epoch = row["val_c_index"], epoch
                best_params = {k: v.data.copy() for k, v in student.params.items()}
        result.history.append(row)
        log.info("distill epoch %d total %.4f ce %.4f kl %.4f gan %.4f crd %.4f val %s", epoch, row["total"],
                 row["ce"], row["kl"], row["gan"], row["crd"], row.get("val_c_index"))
        if val is not None and epoch - best_epoch >= cfg.patience:
            break
    if best_params is not None:
        for k, v in best_params.items():
            student.params[k].data = v
    return result


def _ci_row(model: str, strategy: str, endpoint: str, risks: np.ndarray, data: DistillData, seed: int,
            n_resamples: int) -> dict:
    te = (data.times, data.events)
    c = concordance_index(risks, te)
    lo, hi = bootstrap_ci(lambda idx: concordance_index(risks[idx], (data.times[idx], data.events[idx])),
                          len(risks), seed, n_resamples)
    return {"model": model, "aggregation_strategy": strategy, "endpoint": endpoint,
            "c_index": c, "ci_low": lo, "ci_high": hi}


def comparison_report(teacher: PrognosisModel, student: TinyViT, test: DistillData, endpoint: str = "OS",
                      seed: int = 0, n_resamples: int = 200, extra: dict | None = None) -> list:
    """Teacher and student c-index with bootstrap intervals on held-out patients.

    ``extra`` maps further row names to ``TinyViT`` students (e.g. a plain CE baseline).
    """
    strategy = teacher.cfg.strategy
    rows = [_ci_row("teacher", strategy, endpoint, teacher.predict_risk(test.teacher_batch), test, seed, n_resamples),
            _ci_row("tinyvit_kd", strategy, endpoint, student_risk(student, test, teacher.grid), test, seed,
                    n_resamples)]
    for name, model in (extra or {}).items():
        rows.append(_ci_row(name, strategy, endpoint, student_risk(model, test, teacher.grid), test, seed,
                            n_resamples))
    return rows


def write_report(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r["model"], r["aggregation_strategy"], r["endpoint"]]
                       + [f"{r[k]:.6f}" for k in ("c_index", "ci_low", "ci_high")])
    return path

"""Prognosis network: attention pooling, lesion aggregation, clinical fusion and a survival/TRG head."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ..gradcore import (MLPSpec, ModelCheckpoint, OptimState, Tensor, TrainingDiverged, concat, cross_entropy,
                        frozen, init_mlp, mlp_forward, step)
from .aggregation import STRATEGIES, attention_pool_tensor, init_attention
from .losses import censored_ce_from_logits, cox_pl_loss, risk_score
from .metrics import concordance_index
from .records import TimeGrid, as_arrays

log = logging.getLogger(__name__)

HEADS = ("cox", "discrete", "trg")


@dataclass(frozen=True)
class PrognosisConfig:
    head: str = "cox"
    strategy: str = "weighted"
    use_attention: bool = True
    attention_hidden: int = 16
    hidden: tuple = (32,)
    lr: float = 1e-3
    momentum: float = 0.9
    max_epochs: int = 300
    patience: int = 20
    grid_m: int = 4
    trg_grouping: str = "1-2 vs 3-5"
    seed: int = 0

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown aggregation strategy {self.strategy!r}")


@dataclass
class PatientBatch:
    """Lesion patch features of many patients, flattened along the lesion axis."""

    patches: np.ndarray      # (L, P, d)
    owner: np.ndarray        # (L,) patient index of each lesion
    volumes: np.ndarray      # (L,)
    clinical: np.ndarray     # (N, c)

    @property
    def n_patients(self) -> int:
        return len(self.clinical)

    @property
    def feature_dim(self) -> int:
        return self.patches.shape[-1]

    @classmethod
    def from_patients(cls, patients: Sequence) -> "PatientBatch":
        rows, owner, vols = [], [], []
        for i, p in enumerate(patients):
            for les in p.lesions:
                pf = les.patch_features if les.patch_features is not None else les.vector[None, :]
                rows.append(np.asarray(pf, dtype=np.float64))
                owner.append(i)
                vols.append(les.volume)
        if len({r.shape for r in rows}) != 1:
            raise ValueError("every lesion must carry the same number of patch features")
        clinical = np.stack([np.asarray(p.clinical, dtype=np.float64) for p in patients])
        return cls(np.stack(rows), np.array(owner), np.array(vols, dtype=np.float64), clinical)

    @classmethod
    def from_vectors(cls, features, clinical=None) -> "PatientBatch":
        """One single-patch lesion per row of ``features``."""
        f = np.asarray(features, dtype=np.float64)
        n = len(f)
        clin = np.zeros((n, 0)) if clinical is None else np.asarray(clinical, dtype=np.float64)
        return cls(f[:, None, :], np.arange(n), np.ones(n), clin)

    def subset(self, idx) -> "PatientBatch":
        idx = np.asarray(idx)
        remap = -np.ones(self.n_patients, dtype=int)
        remap[idx] = np.arange(len(idx))
        keep = np.isin(self.owner, idx)
        lesion_rows = np.flatnonzero(keep)
        # keep lesions grouped in the order of ``idx``
        order = np.argsort(remap[self.owner[lesion_rows]], kind="stable")
        rows = lesion_rows[order]
        return PatientBatch(self.patches[rows], remap[self.owner[rows]], self.volumes[rows], self.clinical[idx])

    def aggregation_operands(self, strategy: str) -> np.ndarray:
        n, L = self.n_patients, len(self.owner)
        if strategy == "max":
            k = np.bincount(self.owner, minlength=n).max()
            idx = np.full((n, k), L)
            fill = np.zeros(n, dtype=int)
            for l, o in enumerate(self.owner):
                idx[o, fill[o]] = l
                fill[o] += 1
            return idx
        A = np.zeros((n, L))
        w = np.ones(L) if strategy == "mean" else self.volumes
        A[self.owner, np.arange(L)] = w
        return A / A.sum(axis=1, keepdims=True)


@dataclass
class PrognosisModel:
    cfg: PrognosisConfig
    params: dict
    grid: TimeGrid | None = None
    n_out: int = 1
    history: list = field(default_factory=list)

    # ------------------------------------------------------------------ build
    @classmethod
    def init(cls, cfg: PrognosisConfig, feature_dim: int, clinical_dim: int, n_out: int,
             grid: TimeGrid | None = None) -> "PrognosisModel":
        rng = np.random.default_rng(cfg.seed)
        params = {}
        if cfg.use_attention:
            init_attention(params, feature_dim, cfg.attention_hidden, rng)
        params.update(init_mlp(cls._spec(cfg, feature_dim + clinical_dim, n_out), rng))
        return cls(cfg, params, grid, n_out)

    @staticmethod
    def _spec(cfg: PrognosisConfig, n_in: int, n_out: int) -> MLPSpec:
        sizes = (n_in,) + tuple(cfg.hidden) + (n_out,)
        acts = ("relu",) * len(cfg.hidden) + ("identity",)
        return MLPSpec(sizes, acts, prefix="head")

    @property
    def spec(self) -> MLPSpec:
        n_in = self.params["head.0.W"].shape[0]
        return self._spec(self.cfg, n_in, self.n_out)

    # ---------------------------------------------------------------- forward
    def forward(self, batch: PatientBatch, params=None, return_hidden: bool = False):
        """Raw head outputs (risk for cox, logits otherwise) for every patient."""
        p = params if params is not None else frozen(self.params)
        x = Tensor(batch.patches)
        if self.cfg.use_attention:
            lesion, _ = attention_pool_tensor(x, p)
        else:
            lesion = x.mean(axis=1)
        ops = batch.aggregation_operands(self.cfg.strategy)
        if self.cfg.strategy == "max":
            pad = Tensor(np.full((1, batch.feature_dim), -1e30))
            agg = concat([lesion, pad], axis=0)[ops].max(axis=1)
        else:
            agg = Tensor(ops) @ lesion
        h = concat([agg, Tensor(batch.clinical)], axis=1) if batch.clinical.shape[1] else agg
        out, hidden = mlp_forward(p, h, self.spec, return_hidden=True)
        if self.cfg.head == "cox":
            out = out.reshape(-1)
        return (out, hidden) if return_hidden else out

    def features(self, batch: PatientBatch) -> np.ndarray:
        """Penultimate activations (the last hidden layer) per patient."""
        _, hidden = self.forward(batch, return_hidden=True)
        return hidden[-2].data if len(hidden) > 1 else hidden[-1].data

    def predict_probs(self, batch: PatientBatch) -> np.ndarray:
        if self.cfg.head == "cox":
            raise ValueError("a cox head outputs scalar risks, not probabilities")
        return self.forward(batch).softmax(axis=1).data

    def predict_risk(self, batch: PatientBatch) -> np.ndarray:
        if self.cfg.head == "cox":
            return self.forward(batch).data.copy()
        if self.cfg.head == "discrete":
            return risk_score(self.predict_probs(batch), self.grid)
        raise ValueError("a trg head does not produce survival risks")

    def to_checkpoint(self) -> ModelCheckpoint:
        meta = {"config": asdict(self.cfg), "n_out": self.n_out,
                "grid": list(self.grid.boundaries) if self.grid is not None else None}
        return ModelCheckpoint.capture(self.params, self.cfg.seed, meta=meta)

    @classmethod
    def from_checkpoint(cls, ck: ModelCheckpoint) -> "PrognosisModel":
        c = dict(ck.meta["config"])
        c["hidden"] = tuple(c["hidden"])
        grid = TimeGrid(tuple(ck.meta["grid"])) if ck.meta.get("grid") else None
        return cls(PrognosisConfig(**c), ck.tensors(requires_grad=True), grid, int(ck.meta["n_out"]))


def _objective(model: PrognosisModel, out: Tensor, records, labels) -> Tensor:
    head = model.cfg.head
    if head == "cox":
        return cox_pl_loss(out, records, reduction="sum")
    if head == "discrete":
        return censored_ce_from_logits(out, records, model.grid, reduction="sum")
    return cross_entropy(out, labels) * len(labels)


def _score(model: PrognosisModel, batch: PatientBatch, records, labels) -> float:
    if model.cfg.head == "trg":
        return float(np.mean(np.argmax(model.predict_probs(batch), axis=1) == labels))
    return concordance_index(model.predict_risk(batch), records)


def train_prognosis(train: PatientBatch, train_records, cfg: PrognosisConfig, *, val: PatientBatch | None = None,
                    val_records=None, train_labels=None, val_labels=None, n_out: int | None = None) -> PrognosisModel:
    """Fit by full-batch SGD with momentum on the summed objective; early-stop on validation.

    ``train_records`` is a ``(times, events)`` pair or list of records (cox/discrete heads).
    TRG heads take integer ``train_labels`` and report accuracy instead of c-index.
    """
    if cfg.head == "trg":
        if train_labels is None:
            raise ValueError("trg head needs class labels")
        train_labels = np.asarray(train_labels, dtype=int)
        n_out = n_out or int(train_labels.max()) + 1
        grid = None
    else:
        times, events = _as_te(train_records)
        if not events.any():
            raise ValueError("degenerate training set: every patient is censored")
        train_records = (times, events)
        if val_records is not None:
            val_records = _as_te(val_records)
        if cfg.head == "discrete":
            grid = TimeGrid.from_event_quantiles(times, events, cfg.grid_m)
            n_out = grid.m
        else:
            grid, n_out = None, 1
    model = PrognosisModel.init(cfg, train.feature_dim, train.clinical.shape[1], n_out, grid)
    opt = OptimState(cfg.lr, cfg.momentum)
    best_score, best_params, best_epoch = -np.inf, None, 0
    for epoch in range(cfg.max_epochs):
        out = model.forward(train, params=model.params)
        loss = _objective(model, out, train_records, train_labels)
        if not np.isfinite(loss.data) or loss.data > 1e6:
            ck = ModelCheckpoint.capture(best_params or model.params, cfg.seed, meta={"epoch": best_epoch})
            raise TrainingDiverged(f"prognosis training diverged at epoch {epoch}", ck)
        loss.backward()
        step(model.params, opt)
        tr = _score(model, train, train_records, train_labels)
        row = {"epoch": epoch, "loss": float(loss.data), "train": tr}
        if val is not None:
            va = _score(model, val, val_records, val_labels)
            row["val"] = va
            if va > best_score:
                best_score, best_epoch = va, epoch
                best_params = {k: v.data.copy() for k, v in model.params.items()}
            elif epoch - best_epoch >= cfg.patience:
                model.history.append(row)
                break
        model.history.append(row)
        log.info("prognosis %s epoch %d loss %.4f train %.4f val %s", cfg.head, epoch, row["loss"], tr, row.get("val"))
    if best_params is not None:
        for k, v in best_params.items():
            model.params[k].data = v
    return model


def _as_te(records):
    if isinstance(records, tuple) and len(records) == 2:
        return np.asarray(records[0], dtype=np.float64), np.asarray(records[1], dtype=bool)
    return as_arrays(records)


def with_overrides(cfg: PrognosisConfig, **kw) -> PrognosisConfig:
    return replace(cfg, **kw)

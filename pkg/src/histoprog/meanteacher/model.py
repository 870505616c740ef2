"""Mean Teacher patch classifier: student/teacher training, pseudo-labels and feature extraction."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..gradcore import (EmaState, MLPSpec, ModelCheckpoint, OptimState, Tensor, TrainingDiverged, ema_update,
                        frozen, init_mlp, mlp_forward, step)
from ..synthdata.slides import N_CLASSES
from .patches import PatchSample, random_augment, stack_patches

log = logging.getLogger(__name__)

CLASSIFIER = MLPSpec((3072, 128, 64, N_CLASSES), ("relu", "relu", "identity"), prefix="clf")
LAYERS = ("hidden1", "hidden2", "logits")
DEFAULT_LAYER = "hidden2"


@dataclass(frozen=True)
class MTConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch: int = 32
    ema_decay: float = 0.99
    noise_std: float = 0.05
    dropout: float = 0.1
    consistency: float = 1.0
    ramp_fraction: float = 0.2
    epochs: int = 30
    augment: bool = True
    max_shift: int = 0
    oversample: bool = True
    pseudo_rounds: int = 0
    pseudo_k: int = 4000
    pseudo_p: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1], got {self.ema_decay}")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be positive")
        if not 1 <= self.pseudo_p <= N_CLASSES or self.pseudo_k < 1:
            raise ValueError(f"need pseudo_k >= 1 and 1 <= pseudo_p <= {N_CLASSES}")

    def weight(self, epoch: int) -> float:
        """Consistency weight: linear ramp from 0 to ``consistency`` over the first ``ramp_fraction`` of epochs."""
        ramp = self.ramp_fraction * self.epochs
        if ramp <= 0:
            return self.consistency
        return self.consistency * min(1.0, epoch / ramp)


@dataclass
class MTModel:
    """Student parameters, their EMA teacher and the run history."""

    cfg: MTConfig
    student: dict
    teacher: EmaState
    history: list = field(default_factory=list)

    def predict_proba(self, pixels, which: str = "teacher") -> np.ndarray:
        """Noise-free class probabilities for an ``(N, 32, 32, 3)`` batch."""
        return _forward(self._params(which), _flatten(pixels))[0].softmax(axis=-1).data

    def predict(self, pixels, which: str = "teacher") -> np.ndarray:
        return self.predict_proba(pixels, which).argmax(axis=1)

    def accuracy(self, pixels, labels, which: str = "teacher") -> float:
        labels = np.asarray(labels)
        return float(np.mean(self.predict(pixels, which) == labels)) if len(labels) else float("nan")

    def features(self, pixels, layer: str = DEFAULT_LAYER, which: str = "teacher") -> np.ndarray:
        if layer not in LAYERS:
            raise ValueError(f"unknown layer {layer!r}; available layers: {', '.join(LAYERS)}")
        _, hidden = _forward(self._params(which), _flatten(pixels))
        return hidden[LAYERS.index(layer)].data

    def _params(self, which: str) -> dict:
        if which == "teacher":
            return frozen(self.teacher.params)
        if which == "student":
            return frozen(self.student)
        raise ValueError(f"which must be 'teacher' or 'student', got {which!r}")

    def to_checkpoint(self, optim: OptimState | None = None) -> ModelCheckpoint:
        return ModelCheckpoint.capture(self.student, self.cfg.seed, optim, self.teacher,
                                       meta={"kind": "meanteacher", "config": asdict(self.cfg)})

    @classmethod
    def from_checkpoint(cls, ck: ModelCheckpoint) -> "MTModel":
        if ck.meta.get("kind") != "meanteacher" or ck.ema is None:
            raise ValueError("checkpoint does not hold a Mean Teacher classifier")
        return cls(MTConfig(**ck.meta["config"]), ck.tensors(requires_grad=True), ck.ema)


def extract_features(model: MTModel, patch: PatchSample | np.ndarray, layer: str = DEFAULT_LAYER) -> np.ndarray:
    """Teacher activations at ``layer`` for one patch (noise off)."""
    pixels = patch.pixels if isinstance(patch, PatchSample) else np.asarray(patch)
    return model.features(pixels[None], layer)[0]


def _flatten(pixels) -> np.ndarray:
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    # centered so the first layer starts from a symmetric input range
    return x.reshape(len(x), -1) - 0.5


def _forward(params, x, *, rng: np.random.Generator | None = None, cfg: MTConfig | None = None):
    """Logits and hidden activations; with ``rng`` the noise eta (gaussian input noise, dropout) is drawn."""
    if rng is not None:
        x = x + cfg.noise_std * rng.normal(size=x.shape)
    return mlp_forward(params, Tensor(x), CLASSIFIER, dropout_rate=cfg.dropout if rng is not None else 0.0,
                       rng=rng, return_hidden=True)


def consistency_loss(p_student, p_teacher) -> Tensor:
    """Batch mean of the squared distance between two probability vectors."""
    a = p_student if isinstance(p_student, Tensor) else Tensor(p_student)
    b = p_teacher if isinstance(p_teacher, Tensor) else Tensor(p_teacher)
    if a.shape != b.shape:
        raise ValueError(f"prediction shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    if d.ndim == 1:
        return (d * d).sum()
    return (d * d).sum(axis=-1).mean()


@dataclass(frozen=True)
class PseudoLabels:
    """Selected patch indices with their (top-P, renormalized) probability targets."""

    indices: np.ndarray
    classes: np.ndarray
    targets: np.ndarray


def pseudo_label_select(preds, K: int, P: int) -> PseudoLabels:
    """Keep, for every class, the K patches assigned to it with the highest probability for it.

    Order is by class, then by decreasing confidence, ties by ascending patch index.
    """
    preds = np.asarray(preds, dtype=np.float64)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if not 1 <= P <= preds.shape[1]:
        raise ValueError(f"P must lie in [1, {preds.shape[1]}], got {P}")
    assigned = preds.argmax(axis=1)
    idx, cls = [], []
    for c in range(preds.shape[1]):
        cand = np.flatnonzero(assigned == c)
        order = np.lexsort((cand, -preds[cand, c]))
        chosen = cand[order][:K]
        idx.extend(chosen.tolist())
        cls.extend([c] * len(chosen))
    idx = np.array(idx, dtype=int)
    targets = preds[idx].copy()
    if P < preds.shape[1] and len(idx):
        # stable sort so equal probabilities keep the lower class index
        drop = np.argsort(-targets, axis=1, kind="stable")[:, P:]
        np.put_along_axis(targets, drop, 0.0, axis=1)
        targets /= targets.sum(axis=1, keepdims=True)
    return PseudoLabels(idx, np.array(cls, dtype=int), targets)


class _Stream:
    """Endless shuffled index stream; with ``classes`` each pass is class-balanced by oversampling."""

    def __init__(self, n: int, rng: np.random.Generator, classes: np.ndarray | None = None):
        self.n, self.rng, self.classes = n, rng, classes
        self.order, self.pos = self._epoch(), 0

    def _epoch(self) -> np.ndarray:
        if self.classes is None:
            return self.rng.permutation(self.n)
        present = np.unique(self.classes)
        top = max(int(np.sum(self.classes == c)) for c in present)
        parts = []
        for c in present:
            members = np.flatnonzero(self.classes == c)
            parts.append(self.rng.permutation(np.tile(members, -(-top // len(members))))[:top])
        return self.rng.permutation(np.concatenate(parts))

    def take(self, k: int) -> np.ndarray:
        out = []
        while len(out) < k:
            if self.pos >= len(self.order):
                self.order, self.pos = self._epoch(), 0
            n = min(k - len(out), len(self.order) - self.pos)
            out.extend(self.order[self.pos:self.pos + n].tolist())
            self.pos += n
        return np.array(out, dtype=int)


def _as_arrays(data) -> tuple:
    if data is None:
        return np.zeros((0, 32, 32, 3)), np.zeros(0, dtype=int)
    if isinstance(data, tuple):
        x, y = data
        return np.asarray(x, dtype=np.float64), np.asarray(y)
    x, y, _ = stack_patches(data)
    return x, y


def _fit(x_lab, targets, x_unl, cfg: MTConfig, val, rng: np.random.Generator, round_no: int) -> MTModel:
    student = init_mlp(CLASSIFIER, rng)
    teacher = EmaState.from_params(student, cfg.ema_decay)
    optim = OptimState(cfg.lr, cfg.momentum)
    model = MTModel(cfg, student, teacher)
    hard = targets.argmax(axis=1)
    lab = _Stream(len(x_lab), rng, hard if cfg.oversample else None)
    unl = _Stream(len(x_unl), rng) if len(x_unl) else None
    # an epoch covers the larger of the (balanced) labeled pass and the unlabeled pool
    per_epoch = -(-max(len(lab.order), len(x_unl)) // cfg.batch)
    for epoch in range(cfg.epochs):
        w = cfg.weight(epoch)
        losses = []
        for _ in range(per_epoch):
            bi = lab.take(cfg.batch)
            xb = x_lab[bi]
            if unl is not None and w > 0:
                xb = np.concatenate([xb, x_unl[unl.take(cfg.batch)]])
            xs = random_augment(xb, rng, cfg.max_shift) if cfg.augment else xb
            logits_s, _ = _forward(student, _flatten(xs), rng=rng, cfg=cfg)
            logp = logits_s[:len(bi)].log_softmax(axis=-1)
            loss = -(logp * Tensor(targets[bi])).sum(axis=-1).mean()
            if w > 0:
                xt = random_augment(xb, rng, cfg.max_shift) if cfg.augment else xb
                logits_t, _ = _forward(frozen(teacher.params), _flatten(xt), rng=rng, cfg=cfg)
                loss = loss + w * consistency_loss(logits_s.softmax(axis=-1), logits_t.softmax(axis=-1).data)
            value = float(loss.data)
            if not np.isfinite(value) or value > 1e3:
                raise TrainingDiverged(f"mean teacher loss diverged at epoch {epoch}: {value}",
                                       model.to_checkpoint(optim))
            loss.backward()
            step(student, optim)
            teacher = ema_update(teacher, student)
            model.teacher = teacher
            losses.append(value)
        xv, yv = val if val is not None else (x_lab, hard)
        row = {"round": round_no, "epoch": epoch, "loss": float(np.mean(losses)), "weight": w,
               "student_acc": model.accuracy(xv, yv, "student"), "teacher_acc": model.accuracy(xv, yv, "teacher")}
        model.history.append(row)
        log.info("mean teacher round %d epoch %d loss %.4f student acc %.4f teacher acc %.4f",
                 round_no, epoch, row["loss"], row["student_acc"], row["teacher_acc"])
    return model


def train_mean_teacher(labeled, unlabeled=None, cfg: MTConfig = MTConfig(), *, val=None) -> MTModel:
    """Train a student on CE(labeled) + w(t)*J(labeled + unlabeled) with an EMA teacher.

    ``labeled`` and ``unlabeled`` are lists of :class:`PatchSample` or ``(pixels, labels)`` arrays;
    ``val`` is an optional ``(pixels, labels)`` pair used for the per-epoch accuracy log.
    With ``cfg.pseudo_rounds`` > 0 the teacher then labels the unlabeled pool, the top-K
    per class are added as soft targets and a fresh student is trained again.
    """
    x_lab, y_lab = _as_arrays(labeled)
    x_unl, _ = _as_arrays(unlabeled)
    keep = y_lab >= 0
    x_lab, y_lab = x_lab[keep], y_lab[keep].astype(int)
    if len(x_lab) == 0:
        raise ValueError("train_mean_teacher needs at least one labeled patch")
    if val is not None:
        val = (np.asarray(val[0], dtype=np.float64), np.asarray(val[1], dtype=int))
    rng = np.random.default_rng(cfg.seed)
    targets = np.eye(N_CLASSES)[y_lab]
    model = _fit(x_lab, targets, x_unl, cfg, val, rng, 0)
    history = list(model.history)
    for r in range(cfg.pseudo_rounds):
        if len(x_unl) == 0:
            break
        sel = pseudo_label_select(model.predict_proba(x_unl), cfg.pseudo_k, cfg.pseudo_p)
        xa = np.concatenate([x_lab, x_unl[sel.indices]])
        ta = np.concatenate([targets, sel.targets])
        model = _fit(xa, ta, x_unl, cfg, val, rng, r + 1)
        history += model.history
    model.history = history
    return model

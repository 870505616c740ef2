"""Synthetic patient cohorts with proportional-hazards survival and known risks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..prognosis.records import LesionFeature, SurvivalRecord
from .slides import CANCER, CLASSES, N_CLASSES

# one pixel per tissue class on classification maps and thumbnails
MAP_PALETTE = np.array([
    [0.0, 0.6, 0.0],   # normal: green
    [1.0, 1.0, 0.0],   # fibrosis: yellow
    [1.0, 0.0, 0.0],   # cancer: red
    [0.0, 0.0, 0.0],   # necrosis: black
    [1.0, 1.0, 1.0],   # background: white
])

CLINICAL = ("age", "lesion_count")

STRONG_BETA = (-2.0, -4.0, 6.0, 2.0, 0.0, 0.8, 0.6)


@dataclass(frozen=True)
class CohortSpec:
    seed: int
    n_patients: int = 500
    beta: tuple = STRONG_BETA
    baseline_hazard: float = 0.03
    censoring_rate: float = 0.3
    endpoint: str = "OS"
    feature_dim: int = 32
    patches_per_lesion: int = 64
    feature_noise: float = 0.35
    responder_fraction: float = 0.15
    embedding_seed: int = 20240611

    def __post_init__(self):
        if len(self.beta) != N_CLASSES + len(CLINICAL):
            raise ValueError(f"beta needs {N_CLASSES + len(CLINICAL)} coefficients (composition + clinical)")


@dataclass
class Patient:
    patient_id: str
    lesions: list
    clinical: np.ndarray
    record: SurvivalRecord
    trg: int
    composition: np.ndarray
    oracle_risk: float
    thumbnail: np.ndarray


@dataclass
class Cohort:
    spec: CohortSpec
    patients: list = field(default_factory=list)
    censor_scale: float = np.inf

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def records(self) -> list:
        return [p.record for p in self.patients]

    @property
    def times(self) -> np.ndarray:
        return np.array([p.record.time for p in self.patients])

    @property
    def events(self) -> np.ndarray:
        return np.array([p.record.event for p in self.patients], dtype=bool)

    @property
    def oracle_risks(self) -> np.ndarray:
        return np.array([p.oracle_risk for p in self.patients])

    @property
    def clinical(self) -> np.ndarray:
        return np.stack([p.clinical for p in self.patients])

    @property
    def trg(self) -> np.ndarray:
        return np.array([p.trg for p in self.patients])

    @property
    def compositions(self) -> np.ndarray:
        return np.stack([p.composition for p in self.patients])

    @property
    def thumbnails(self) -> np.ndarray:
        return np.stack([p.thumbnail for p in self.patients])

    def subset(self, idx) -> "Cohort":
        return Cohort(self.spec, [self.patients[i] for i in idx], self.censor_scale)


def class_embedding(spec: CohortSpec) -> np.ndarray:
    """Fixed per-class feature prototypes, shared by every cohort with the same embedding seed."""
    rng = np.random.default_rng(spec.embedding_seed)
    return rng.normal(size=(N_CLASSES, spec.feature_dim))


def trg_from_cancer_fraction(frac: float) -> int:
    if frac <= 0.0:
        return 1
    return 2 + int(np.searchsorted([0.1, 0.25, 0.4], frac, side="right"))


def render_thumbnail(rng: np.random.Generator, composition: np.ndarray, size: int = 32,
                     noise: float = 0.05) -> np.ndarray:
    """Classification-map style image: each pixel a tissue class drawn from ``composition``."""
    cls = rng.choice(N_CLASSES, size=(size, size), p=composition / composition.sum())
    img = MAP_PALETTE[cls] + noise * rng.normal(size=(size, size, 3))
    return np.clip(img, 0.0, 1.0)


def _censor_times(u: np.ndarray, t: np.ndarray, target: float) -> tuple:
    """Scale of uniform censoring ``C = u * scale`` whose realized rate is closest to ``target``."""
    if target <= 0.0:
        return np.full_like(t, np.inf), np.inf
    # every candidate scale where some subject flips status
    cands = np.sort(t / u)
    rates = 1.0 - (np.arange(len(cands)) + 1) / len(cands)   # censored share just above each candidate
    k = int(np.argmin(np.abs(rates - target)))
    scale = cands[k] * (1.0 + 1e-9)
    return u * scale, scale


def gen_cohort(spec: CohortSpec) -> Cohort:
    """Draw a cohort; survival times follow ``T ~ Exp(h0 * exp(beta . x))`` with uniform censoring."""
    if not 0.0 <= spec.censoring_rate < 0.95:
        raise ValueError(f"infeasible censoring target {spec.censoring_rate}: must lie in [0, 0.95)")
    rng = np.random.default_rng(spec.seed)
    emb = class_embedding(spec)
    beta = np.asarray(spec.beta, dtype=np.float64)
    n = spec.n_patients
    base_alpha = np.array([1.2, 1.2, 1.2, 0.6, 0.5])

    lesions_all, comps, n_lesions = [], [], []
    for _ in range(n):
        k = 1 + rng.binomial(2, 0.4)
        base = rng.dirichlet(base_alpha)
        responder = rng.random() < spec.responder_fraction
        lesions = []
        for _ in range(k):
            comp = rng.dirichlet(30.0 * base + 0.05)
            if responder:
                comp[CANCER] = 0.0
                comp /= comp.sum()
            vol = float(rng.lognormal(0.0, 0.6))
            classes = rng.choice(N_CLASSES, size=spec.patches_per_lesion, p=comp)
            patches = emb[classes] + spec.feature_noise * rng.normal(size=(spec.patches_per_lesion, spec.feature_dim))
            lesions.append((LesionFeature(patches.mean(axis=0), vol, patches), comp))
        vols = np.array([lf.volume for lf, _ in lesions])
        comp_patient = (vols[:, None] * np.stack([c for _, c in lesions])).sum(0) / vols.sum()
        lesions_all.append([lf for lf, _ in lesions])
        comps.append(comp_patient)
        n_lesions.append(k)

    comps = np.stack(comps)
    age = rng.normal(size=n)
    count = np.asarray(n_lesions, dtype=np.float64)
    count = (count - count.mean()) / (count.std() + 1e-12)
    clinical = np.stack([age, count], axis=1)
    x = np.concatenate([comps, clinical], axis=1)
    risk = x @ beta
    risk = risk - risk.mean()
    t_event = -np.log(rng.random(n)) / (spec.baseline_hazard * np.exp(risk))
    u = rng.random(n)
    c_times, scale = _censor_times(u, t_event, spec.censoring_rate)
    event = t_event <= c_times
    time = np.where(event, t_event, c_times)
    achieved = 1.0 - event.mean()
    if abs(achieved - spec.censoring_rate) > 0.05:
        raise ValueError(f"infeasible censoring target {spec.censoring_rate}: best achievable {achieved:.3f}")

    patients = []
    for i in range(n):
        pid = f"P{i:04d}"
        patients.append(Patient(
            patient_id=pid,
            lesions=lesions_all[i],
            clinical=clinical[i],
            record=SurvivalRecord(pid, float(time[i]), bool(event[i]), spec.endpoint),
            trg=trg_from_cancer_fraction(float(comps[i, CANCER])),
            composition=comps[i],
            oracle_risk=float(risk[i]),
            thumbnail=render_thumbnail(rng, comps[i]),
        ))
    return Cohort(spec, patients, float(scale))


def split_indices(n: int, seed: int, fractions=(0.7, 0.15, 0.15)) -> tuple:
    """Seeded train/val/test partition of ``range(n)``."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:])


__all__ = ["CLASSES", "CLINICAL", "MAP_PALETTE", "STRONG_BETA", "Cohort", "CohortSpec", "Patient",
           "class_embedding", "gen_cohort", "render_thumbnail", "split_indices", "trg_from_cancer_fraction"]

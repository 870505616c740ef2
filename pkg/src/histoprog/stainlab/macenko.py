"""Macenko stain separation in optical-density space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OD_FLOOR = 1e-6
TISSUE_OD = 0.15
MIN_TISSUE_PIXELS = 100


@dataclass(frozen=True)
class StainBasis:
    """Two unit OD vectors (rows: hematoxylin-like first) and the 99th-percentile concentrations."""

    vectors: np.ndarray
    max_conc: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.shape != (2, 3):
            raise ValueError("a stain basis holds two 3-vectors")
        if np.any(np.abs(np.linalg.norm(v, axis=1) - 1) > 1e-6):
            raise ValueError("stain vectors must be unit norm")
        if np.any(v < -1e-12):
            raise ValueError("stain vectors must be nonnegative")
        if angle_deg(v[0], v[1]) <= 1.0:
            raise ValueError("stain vectors are not separated by more than 1 degree")

    def to_dict(self) -> dict:
        return {"vectors": np.asarray(self.vectors).tolist(), "max_conc": np.asarray(self.max_conc).tolist()}

    @classmethod
    def from_dict(cls, d) -> "StainBasis":
        return cls(np.array(d["vectors"], dtype=np.float64), np.array(d["max_conc"], dtype=np.float64))


def angle_deg(u, v) -> float:
    c = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def optical_density(img) -> np.ndarray:
    return -np.log(np.maximum(np.asarray(img, dtype=np.float64), OD_FLOOR))


def _concentrations(od_flat, vectors) -> np.ndarray:
    c, *_ = np.linalg.lstsq(np.asarray(vectors).T, od_flat.T, rcond=None)
    return c.T


def estimate_stain_basis(img, alpha: float = 1.0) -> StainBasis:
    """Project tissue OD onto its top-2 principal plane and take robust extreme angles."""
    od = optical_density(img).reshape(-1, 3)
    tissue = od[np.all(od >= TISSUE_OD, axis=1)]
    if len(tissue) < MIN_TISSUE_PIXELS:
        raise ValueError("background-only image")
    _, vecs = np.linalg.eigh(np.cov(tissue.T))
    plane = vecs[:, [2, 1]]
    # orient so the projections are positive along the dominant axis
    if plane[:, 0].sum() < 0:
        plane[:, 0] *= -1
    if plane[:, 1].sum() < 0:
        plane[:, 1] *= -1
    proj = tissue @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [alpha, 100 - alpha])
    v1 = plane @ np.array([np.cos(lo), np.sin(lo)])
    v2 = plane @ np.array([np.cos(hi), np.sin(hi)])
    v1 = np.abs(v1) / np.linalg.norm(v1)
    v2 = np.abs(v2) / np.linalg.norm(v2)
    # hematoxylin absorbs red more strongly than eosin does
    vectors = np.stack([v1, v2]) if v1[0] >= v2[0] else np.stack([v2, v1])
    conc = _concentrations(od.reshape(-1, 3), vectors)
    tissue_conc = conc[np.all(od >= TISSUE_OD, axis=1)]
    max_conc = np.percentile(tissue_conc, 99, axis=0)
    return StainBasis(vectors, max_conc)


def macenko_normalize(src, ref: StainBasis) -> tuple:
    """Re-render ``src`` with the reference stains; returns ``(image, source basis)``."""
    img = np.asarray(src, dtype=np.float64)
    basis = estimate_stain_basis(img)
    od = optical_density(img).reshape(-1, 3)
    conc = _concentrations(od, basis.vectors)
    # OD the two stains cannot explain (noise, clipping) is carried over unchanged
    residual = od - conc @ basis.vectors
    conc = conc * (np.asarray(ref.max_conc) / basis.max_conc)
    out = np.exp(-(conc @ np.asarray(ref.vectors) + residual))
    return np.clip(out.reshape(img.shape), 0.0, 1.0), basis

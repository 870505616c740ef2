"""sRGB (D65) <-> CIELAB and the luminance used for every grayscale comparison."""

from __future__ import annotations

import numpy as np

# same constants as the usual sRGB/D65 references, so results agree with common image libraries
XYZ_FROM_RGB = np.array([
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
])
RGB_FROM_XYZ = np.linalg.inv(XYZ_FROM_RGB)
WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
LUMA = np.array([0.299, 0.587, 0.114])

_EPS = 216 / 24389
_KAPPA = 24389 / 27


def _check(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.shape[-1] != 3:
        raise ValueError(f"expected a trailing channel axis of 3, got shape {a.shape}")
    return a


def _linearize(c):
    return np.where(c > 0.04045, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def _gamma(c):
    return np.where(c > 0.0031308, 1.055 * np.abs(c) ** (1 / 2.4) * np.sign(c) - 0.055, 12.92 * c)


def rgb_to_lab(img) -> np.ndarray:
    rgb = np.clip(_check(img), 0.0, 1.0)
    xyz = _linearize(rgb) @ XYZ_FROM_RGB.T / WHITE_D65
    f = np.where(xyz > _EPS, np.cbrt(xyz), (_KAPPA * xyz + 16) / 116)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def lab_to_rgb(lab, clamp: bool = True) -> np.ndarray:
    lab = _check(lab)
    fy = (lab[..., 0] + 16) / 116
    fx = fy + lab[..., 1] / 500
    fz = fy - lab[..., 2] / 200
    f = np.stack([fx, fy, fz], axis=-1)
    xyz = np.where(f ** 3 > _EPS, f ** 3, (116 * f - 16) / _KAPPA) * WHITE_D65
    rgb = _gamma(xyz @ RGB_FROM_XYZ.T)
    return np.clip(rgb, 0.0, 1.0) if clamp else rgb


def rgb_lab_roundtrip(img) -> np.ndarray:
    return lab_to_rgb(rgb_to_lab(img))


def to_gray(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    return a if a.ndim == 2 else a @ LUMA


def delta_e(lab1, lab2) -> np.ndarray:
    """CIE76 color difference."""
    return np.linalg.norm(np.asarray(lab1) - np.asarray(lab2), axis=-1)

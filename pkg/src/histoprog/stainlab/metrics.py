"""Windowed SSIM and Pearson correlation, with a differentiable SSIM for training."""

from __future__ import annotations

import numpy as np

from ..gradcore import Tensor
from .color import LUMA, to_gray

WINDOW = 8
STRIDE = 4
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def window_matrix(n: int, size: int = WINDOW, stride: int = STRIDE) -> np.ndarray:
    """Rows average ``size`` consecutive samples starting every ``stride``."""
    if n < size:
        raise ValueError(f"image side {n} is smaller than the {size}-pixel SSIM window")
    starts = np.arange(0, n - size + 1, stride)
    A = np.zeros((len(starts), n))
    for k, s in enumerate(starts):
        A[k, s:s + size] = 1.0 / size
    return A


def _ssim_from_moments(mx, my, xx, yy, xy):
    vx = xx - mx * mx
    vy = yy - my * my
    cov = xy - mx * my
    num = (2 * mx * my + C1) * (2 * cov + C2)
    den = (mx * mx + my * my + C1) * (vx + vy + C2)
    return num / den


def ssim(x, y) -> float:
    """Mean SSIM over 8x8 windows placed every 4 pixels; RGB inputs are reduced to luminance.

    Windows start at 0, 4, 8, ..., so square images whose side is 8 + 4k see the
    same window set after a 90 degree rotation.
    """
    gx, gy = to_gray(x), to_gray(y)
    if gx.shape != gy.shape:
        raise ValueError(f"shape mismatch: {gx.shape} vs {gy.shape}")
    R, C = window_matrix(gx.shape[0]), window_matrix(gx.shape[1])
    win = lambda a: R @ a @ C.T
    s = _ssim_from_moments(win(gx), win(gy), win(gx * gx), win(gy * gy), win(gx * gy))
    return float(s.mean())


def gray_tensor(img: Tensor) -> Tensor:
    """Luminance of an (..., H, W, 3) tensor."""
    return img @ LUMA


def ssim_tensor(x: Tensor, y: Tensor) -> Tensor:
    """Differentiable SSIM for (..., H, W) gray tensors; mean over windows, per leading index."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    H, W = x.shape[-2:]
    R = Tensor(window_matrix(H))
    Ct = Tensor(window_matrix(W).T)
    win = lambda a: R @ a @ Ct
    s = _ssim_from_moments(win(x), win(y), win(x * x), win(y * y), win(x * y))
    return s.mean(axis=(-2, -1))


def pcc(x, y) -> float:
    """Pearson correlation of the flattened pixels, signed, in [-1, 1]."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ValueError("constant image")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))

"""Central-difference gradient verification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor


class GradCheckError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    worst_index: tuple

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def grad_check(loss_fn: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> GradCheckReport:
    """Compare the autodiff gradient of ``loss_fn`` at ``point`` with central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)

    x = Tensor(x0.copy(), requires_grad=True)
    loss = loss_fn(x)
    if loss.size != 1:
        raise GradCheckError("loss_fn must return a scalar")
    if not np.isfinite(loss.data).all():
        raise GradCheckError("non-finite loss at the base point")
    loss.backward()
    analytic = np.zeros_like(x0) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = float(loss_fn(Tensor(x0)).data)
        flat[k] = orig - eps
        fm = float(loss_fn(Tensor(x0)).data)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            coord = tuple(int(i) for i in np.unravel_index(k, x0.shape))
            raise GradCheckError(f"non-finite loss when perturbing coordinate {coord}")
        num_flat[k] = (fp - fm) / (2 * eps)

    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return GradCheckReport(float(rel.max()) if rel.size else 0.0, analytic, numeric, worst)

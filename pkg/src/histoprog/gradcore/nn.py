"""Dense layers and small multilayer perceptrons over :class:`Tensor`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .tensor import Tensor

ACTIVATIONS = ("relu", "sigmoid", "softmax", "tanh", "identity")


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths ``sizes[0] -> ... -> sizes[-1]`` with one activation per layer."""

    sizes: tuple
    activations: tuple
    prefix: str = "mlp"

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError(f"{len(self.sizes) - 1} layers but {len(self.activations)} activations")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def weight(self, i: int) -> str:
        return f"{self.prefix}.{i}.W"

    def bias(self, i: int) -> str:
        return f"{self.prefix}.{i}.b"


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_mlp(spec: MLPSpec, rng: np.random.Generator) -> dict:
    params = {}
    for i in range(spec.n_layers):
        n_in, n_out = spec.sizes[i], spec.sizes[i + 1]
        params[spec.weight(i)] = Tensor(glorot(rng, n_in, n_out), requires_grad=True, name=spec.weight(i))
        params[spec.bias(i)] = Tensor(np.zeros(n_out), requires_grad=True, name=spec.bias(i))
    return params


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return x.relu()
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "softmax":
        return x.softmax(axis=-1)
    if kind == "tanh":
        return x.tanh()
    return x


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


def mlp_forward(params: Mapping[str, Tensor], x, spec: MLPSpec, *, dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None, return_hidden: bool = False):
    """Run ``x`` (rows are samples) through the MLP.

    With ``return_hidden`` the list of every layer's post-activation output is
    returned as well; the last entry is the output itself. Dropout applies to
    hidden layers only and only when an ``rng`` is given.
    """
    h = x if isinstance(x, Tensor) else Tensor(x)
    hidden = []
    for i in range(spec.n_layers):
        W = params[spec.weight(i)]
        b = params[spec.bias(i)]
        if h.shape[-1] != W.shape[0]:
            raise ValueError(f"layer {spec.weight(i)}: input width {h.shape[-1]} != expected {W.shape[0]}")
        h = activate(h @ W + b, spec.activations[i])
        if i < spec.n_layers - 1:
            h = dropout(h, dropout_rate, rng)
        hidden.append(h)
    return (h, hidden) if return_hidden else h


def dense(params: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    return x @ params[f"{prefix}.W"] + params[f"{prefix}.b"]


def init_dense(params: dict, prefix: str, n_in: int, n_out: int, rng: np.random.Generator,
               bias: float = 0.0) -> None:
    params[f"{prefix}.W"] = Tensor(glorot(rng, n_in, n_out), requires_grad=True, name=f"{prefix}.W")
    params[f"{prefix}.b"] = Tensor(np.full(n_out, bias), requires_grad=True, name=f"{prefix}.b")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gain + bias


def cross_entropy(probs_or_logits: Tensor, labels: np.ndarray, *, from_logits: bool = True) -> Tensor:
    """Mean negative log-likelihood of integer ``labels``."""
    labels = np.asarray(labels, dtype=int)
    rows = np.arange(len(labels))
    if from_logits:
        logp = probs_or_logits.log_softmax(axis=-1)
    else:
        logp = probs_or_logits.clip(1e-12, 1.0).log()
    return -logp[rows, labels].mean()


def clone_params(params: Mapping[str, Tensor], requires_grad: bool = True) -> dict:
    return {k: Tensor(np.array(p.data, copy=True), requires_grad=requires_grad, name=k)
            for k, p in params.items()}


def frozen(params: Mapping[str, np.ndarray | Tensor]) -> dict:
    """Constant (non-differentiable) tensors holding a copy of ``params``."""
    out = {}
    for k, p in params.items():
        data = p.data if isinstance(p, Tensor) else p
        out[k] = Tensor(np.array(data, copy=True))
    return out

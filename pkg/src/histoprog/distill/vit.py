"""A two-block, single-head vision transformer over 32x32 inputs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..gradcore import ModelCheckpoint, Tensor, concat, frozen, init_dense, layer_norm

IMAGE = 32
PATCH = 8
N_TOKENS = (IMAGE // PATCH) ** 2


@dataclass(frozen=True)
class ViTConfig:
    dim: int = 32
    mlp_hidden: int = 64
    depth: int = 2
    n_out: int = 4
    feature_dim: int = 32
    clinical_dim: int = 0
    positional: bool = True
    seed: int = 0


@dataclass
class ViTOutput:
    logits: Tensor
    features: Tensor
    attention: list


def patchify(images: np.ndarray) -> np.ndarray:
    """``(B, 32, 32, 3)`` to ``(B, 16, 192)`` row-major 8x8 tokens."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.shape[1:] != (IMAGE, IMAGE, 3):
        raise ValueError(f"TinyViT expects inputs of shape (32, 32, 3), got {x.shape[1:]}")
    g = IMAGE // PATCH
    x = x.reshape(len(x), g, PATCH, g, PATCH, 3).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(len(x), g * g, PATCH * PATCH * 3)


class TinyViT:
    """Patch embedding, class token, optional learned positions, pre-norm blocks and a linear head.

    ``features`` is a projection of the final class token to ``feature_dim``, the space in
    which distillation compares student and teacher representations.
    """

    def __init__(self, cfg: ViTConfig, params: dict | None = None):
        self.cfg = cfg
        self.params = params if params is not None else self._init(cfg)

    @staticmethod
    def _init(cfg: ViTConfig) -> dict:
        rng = np.random.default_rng(cfg.seed)
        p = {}
        d = cfg.dim
        init_dense(p, "embed", PATCH * PATCH * 3, d, rng)
        p["cls"] = Tensor(0.02 * rng.normal(size=(1, 1, d)), requires_grad=True, name="cls")
        if cfg.positional:
            p["pos"] = Tensor(0.02 * rng.normal(size=(1, N_TOKENS + 1, d)), requires_grad=True, name="pos")
        for b in range(cfg.depth):
            for name in ("ln1", "ln2"):
                p[f"block{b}.{name}.g"] = Tensor(np.ones(d), requires_grad=True)
                p[f"block{b}.{name}.b"] = Tensor(np.zeros(d), requires_grad=True)
            for name in ("q", "k", "v", "o"):
                init_dense(p, f"block{b}.{name}", d, d, rng)
            init_dense(p, f"block{b}.mlp1", d, cfg.mlp_hidden, rng)
            init_dense(p, f"block{b}.mlp2", cfg.mlp_hidden, d, rng)
        p["ln_f.g"] = Tensor(np.ones(d), requires_grad=True)
        p["ln_f.b"] = Tensor(np.zeros(d), requires_grad=True)
        init_dense(p, "proj", d, cfg.feature_dim, rng)
        init_dense(p, "head", cfg.feature_dim + cfg.clinical_dim, cfg.n_out, rng)
        for k, v in p.items():
            v.name = k
        return p

    def forward(self, images, clinical=None, params=None) -> ViTOutput:
        p = params if params is not None else frozen(self.params)
        tokens = Tensor(patchify(images))
        bsz = tokens.shape[0]
        x = tokens @ p["embed.W"] + p["embed.b"]
        cls = p["cls"] + Tensor(np.zeros((bsz, 1, self.cfg.dim)))
        x = concat([cls, x], axis=1)
        if self.cfg.positional:
            x = x + p["pos"]
        attn = []
        scale = 1.0 / np.sqrt(self.cfg.dim)
        for b in range(self.cfg.depth):
            pre = f"block{b}."
            h = layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            q = h @ p[pre + "q.W"] + p[pre + "q.b"]
            k = h @ p[pre + "k.W"] + p[pre + "k.b"]
            v = h @ p[pre + "v.W"] + p[pre + "v.b"]
            a = ((q @ k.transpose(0, 2, 1)) * scale).softmax(axis=-1)
            attn.append(a.data)
            x = x + (a @ v) @ p[pre + "o.W"] + p[pre + "o.b"]
            h = layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            x = x + (h @ p[pre + "mlp1.W"] + p[pre + "mlp1.b"]).relu() @ p[pre + "mlp2.W"] + p[pre + "mlp2.b"]
        c = layer_norm(x[:, 0, :], p["ln_f.g"], p["ln_f.b"])
        feats = c @ p["proj.W"] + p["proj.b"]
        h = feats.relu()
        if self.cfg.clinical_dim:
            if clinical is None:
                raise ValueError(f"this TinyViT takes {self.cfg.clinical_dim} clinical covariates per input")
            clin = np.asarray(clinical, dtype=np.float64).reshape(bsz, self.cfg.clinical_dim)
            h = concat([h, Tensor(clin)], axis=1)
        return ViTOutput(h @ p["head.W"] + p["head.b"], feats, attn)

    def to_checkpoint(self) -> ModelCheckpoint:
        return ModelCheckpoint.capture(self.params, self.cfg.seed, meta={"kind": "tinyvit", "config": asdict(self.cfg)})

    @classmethod
    def from_checkpoint(cls, ck: ModelCheckpoint) -> "TinyViT":
        if ck.meta.get("kind") != "tinyvit":
            raise ValueError("checkpoint does not hold a TinyViT")
        return cls(ViTConfig(**ck.meta["config"]), ck.tensors(requires_grad=True))


def tiny_vit_forward(model: TinyViT, patch, clinical=None) -> np.ndarray:
    """Output logits for one 32x32x3 input (or a batch)."""
    x = np.asarray(patch, dtype=np.float64)
    out = model.forward(x, clinical).logits.data
    return out[0] if x.ndim == 3 else out

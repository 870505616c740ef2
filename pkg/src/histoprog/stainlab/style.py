"""Style-transfer normalizer: gray standardization G, pointwise colorizer zeta, palette discriminator D.

The colorizer is trained with ``alpha * L_gan + beta * L_recon + gamma * L_fp`` where the
feature-preserving term compares a frozen tumor classifier's pooled features on the
reference image and on its re-colorized gray version.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..gradcore import (MLPSpec, ModelCheckpoint, OptimState, Tensor, TrainingDiverged, frozen, init_mlp,
                        mlp_forward, step)
from .color import LUMA
from .metrics import gray_tensor, ssim_tensor

log = logging.getLogger(__name__)

GRAY_MEAN = 0.6
GRAY_STD = 0.2
D_GRID = 8
P_CLAMP = 1e-7

ZETA = MLPSpec((1, 16, 16, 3), ("relu", "relu", "sigmoid"), prefix="zeta")
DISC = MLPSpec((D_GRID * D_GRID * 3, 32, 1), ("relu", "sigmoid"), prefix="disc")
FHAT_PIXEL = MLPSpec((3, 16), ("relu",), prefix="fhat.pix")
FHAT_HEAD = MLPSpec((16, 1), ("identity",), prefix="fhat.head")


# ----------------------------------------------------------------------------- parts


def gray_normalize(img) -> np.ndarray:
    """Luminance standardized per image to mean 0.6 and std 0.2, clipped to [0, 1]."""
    a = np.asarray(img, dtype=np.float64)
    y = a @ LUMA
    axes = (-2, -1)
    mu = y.mean(axis=axes, keepdims=True)
    sd = y.std(axis=axes, keepdims=True)
    z = np.divide(y - mu, sd, out=np.zeros_like(y), where=sd > 1e-8)
    return np.clip(GRAY_MEAN + GRAY_STD * z, 0.0, 1.0)


def colorize(params, gray) -> Tensor:
    """Apply zeta pixel by pixel: (..., H, W) gray -> (..., H, W, 3) color."""
    g = gray if isinstance(gray, Tensor) else Tensor(gray)
    out = mlp_forward(params, g.reshape(-1, 1), ZETA)
    return out.reshape(g.shape + (3,))


def pool_to_grid(img: Tensor, grid: int = D_GRID) -> Tensor:
    """Mean-pool (N, H, W, 3) images to (N, grid, grid, 3); H and W must divide by ``grid``."""
    n, h, w, c = img.shape
    if h % grid or w % grid:
        raise ValueError(f"image {h}x{w} does not pool evenly to {grid}x{grid}")
    return img.reshape(n, grid, h // grid, grid, w // grid, c).mean(axis=(2, 4))


def discriminate(params, img: Tensor) -> Tensor:
    """Probability that each (N, H, W, 3) image has the reference palette."""
    x = pool_to_grid(img).reshape(img.shape[0], -1)
    return mlp_forward(params, x, DISC).reshape(-1)


def tumor_features(params, img) -> Tensor:
    """Penultimate features of the tumor classifier: pooled pointwise activations, (N, 16)."""
    x = img if isinstance(img, Tensor) else Tensor(img)
    n = x.shape[0]
    h = mlp_forward(params, x.reshape(-1, 3), FHAT_PIXEL)
    return h.reshape(n, -1, FHAT_PIXEL.sizes[-1]).mean(axis=1)


def tumor_logit(params, img) -> Tensor:
    return mlp_forward(params, tumor_features(params, img), FHAT_HEAD).reshape(-1)


# ---------------------------------------------------------------------------- losses


def recon_loss(orig, gen) -> Tensor:
    """``1 - SSIM`` between the luminances, averaged over the batch; inputs (..., H, W, 3)."""
    o = orig if isinstance(orig, Tensor) else Tensor(orig)
    g = gen if isinstance(gen, Tensor) else Tensor(gen)
    if o.shape != g.shape:
        raise ValueError(f"shape mismatch: {o.shape} vs {g.shape}")
    return 1.0 - ssim_tensor(gray_tensor(o), gray_tensor(g)).mean()


def adversarial_losses(d_real: Tensor, d_fake: Tensor) -> tuple:
    """``(d_loss, g_loss)`` from discriminator outputs on real and generated batches.

    ``d_loss = -(mean ln D(real) + mean ln(1 - D(fake)))`` and the non-saturating
    ``g_loss = -mean ln D(fake)``.
    """
    if d_real.size == 0 or d_fake.size == 0:
        raise ValueError("adversarial losses need nonempty batches")
    r = d_real.clip(P_CLAMP, 1 - P_CLAMP)
    f = d_fake.clip(P_CLAMP, 1 - P_CLAMP)
    d_loss = -(r.log().mean() + (1.0 - f).log().mean())
    g_loss = -f.log().mean()
    return d_loss, g_loss


def kl_divergence(p_logits: Tensor, q_logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Batch mean of KL(softmax(p/T) || softmax(q/T))."""
    lp = (p_logits * (1.0 / temperature)).log_softmax(axis=-1)
    lq = (q_logits * (1.0 / temperature)).log_softmax(axis=-1)
    return (lp.exp() * (lp - lq)).sum(axis=-1).mean()


def feature_preserving_loss(fhat_params, color_ref, generated, temperature: float = 2.0) -> Tensor:
    fr = tumor_features(fhat_params, color_ref)
    fg = tumor_features(fhat_params, generated)
    if not (np.all(np.isfinite(fr.data)) and np.all(np.isfinite(fg.data))):
        raise ValueError("non-finite classifier features")
    return kl_divergence(fr, fg, temperature)


# ---------------------------------------------------------------------------- model


@dataclass(frozen=True)
class StyleConfig:
    alpha: float = 0.2
    beta: float = 0.3
    gamma: float = 0.5
    temperature: float = 2.0
    lr: float = 0.05
    d_lr: float = 0.01
    momentum: float = 0.5
    epochs: int = 40
    batch: int = 8
    fhat_steps: int = 600
    clip_norm: float = 1.0
    gan_warmup: int = 5
    seed: int = 0

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class StyleModel:
    cfg: StyleConfig
    zeta: dict
    disc: dict
    fhat: dict
    history: list = field(default_factory=list)

    def to_checkpoint(self) -> ModelCheckpoint:
        params = {**self.zeta, **self.disc, **self.fhat}
        return ModelCheckpoint.capture(params, self.cfg.seed, meta={"config": asdict(self.cfg), "kind": "style"})

    @classmethod
    def from_checkpoint(cls, ck: ModelCheckpoint) -> "StyleModel":
        t = ck.tensors(requires_grad=True)
        part = lambda pre: {k: v for k, v in t.items() if k.startswith(pre)}
        return cls(StyleConfig(**ck.meta["config"]), part("zeta."), part("disc."), part("fhat."))


def normalize_image(model: StyleModel, img) -> np.ndarray:
    """zeta(G(img)) clamped to [0, 1]; accepts one image or a stack."""
    out = colorize(frozen(model.zeta), gray_normalize(img)).data
    return np.clip(out, 0.0, 1.0)


def train_tumor_classifier(images, labels, steps: int = 200, lr: float = 0.05, seed: int = 0) -> dict:
    """Fit the binary tumor/non-tumor classifier f-hat (logistic head on pooled features)."""
    rng = np.random.default_rng(seed)
    params = {**init_mlp(FHAT_PIXEL, rng), **init_mlp(FHAT_HEAD, rng)}
    x = Tensor(np.asarray(images, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    opt = OptimState(lr, 0.9)
    for _ in range(steps):
        z = tumor_logit(params, x)
        # logistic loss written with softplus: log(1 + e^z) - y z
        loss = ((z.clip(-50, 50).exp() + 1.0).log() - z * y).mean()
        loss.backward()
        step(params, opt)
    return params


def warm_start_colorizer(params: dict, steps: int = 300, lr: float = 0.5) -> dict:
    """Fit zeta to the gray-to-gray identity so training starts from a structure-preserving map."""
    g = np.linspace(0.0, 1.0, 256)
    target = np.repeat(g[:, None], 3, axis=1)
    opt = OptimState(lr, 0.9)
    for _ in range(steps):
        d = colorize(params, g) - target
        (d * d).mean().backward()
        step(params, opt)
    return params


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def train_style_transfer(style_a, style_b, tumor_labels, cfg: StyleConfig = StyleConfig(), curve_path=None,
                         fhat: dict | None = None) -> StyleModel:
    """Alternate discriminator and colorizer updates over unpaired A (reference) and B images.

    ``style_a``/``style_b`` are (N, H, W, 3) stacks with H, W divisible by 8;
    ``tumor_labels`` marks the A images used to pre-train the frozen classifier.
    """
    A = np.asarray(style_a, dtype=np.float64)
    B = np.asarray(style_b, dtype=np.float64)
    if len(A) == 0 or len(B) == 0:
        raise ValueError("style transfer needs both reference (A) and source (B) images")
    rng = np.random.default_rng(cfg.seed)
    if fhat is None:
        fhat = train_tumor_classifier(A, tumor_labels, cfg.fhat_steps, seed=cfg.seed)
    fhat_c = frozen(fhat)
    model = StyleModel(cfg, warm_start_colorizer(init_mlp(ZETA, rng)), init_mlp(DISC, rng), fhat)
    gA, gB = gray_normalize(A), gray_normalize(B)
    opt_z = OptimState(cfg.lr, cfg.momentum)
    opt_d = OptimState(cfg.d_lr, cfg.momentum)
    stable = model.to_checkpoint()
    for epoch in range(cfg.epochs):
        # the adversarial weight ramps in so the colorizer first learns a structure-preserving map
        alpha_t = cfg.alpha * min(1.0, epoch / cfg.gan_warmup) if cfg.gan_warmup > 0 else cfg.alpha
        sums = np.zeros(4)
        n_steps = 0
        for ia, ib in zip(_batches(len(A), cfg.batch, rng), _batches(len(B), cfg.batch, rng)):
            real = Tensor(A[ia])
            # discriminator step against the current colorizer
            fake = colorize(frozen(model.zeta), gB[ib])
            d_loss, _ = adversarial_losses(discriminate(model.disc, real), discriminate(model.disc, fake))
            d_loss.backward()
            step(model.disc, opt_d, cfg.clip_norm)
            # colorizer step
            disc_c = frozen(model.disc)
            fake = colorize(model.zeta, gB[ib])
            recol = colorize(model.zeta, gA[ia])
            _, l_gan = adversarial_losses(discriminate(disc_c, real), discriminate(disc_c, fake))
            l_recon = recon_loss(real, recol)
            l_fp = feature_preserving_loss(fhat_c, real, recol, cfg.temperature)
            total = alpha_t * l_gan + cfg.beta * l_recon + cfg.gamma * l_fp
            if not np.isfinite(total.data) or total.data > 1e3 or d_loss.data > 1e3:
                raise TrainingDiverged(f"style training diverged at epoch {epoch}", stable)
            total.backward()
            step(model.zeta, opt_z, cfg.clip_norm)
            sums += [l_gan.data, l_recon.data, l_fp.data, total.data]
            n_steps += 1
        row = dict(zip(("epoch", "l_gan", "l_recon", "l_fp", "total"), [epoch, *(sums / n_steps)]))
        model.history.append(row)
        stable = model.to_checkpoint()
        log.info("style epoch %d gan %.4f recon %.4f fp %.4f total %.4f", epoch, row["l_gan"], row["l_recon"],
                 row["l_fp"], row["total"])
    if curve_path is not None:
        write_curve(model.history, curve_path)
    return model


def write_curve(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "l_gan", "l_recon", "l_fp", "total"])
        for r in history:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in ("l_gan", "l_recon", "l_fp", "total")])

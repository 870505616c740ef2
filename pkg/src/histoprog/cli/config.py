"""The flat run configuration shared by every command."""

from __future__ import annotations

from dataclasses import dataclass

from ..distill import DistillConfig
from ..kvconfig import from_kv, load_kv, parse_kv, to_kv
from ..meanteacher import MTConfig
from ..prognosis import PrognosisConfig
from ..stainlab import StyleConfig
from ..synthdata import CohortSpec


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # synthetic data
    n_patients: int = 500
    censoring_rate: float = 0.3
    endpoint: str = "OS"
    n_train_slides: int = 4
    n_test_slides: int = 12
    slide_size: int = 256
    blob_sigma: float = 40.0
    pixel_noise: float = 0.1
    label_fraction: float = 0.1
    style_images: int = 48
    style_size: int = 64
    style_pairs: int = 4
    # style normalizer
    style_alpha: float = 0.2
    style_beta: float = 0.3
    style_gamma: float = 0.5
    style_temperature: float = 2.0
    style_lr: float = 0.05
    style_epochs: int = 40
    style_fhat_steps: int = 600
    # Mean Teacher
    mt_lr: float = 1e-3
    mt_momentum: float = 0.9
    mt_batch: int = 32
    ema_decay: float = 0.99
    mt_noise_std: float = 0.05
    mt_dropout: float = 0.1
    consistency: float = 1.0
    mt_epochs: int = 40
    pseudo_rounds: int = 1
    pseudo_k: int = 60
    pseudo_p: int = 1
    # prognosis
    head: str = "cox"
    strategy: str = "weighted"
    grid_m: int = 4
    prog_lr: float = 1e-3
    prog_max_epochs: int = 300
    prog_patience: int = 20
    trg_grouping: str = "1-2 vs 3-5"
    label_fractions: tuple = (0.125, 0.25, 0.375, 0.5, 0.75, 1.0)
    curve_seeds: int = 1
    bootstrap: int = 200
    # distillation
    kd_alpha1: float = 0.5
    kd_alpha2: float = 0.1
    kd_tau: float = 0.07
    kd_crd_weight: float = 0.5
    kd_softening: float = 2.0
    kd_lr: float = 0.01
    kd_epochs: int = 60

    def __post_init__(self):
        if not 0 < self.label_fraction <= 1:
            raise ValueError(f"label_fraction must be in (0, 1], got {self.label_fraction}")
        if any(not 0 < f <= 1 for f in self.label_fractions):
            raise ValueError("label_fractions must lie in (0, 1]")
        if self.head not in ("cox", "discrete"):
            raise ValueError(f"head must be cox or discrete, got {self.head!r}")
        if self.curve_seeds < 1 or self.bootstrap < 1:
            raise ValueError("curve_seeds and bootstrap must be positive")
        # delegate range checks to the module configs
        self.prognosis()
        self.style()

    def cohort(self) -> CohortSpec:
        return CohortSpec(seed=self.seed, n_patients=self.n_patients, censoring_rate=self.censoring_rate,
                          endpoint=self.endpoint)

    def style(self) -> StyleConfig:
        return StyleConfig(alpha=self.style_alpha, beta=self.style_beta, gamma=self.style_gamma,
                           temperature=self.style_temperature, lr=self.style_lr, epochs=self.style_epochs,
                           fhat_steps=self.style_fhat_steps, seed=self.seed)

    def mean_teacher(self) -> MTConfig:
        return MTConfig(lr=self.mt_lr, momentum=self.mt_momentum, batch=self.mt_batch, ema_decay=self.ema_decay,
                        noise_std=self.mt_noise_std, dropout=self.mt_dropout, consistency=self.consistency,
                        epochs=self.mt_epochs, pseudo_rounds=self.pseudo_rounds, pseudo_k=self.pseudo_k,
                        pseudo_p=self.pseudo_p, seed=self.seed)

    def prognosis(self, head: str | None = None) -> PrognosisConfig:
        return PrognosisConfig(head=head or self.head, strategy=self.strategy, lr=self.prog_lr,
                               max_epochs=self.prog_max_epochs, patience=self.prog_patience, grid_m=self.grid_m,
                               trg_grouping=self.trg_grouping, seed=self.seed)

    def distill(self) -> DistillConfig:
        return DistillConfig(alpha1=self.kd_alpha1, alpha2=self.kd_alpha2, tau=self.kd_tau,
                             crd_weight=self.kd_crd_weight, softening=self.kd_softening, lr=self.kd_lr,
                             epochs=self.kd_epochs, seed=self.seed)


def resolve(config_path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """Defaults, then the config file, then ``key=value`` overrides, then ``--seed``."""
    cfg = load_kv(RunConfig, config_path) if config_path else RunConfig()
    if overrides:
        cfg = from_kv(RunConfig, parse_kv("\n".join(overrides)), cfg)
    if seed is not None:
        cfg = from_kv(RunConfig, {"seed": seed}, cfg)
    return cfg


def dump(cfg: RunConfig) -> str:
    return to_kv(cfg)

"""Knowledge distillation from the prognosis pipeline into a small vision transformer."""

from .losses import (KDConfig, KDLoss, SurvivalTargets, crd_loss, discriminate, discriminator_loss,
                     in_batch_negatives, kd_gan_loss, softened_kl, supervised_loss)
from .train import (REPORT_COLUMNS, DistillConfig, DistillData, DistillResult, TeacherOutputs, comparison_report,
                    student_risk, teacher_outputs, train_distilled, write_report)
from .vit import N_TOKENS, TinyViT, ViTConfig, ViTOutput, patchify, tiny_vit_forward

__all__ = [
    "KDConfig", "KDLoss", "SurvivalTargets", "crd_loss", "discriminate", "discriminator_loss",
    "in_batch_negatives", "kd_gan_loss", "softened_kl", "supervised_loss",
    "REPORT_COLUMNS", "DistillConfig", "DistillData", "DistillResult", "TeacherOutputs", "comparison_report",
    "student_risk", "teacher_outputs", "train_distilled", "write_report",
    "N_TOKENS", "TinyViT", "ViTConfig", "ViTOutput", "patchify", "tiny_vit_forward",
]

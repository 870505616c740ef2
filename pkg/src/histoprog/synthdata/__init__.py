"""Seeded synthetic slides and patient cohorts with known ground truth."""

from .cohort import (CLINICAL, MAP_PALETTE, STRONG_BETA, Cohort, CohortSpec, Patient, class_embedding,
                     gen_cohort, render_thumbnail, split_indices, trg_from_cancer_fraction)
from .slides import (BACKGROUND, CANCER, CLASSES, N_CLASSES, STAIN_BASIS_A, STYLE_B_MIX, SlideSpec,
                     class_fractions, composition_for_grade, gen_slide, gen_style_dataset, to_style_b)

__all__ = [
    "CLINICAL", "MAP_PALETTE", "STRONG_BETA", "Cohort", "CohortSpec", "Patient", "class_embedding",
    "gen_cohort", "render_thumbnail", "split_indices", "trg_from_cancer_fraction",
    "BACKGROUND", "CANCER", "CLASSES", "N_CLASSES", "STAIN_BASIS_A", "STYLE_B_MIX", "SlideSpec",
    "class_fractions", "composition_for_grade", "gen_slide", "gen_style_dataset", "to_style_b",
]

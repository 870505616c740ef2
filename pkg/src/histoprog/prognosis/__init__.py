"""Survival, time-to-recurrence and TRG prediction plus survival metrics."""

from .aggregation import STRATEGIES, aggregate_lesions, attention_pool, attention_pool_tensor, init_attention
from .curves import LABEL_FRACTIONS, label_fraction_curve, mean_curve, subsample
from .io import read_cohort, write_cohort
from .losses import NoInformativePatients, censored_ce_from_logits, censored_ce_loss, cox_pl_loss, risk_score
from .metrics import (KMCurve, LogRankResult, bootstrap_ci, concordance_counts, concordance_index, kaplan_meier,
                      log_rank_test)
from .model import HEADS, PatientBatch, PrognosisConfig, PrognosisModel, TrainingDiverged, train_prognosis
from .records import LesionFeature, SurvivalRecord, TimeGrid, as_arrays
from .stratify import Stratification, stratify_risks
from .trg import GROUPINGS, group_labels, parse_grouping, pooled_map_features, predict_trg, train_trg

__all__ = [
    "LABEL_FRACTIONS", "label_fraction_curve", "mean_curve", "subsample",
    "STRATEGIES", "aggregate_lesions", "attention_pool", "attention_pool_tensor", "init_attention",
    "read_cohort", "write_cohort",
    "NoInformativePatients", "censored_ce_from_logits", "censored_ce_loss", "cox_pl_loss", "risk_score",
    "KMCurve", "LogRankResult", "bootstrap_ci", "concordance_counts", "concordance_index", "kaplan_meier",
    "log_rank_test",
    "HEADS", "PatientBatch", "PrognosisConfig", "PrognosisModel", "TrainingDiverged", "train_prognosis",
    "LesionFeature", "SurvivalRecord", "TimeGrid", "as_arrays",
    "Stratification", "stratify_risks",
    "GROUPINGS", "group_labels", "parse_grouping", "pooled_map_features", "predict_trg", "train_trg",
]

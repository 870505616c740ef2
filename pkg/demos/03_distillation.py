"""Distilling the prognosis pipeline into a small vision transformer.

The teacher is the discrete-time prognosis model, which sees per-lesion patch
features. The student only sees a 32x32 thumbnail of the patient's tissue map
(plus the two clinical covariates) and learns from the survival labels, the
teacher's softened interval probabilities, an adversarial feature match and a
contrastive term. A second student trained without the teacher shows what
distillation adds.

    python demos/03_distillation.py     # about 15 s
"""

import numpy as np

from histoprog.distill import (DistillConfig, DistillData, TinyViT, ViTConfig, student_risk, tiny_vit_forward,
                               train_distilled)
from histoprog.prognosis import PatientBatch, PrognosisConfig, concordance_index, train_prognosis
from histoprog.synthdata import CohortSpec, gen_cohort, split_indices

co = gen_cohort(CohortSpec(seed=0, n_patients=500))
tr, va, te = split_indices(len(co), 0)
batch = lambda idx: PatientBatch.from_patients([co.patients[i] for i in idx])
data = lambda idx: DistillData.from_patients([co.patients[i] for i in idx])
rec = lambda idx: (co.times[idx], co.events[idx])

teacher = train_prognosis(batch(tr), rec(tr), PrognosisConfig(head="discrete"), val=batch(va), val_records=rec(va))
print(f"teacher c-index {concordance_index(teacher.predict_risk(batch(te)), rec(te)):.3f}")

for name, cfg in (("distilled", DistillConfig()), ("plain", DistillConfig(alpha1=0.0, alpha2=0.0, crd_weight=0.0))):
    res = train_distilled(teacher, data(tr), cfg, val=data(va))
    c = concordance_index(student_risk(res.student, data(te), teacher.grid), rec(te))
    print(f"{name:<9} student c-index {c:.3f} after {len(res.history)} epochs")

# without positional embeddings the transformer cannot tell where a tile came from
vit = TinyViT(ViTConfig(positional=False, seed=1))
img = np.random.default_rng(1).random((32, 32, 3))
flipped = img.reshape(4, 8, 4, 8, 3)[::-1, :, ::-1].reshape(32, 32, 3)   # reverses the tile order
moved = np.max(np.abs(tiny_vit_forward(vit, img) - tiny_vit_forward(vit, flipped)))
print(f"\nshuffling tiles moves the output by {moved:.1e}")

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histoprog.gradcore import ModelCheckpoint, Tensor, concat, grad_check, init_mlp
from histoprog.distill import (REPORT_COLUMNS, DistillConfig, DistillData, KDConfig, SurvivalTargets, TinyViT,
                               ViTConfig, ViTOutput, comparison_report, crd_loss, in_batch_negatives, kd_gan_loss,
                               patchify, softened_kl, tiny_vit_forward, train_distilled, write_report)
from histoprog.distill.losses import disc_spec
from histoprog.prognosis import PatientBatch, PrognosisConfig, TimeGrid, train_prognosis
from histoprog.synthdata import CohortSpec, gen_cohort
from histoprog.synthdata.cohort import split_indices


def permute_tokens(img, perm):
    """Rearrange the 16 8x8 tiles of a 32x32 image."""
    tiles = img.reshape(4, 8, 4, 8, 3).transpose(0, 2, 1, 3, 4).reshape(16, 8, 8, 3)[perm]
    return tiles.reshape(4, 4, 8, 8, 3).transpose(0, 2, 1, 3, 4).reshape(32, 32, 3)


# ---------------------------------------------------------------------------- TinyViT


def test_patchify_row_major():
    img = np.random.default_rng(0).random((32, 32, 3))
    tok = patchify(img)[0]
    assert tok.shape == (16, 192)
    assert np.array_equal(tok[5].reshape(8, 8, 3), img[8:16, 8:16])


@pytest.mark.parametrize("seed", range(5))
def test_permutation_invariant_without_positions(seed):
    rng = np.random.default_rng(seed)
    vit = TinyViT(ViTConfig(positional=False, seed=seed))
    img = rng.random((32, 32, 3))
    perm = rng.permutation(16)
    a = tiny_vit_forward(vit, img)
    b = tiny_vit_forward(vit, permute_tokens(img, perm))
    # equal up to summation order inside the attention reductions
    assert np.max(np.abs(a - b)) <= 1e-12


def test_positions_break_permutation_invariance():
    rng = np.random.default_rng(1)
    vit = TinyViT(ViTConfig(positional=True, seed=1))
    for k in vit.params:
        if k == "pos":
            vit.params[k].data = rng.normal(size=vit.params[k].shape)
    img = rng.random((32, 32, 3))
    a = tiny_vit_forward(vit, img)
    b = tiny_vit_forward(vit, permute_tokens(img, rng.permutation(16)))
    assert np.max(np.abs(a - b)) > 1e-6


def test_attention_rows_sum_to_one():
    vit = TinyViT(ViTConfig(seed=2))
    out = vit.forward(np.random.default_rng(2).random((3, 32, 32, 3)))
    assert len(out.attention) == 2
    for a in out.attention:
        assert a.shape == (3, 17, 17)
        assert np.max(np.abs(a.sum(axis=-1) - 1.0)) <= 1e-12


def test_forward_deterministic_and_shape():
    vit = TinyViT(ViTConfig(n_out=5, seed=3))
    img = np.random.default_rng(3).random((32, 32, 3))
    assert tiny_vit_forward(vit, img).shape == (5,)
    assert np.array_equal(tiny_vit_forward(vit, img), tiny_vit_forward(vit, img))


def test_forward_shape_mismatch():
    with pytest.raises(ValueError, match="32, 32, 3"):
        tiny_vit_forward(TinyViT(ViTConfig()), np.zeros((28, 28, 3)))


def test_clinical_input_required_when_configured():
    vit = TinyViT(ViTConfig(clinical_dim=2))
    with pytest.raises(ValueError, match="clinical"):
        tiny_vit_forward(vit, np.zeros((32, 32, 3)))
    assert tiny_vit_forward(vit, np.zeros((32, 32, 3)), np.zeros(2)).shape == (4,)


def test_vit_backprop_through_attention():
    vit = TinyViT(ViTConfig(dim=8, mlp_hidden=8, n_out=3, feature_dim=4, seed=4))
    imgs = np.random.default_rng(4).random((2, 32, 32, 3))
    params = dict(vit.params)

    def loss(w):
        p = dict(params)
        p["block1.q.W"] = w
        return vit.forward(imgs, params=p).logits.softmax(axis=-1)[:, 0].sum()

    assert grad_check(loss, params["block1.q.W"].data).max_rel_error < 1e-4


def test_vit_checkpoint_roundtrip(tmp_path):
    vit = TinyViT(ViTConfig(seed=5, positional=False))
    back = TinyViT.from_checkpoint(ModelCheckpoint.load(vit.to_checkpoint().save(tmp_path / "v.ckpt")))
    img = np.random.default_rng(5).random((32, 32, 3))
    assert back.cfg == vit.cfg
    assert np.array_equal(tiny_vit_forward(back, img), tiny_vit_forward(vit, img))


# ----------------------------------------------------------------------- KD objective


def disc_params(dim=4, seed=0):
    return init_mlp(disc_spec(dim), np.random.default_rng(seed))


def kl_oracle(t_logits, s_logits, temp):
    def soft(z):
        e = np.exp(z / temp - np.max(z / temp, axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    p, q = soft(t_logits), soft(s_logits)
    return float(np.mean(np.sum(p * (np.log(p) - np.log(q)), axis=-1)))


def test_kl_matches_oracle():
    rng = np.random.default_rng(0)
    t, s = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    assert float(softened_kl(t, Tensor(s), 2.0).data) == pytest.approx(kl_oracle(t, s, 2.0), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), temp=st.floats(0.5, 5.0))
def test_kl_nonnegative_zero_iff_equal(seed, temp):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(3, 4))
    assert float(softened_kl(t, Tensor(t), temp).data) == pytest.approx(0.0, abs=1e-12)
    s = t + rng.normal(size=(3, 4))
    assert float(softened_kl(t, Tensor(s), temp).data) > 0.0


def test_student_equals_teacher_gives_zero_kl():
    logits = np.array([[4.0, -2.0, -2.0]])
    out = ViTOutput(Tensor(logits), Tensor(np.ones((1, 4))), [])
    parts = kd_gan_loss(out, ViTOutput(logits, np.ones((1, 4)), []), [0], disc_params(), KDConfig())
    assert abs(float(parts.kl.data)) < 1e-15
    assert float(parts.ce.data) == pytest.approx(-math.log(math.exp(4) / (math.exp(4) + 2 * math.exp(-2))))


def test_zero_weights_total_is_ce():
    rng = np.random.default_rng(1)
    out = ViTOutput(Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=(5, 4))), [])
    teach = ViTOutput(rng.normal(size=(5, 3)), rng.normal(size=(5, 4)), [])
    parts = kd_gan_loss(out, teach, [0, 1, 2, 1, 0], disc_params(), KDConfig(alpha1=0.0, alpha2=0.0))
    assert float(parts.total.data) == float(parts.ce.data)


def test_weighted_sum():
    rng = np.random.default_rng(2)
    out = ViTOutput(Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=(5, 4))), [])
    teach = ViTOutput(rng.normal(size=(5, 3)), rng.normal(size=(5, 4)), [])
    p = kd_gan_loss(out, teach, [0, 1, 2, 1, 0], disc_params(), KDConfig(alpha1=0.3, alpha2=0.7)).values()
    assert p["total"] == pytest.approx(p["ce"] + 0.3 * p["kl"] + 0.7 * p["gan"], abs=1e-12)


def test_nonfinite_teacher_rejected():
    out = ViTOutput(Tensor(np.zeros((1, 3))), Tensor(np.ones((1, 4))), [])
    with pytest.raises(ValueError, match="non-finite"):
        kd_gan_loss(out, ViTOutput(np.array([[np.nan, 0, 0]]), np.ones((1, 4)), []), [0], disc_params(),
                    KDConfig())


@pytest.mark.parametrize("seed", range(20))
def test_kd_gan_grad_check(seed):
    rng = np.random.default_rng(seed)
    disc = disc_params(4, seed)
    teach = ViTOutput(rng.normal(size=(4, 3)), rng.normal(size=(4, 4)), [])
    grid = TimeGrid((0.0, 5.0, 10.0))
    targets = SurvivalTargets(np.array([2.0, 7.0, 12.0, 6.0]), np.array([True, False, True, True]), grid)
    cfg = KDConfig(alpha1=0.5, alpha2=0.3)

    def loss(z):
        out = ViTOutput(z[:, :3], z[:, 3:], [])
        return kd_gan_loss(out, teach, targets, disc, cfg).total

    assert grad_check(loss, rng.normal(size=(4, 7))).max_rel_error < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_crd_grad_check(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(5, 6))
    negs = in_batch_negatives(t)
    assert grad_check(lambda s: crd_loss(s, t, negs, 0.5), rng.normal(size=(5, 6))).max_rel_error < 1e-4


# ------------------------------------------------------------------------------ CRD


def test_crd_orthogonal_closed_form():
    s = np.array([1.0, 0.0, 0.0])
    v = float(crd_loss(s, s, np.array([[0.0, 1.0, 0.0]]), 1.0).data)
    assert v == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
    assert v == pytest.approx(0.3133, abs=1e-4)


@pytest.mark.parametrize("n", [1, 3, 7])
def test_crd_uninformative(n):
    s = np.array([0.3, -1.0, 2.0])
    a = np.array([1.0, 1.0, 0.0])
    assert float(crd_loss(s, a, np.tile(a, (n, 1)), 0.2).data) == pytest.approx(math.log(n + 1), abs=1e-12)


def test_crd_zero_norm_rejected():
    with pytest.raises(ValueError, match="zero-norm"):
        crd_loss(np.zeros(3), np.ones(3), np.ones((1, 3)), 0.1)


def slerp(a, b, t):
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    om = np.arccos(np.clip(a @ b, -1, 1))
    return (np.sin((1 - t) * om) * a + np.sin(t * om) * b) / np.sin(om)


def test_crd_decreases_toward_anchor():
    rng = np.random.default_rng(3)
    a, s0, negs = rng.normal(size=4), rng.normal(size=4), rng.normal(size=(3, 4))
    vals = [float(crd_loss(slerp(s0, a, t), a, negs, 0.1).data) for t in (0.0, 0.5)]
    assert vals[1] < vals[0]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), scale=st.floats(0.01, 100.0), tau=st.floats(0.05, 2.0))
def test_crd_positive_and_scale_free(seed, scale, tau):
    rng = np.random.default_rng(seed)
    s, a, negs = rng.normal(size=(2, 5)), rng.normal(size=(2, 5)), rng.normal(size=(2, 3, 5))
    base = float(crd_loss(s, a, negs, tau).data)
    assert base > 0.0
    assert float(crd_loss(s * scale, a, negs, tau).data) == pytest.approx(base, rel=1e-9)


def test_in_batch_negatives():
    t = np.arange(12.0).reshape(4, 3)
    negs = in_batch_negatives(t)
    assert negs.shape == (4, 3, 3)
    for i in range(4):
        assert not any(np.array_equal(t[i], n) for n in negs[i])
    assert in_batch_negatives(t, 2).shape == (4, 2, 3)
    with pytest.raises(ValueError):
        in_batch_negatives(t[:1])


# --------------------------------------------------------------------------- training


@pytest.fixture(scope="module")
def cohort_setup():
    co = gen_cohort(CohortSpec(seed=3, n_patients=150, patches_per_lesion=16))
    tr, va, te = split_indices(len(co), 3)
    sub = lambda idx: [co.patients[i] for i in idx]
    teacher = train_prognosis(PatientBatch.from_patients(sub(tr)), (co.times[tr], co.events[tr]),
                              PrognosisConfig(head="discrete", max_epochs=80),
                              val=PatientBatch.from_patients(sub(va)), val_records=(co.times[va], co.events[va]))
    return teacher, DistillData.from_patients(sub(tr)), DistillData.from_patients(sub(va)), \
        DistillData.from_patients(sub(te))


def test_training_reproducible(cohort_setup):
    teacher, tr, va, _ = cohort_setup
    cfg = DistillConfig(epochs=3, seed=4)
    a = train_distilled(teacher, tr, cfg, val=va)
    b = train_distilled(teacher, tr, cfg, val=va)
    assert a.trace == b.trace and a.history == b.history
    assert a.student.to_checkpoint().digest() == b.student.to_checkpoint().digest()


def test_degenerate_weights_match_plain_training(cohort_setup):
    teacher, tr, _, _ = cohort_setup
    cfg = DistillConfig(epochs=3, alpha1=0.0, alpha2=0.0, crd_weight=0.0)
    kd = train_distilled(teacher, tr, cfg)
    plain = train_distilled(None, tr, cfg, grid=teacher.grid)
    assert kd.trace == plain.trace
    assert len(kd.trace) == 3 * math.ceil(len(tr) / cfg.batch)


def test_cox_teacher_rejected(cohort_setup):
    _, tr, _, _ = cohort_setup
    cox = train_prognosis(tr.teacher_batch, (tr.times, tr.events), PrognosisConfig(head="cox", max_epochs=2))
    with pytest.raises(ValueError, match="discrete-time teacher"):
        train_distilled(cox, tr, DistillConfig(epochs=1))


def test_report_csv(cohort_setup, tmp_path):
    teacher, tr, va, te = cohort_setup
    res = train_distilled(teacher, tr, DistillConfig(epochs=2), val=va)
    rows = comparison_report(teacher, res.student, te, n_resamples=20)
    write_report(rows, tmp_path / "kd.csv")
    with open(tmp_path / "kd.csv") as fh:
        data = list(csv.reader(fh))
    assert tuple(data[0]) == REPORT_COLUMNS
    assert [r[0] for r in data[1:]] == ["teacher", "tinyvit_kd"]
    for r in data[1:]:
        c, lo, hi = map(float, r[3:])
        assert lo <= c <= hi or math.isclose(c, lo) or math.isclose(c, hi)

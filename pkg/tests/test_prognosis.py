import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from histoprog.gradcore import Tensor, grad_check
from histoprog.prognosis import (GROUPINGS, LesionFeature, NoInformativePatients, PatientBatch,
                                 PrognosisConfig, PrognosisModel, SurvivalRecord, TimeGrid,
                                 aggregate_lesions, attention_pool, bootstrap_ci, censored_ce_from_logits,
                                 censored_ce_loss, concordance_index, cox_pl_loss, group_labels, init_attention,
                                 kaplan_meier, log_rank_test, parse_grouping, predict_trg, read_cohort,
                                 risk_score, stratify_risks, train_prognosis, train_trg, write_cohort)
from histoprog.synthdata import CohortSpec, gen_cohort


def brute_cindex(risks, times, events):
    conc = comp = 0.0
    n = len(risks)
    for i in range(n):
        for j in range(n):
            if i == j or not events[i]:
                continue
            if times[i] < times[j] or (times[i] == times[j] and not events[j]):
                comp += 1
                if risks[i] > risks[j]:
                    conc += 1
                elif risks[i] == risks[j]:
                    conc += 0.5
    return conc / comp


# ----------------------------------------------------------------------------- cox


def test_cox_two_patients_equal_risk():
    loss = cox_pl_loss(np.array([0.3, 0.3]), (np.array([1.0, 2.0]), np.array([True, True])))
    assert loss.data == pytest.approx(math.log(2), abs=1e-12)


def test_cox_two_patients_general():
    r1, r2 = 0.4, -1.1
    loss = cox_pl_loss(np.array([r1, r2]), (np.array([1.0, 2.0]), np.array([True, True])))
    assert loss.data == pytest.approx(math.log(1 + math.exp(r2 - r1)) + 0.0, abs=1e-12)


def test_cox_three_patients_one_censored():
    a, b, c = 0.2, -0.7, 1.3
    recs = [SurvivalRecord("p1", 1.0, True), SurvivalRecord("p2", 2.0, False), SurvivalRecord("p3", 3.0, True)]
    # p1's risk set is everyone, p2 contributes nothing, p3's risk set is itself
    want = math.log(1 + math.exp(b - a) + math.exp(c - a)) + math.log(1.0)
    assert cox_pl_loss(np.array([a, b, c]), recs).data == pytest.approx(want, abs=1e-9)


def test_cox_breslow_ties():
    r = np.array([0.5, -0.2, 0.1])
    t = np.array([2.0, 2.0, 3.0])
    e = np.array([True, True, False])
    full = np.log(np.exp(r).sum())
    want = (full - r[0]) + (full - r[1])
    assert cox_pl_loss(r, (t, e)).data == pytest.approx(want, abs=1e-12)


def test_cox_no_events_raises():
    with pytest.raises(NoInformativePatients, match="no informative patients"):
        cox_pl_loss(np.zeros(3), (np.ones(3), np.zeros(3, bool)))


def test_cox_grad_check_three_subjects():
    t = np.array([1.0, 2.0, 3.0])
    e = np.array([True, False, True])
    rep = grad_check(lambda r: cox_pl_loss(r, (t, e)), np.array([0.2, -0.7, 1.3]))
    assert rep.max_rel_error < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50))
def test_cox_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    n = 8
    r = rng.normal(size=n)
    t = rng.exponential(size=n)
    e = rng.random(n) < 0.7
    e[0] = True
    a = cox_pl_loss(r, (t, e)).data
    b = cox_pl_loss(r + c, (t, e)).data
    assert abs(a - b) < 1e-9 * max(1.0, abs(a))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_cox_decreases_when_event_risk_rises(seed):
    rng = np.random.default_rng(seed)
    n = 6
    r = rng.normal(size=n)
    t = np.arange(1.0, n + 1)
    e = np.ones(n, bool)
    r2 = r.copy()
    r2[0] += 0.5   # earliest event: every other patient is in its risk set
    assert cox_pl_loss(r2, (t, e)).data < cox_pl_loss(r, (t, e)).data


# ------------------------------------------------------------------- censored ce


GRID = TimeGrid((0.0, 5.0, 10.0, 15.0))   # intervals [0,5) [5,10) [10,15) [15,inf)


def test_censored_ce_event_point_mass_is_zero():
    p = np.array([[0.0, 1.0, 0.0, 0.0]])
    assert censored_ce_loss(p, (np.array([7.0]), np.array([True])), GRID).data == pytest.approx(0.0)


def test_censored_ce_uniform_censored_first_interval():
    # censored at 5: interval [0,5) is the last one ended, so three of four remain
    p = np.full((1, 4), 0.25)
    loss = censored_ce_loss(p, (np.array([5.0]), np.array([False])), GRID)
    assert loss.data == pytest.approx(-math.log(0.75), abs=1e-12)


def test_censored_ce_in_last_interval_keeps_open_tail():
    # the unbounded interval never ends, so a late censoring still leaves it in the sum
    p = np.full((2, 4), 0.25)
    recs = (np.array([20.0, 3.0]), np.array([False, True]))
    loss = censored_ce_loss(p, recs, GRID)
    assert loss.data == pytest.approx(-math.log(0.25))


def test_censored_ce_logits_matches_probs():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(9, 4))
    t = rng.uniform(0.5, 14.0, size=9)
    e = rng.random(9) < 0.6
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    a = censored_ce_loss(p, (t, e), GRID).data
    b = censored_ce_from_logits(Tensor(logits), (t, e), GRID).data
    assert a == pytest.approx(b, rel=1e-12)


def test_censored_ce_grad_check():
    rng = np.random.default_rng(4)
    t = rng.uniform(0.5, 14.0, size=7)
    e = rng.random(7) < 0.5
    rep = grad_check(lambda z: censored_ce_from_logits(z, (t, e), GRID), rng.normal(size=(7, 4)))
    assert rep.max_rel_error < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_censored_ce_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(4), size=10)
    t = rng.uniform(0.1, 14.0, size=10)
    e = rng.random(10) < 0.5
    assert censored_ce_loss(p, (t, e), GRID).data >= 0.0


# --------------------------------------------------------------------- risk score


def test_risk_score_ordering():
    p = np.eye(4)[[0, 3]]
    r = risk_score(p, GRID)
    assert r[0] > r[1]


def test_risk_score_point_mass_midpoint():
    g = TimeGrid((0.0, 5.0, 15.0, 20.0))
    assert risk_score(np.array([[0, 1.0, 0, 0]]), g)[0] == pytest.approx(-10.0)


def test_risk_score_uniform_expectation():
    class Mids:
        def midpoints(self):
            return np.array([2.5, 7.5, 12.5, 17.5])
    assert risk_score(np.full((1, 4), 0.25), Mids())[0] == pytest.approx(-10.0)


def test_open_interval_midpoint():
    # last boundary 15 plus the median finite width 5
    assert np.allclose(GRID.midpoints(), [2.5, 7.5, 12.5, 20.0])
    assert risk_score(np.full((1, 4), 0.25), GRID)[0] == pytest.approx(-10.625)


def test_time_grid_quartiles_cover_training_times():
    rng = np.random.default_rng(0)
    t = rng.exponential(10, size=200)
    e = rng.random(200) < 0.7
    g = TimeGrid.from_event_quantiles(t, e, m=4)
    assert g.m == 4 and g.boundaries[0] == 0.0
    assert np.all(np.diff(g.boundaries) > 0)
    idx = g.interval_of(t)
    assert idx.min() >= 0 and idx.max() <= 3


# ------------------------------------------------------------------------ c-index


def test_cindex_perfect_and_ties():
    t = np.arange(1.0, 11.0)
    e = np.ones(10, bool)
    assert concordance_index(-t, (t, e)) == 1.0
    assert concordance_index(np.zeros(10), (t, e)) == 0.5


def test_cindex_no_pairs_raises():
    with pytest.raises(ValueError, match="no comparable pairs"):
        concordance_index([1.0, 2.0], (np.array([1.0, 2.0]), np.array([False, False])))


def test_cindex_matches_brute_force_n200():
    rng = np.random.default_rng(11)
    t = np.round(rng.exponential(10, size=200), 1)
    e = rng.random(200) > 0.3
    r = np.round(rng.normal(size=200), 1)
    assert concordance_index(r, (t, e)) == brute_cindex(r, t, e)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 60), st.floats(0.0, 0.5))
def test_cindex_matches_brute_force(seed, n, cens):
    rng = np.random.default_rng(seed)
    t = rng.integers(1, 12, size=n).astype(float)
    e = rng.random(n) >= cens
    e[0] = True
    t[0] = t.min()
    if np.all(t == t[0]) and e.all():
        t[1] += 1
    r = rng.integers(0, 5, size=n).astype(float)
    if brute_cindex_comparable(t, e) == 0:
        return
    assert concordance_index(r, (t, e)) == brute_cindex(r, t, e)


def brute_cindex_comparable(t, e):
    n = len(t)
    return sum(1 for i in range(n) for j in range(n)
               if i != j and e[i] and (t[i] < t[j] or (t[i] == t[j] and not e[j])))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_cindex_monotone_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    t = rng.exponential(size=40)
    e = rng.random(40) < 0.7
    e[np.argmin(t)] = True
    r = rng.normal(size=40)
    assert concordance_index(r, (t, e)) == concordance_index(np.exp(3 * r) + 1.0, (t, e))


# -------------------------------------------------------------------- KM / log-rank


def test_km_all_censored():
    km = kaplan_meier((np.array([1.0, 2.0]), np.array([False, False])))
    assert np.all(km([0.0, 1.0, 5.0]) == 1.0)


def test_km_three_events():
    km = kaplan_meier((np.array([1.0, 2.0, 3.0]), np.ones(3, bool)))
    assert km(0.5) == 1.0
    assert abs(km(1.0) - 2 / 3) < 1e-12
    assert abs(km(2.5) - 1 / 3) < 1e-12
    assert km(3.0) == 0.0


def test_km_with_censoring_between_events():
    km = kaplan_meier((np.array([1.0, 2.0, 1.5]), np.array([True, True, False])))
    assert abs(km(1.0) - 2 / 3) < 1e-12
    assert km(2.0) == 0.0


def test_km_six_subject_hand_table():
    t = np.array([1.0, 2.0, 2.0, 3.0, 4.0, 5.0])
    e = np.array([True, True, False, True, False, True])
    km = kaplan_meier((t, e))
    want = [1.0, 5 / 6, 5 / 6 * 4 / 5, 5 / 6 * 4 / 5 * 2 / 3, 0.0]
    got = km([0.0, 1.0, 2.0, 3.5, 5.0])
    assert np.max(np.abs(got - want)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_km_uncensored_equals_ecdf(seed):
    rng = np.random.default_rng(seed)
    t = rng.exponential(size=25)
    km = kaplan_meier((t, np.ones(25, bool)))
    grid = np.linspace(0, t.max() * 1.1, 50)
    ecdf = np.array([(t <= g).mean() for g in grid])
    s = km(grid)
    assert np.all(np.diff(s) <= 0)
    assert np.max(np.abs(1 - s - ecdf)) < 1e-12


def test_log_rank_six_subjects_hand_oracle():
    a = (np.array([1.0, 3.0, 5.0]), np.array([True, True, False]))
    b = (np.array([2.0, 4.0, 6.0]), np.array([True, True, True]))
    # (n, n_a, d, d_a) at event times 1, 2, 3, 4, 6
    table = [(6, 3, 1, 1), (5, 2, 1, 0), (4, 2, 1, 1), (3, 1, 1, 0), (1, 0, 1, 0)]
    O = sum(r[3] for r in table)
    E = sum(d * na / n for n, na, d, _ in table)
    V = sum(d * (na / n) * (1 - na / n) * (n - d) / (n - 1) for n, na, d, _ in table if n > 1)
    res = log_rank_test(a, b)
    assert abs(res.observed_a - O) < 1e-9
    assert abs(res.expected_a - E) < 1e-9
    assert abs(res.variance - V) < 1e-9
    assert abs(res.statistic - (O - E) ** 2 / V) < 1e-9
    assert log_rank_test(b, a).statistic == pytest.approx(res.statistic, abs=1e-12)


def test_log_rank_identical_groups():
    g = (np.array([1.0, 2.0, 3.0, 4.0]), np.array([True, False, True, True]))
    res = log_rank_test(g, g)
    assert res.statistic == pytest.approx(0.0, abs=1e-12)
    assert res.p_value == pytest.approx(1.0)


def test_log_rank_empty_group():
    with pytest.raises(ValueError):
        log_rank_test((np.array([]), np.array([], bool)), (np.array([1.0]), np.array([True])))


def test_bootstrap_ci_worker_independent():
    rng = np.random.default_rng(0)
    t = rng.exponential(size=80)
    e = rng.random(80) < 0.7
    r = -t + rng.normal(scale=0.5, size=80)
    metric = lambda idx: concordance_index(r[idx], (t[idx], e[idx]))
    lo1, hi1 = bootstrap_ci(metric, 80, seed=5, n_resamples=50)
    lo2, hi2 = bootstrap_ci(metric, 80, seed=5, n_resamples=50, workers=4)
    assert (lo1, hi1) == (lo2, hi2)
    assert lo1 <= concordance_index(r, (t, e)) <= hi1


# --------------------------------------------------------------------- aggregation


def test_aggregate_examples():
    a = LesionFeature(np.array([1.0, 2.0]), 1.0)
    b = LesionFeature(np.array([3.0, 0.0]), 1.0)
    assert np.array_equal(aggregate_lesions([a, b], "max"), [3.0, 2.0])
    assert np.array_equal(aggregate_lesions([a, b], "mean"), [2.0, 1.0])
    c = LesionFeature(np.array([0.0, 0.0]), 1.0)
    d = LesionFeature(np.array([4.0, 4.0]), 3.0)
    assert np.allclose(aggregate_lesions([c, d], "weighted"), [3.0, 3.0])


@pytest.mark.parametrize("strategy", ["max", "mean", "weighted"])
def test_single_lesion_identity(strategy):
    v = np.random.default_rng(1).normal(size=7)
    assert np.array_equal(aggregate_lesions([LesionFeature(v, 2.5)], strategy), v)


def test_aggregate_empty_raises():
    with pytest.raises(ValueError):
        aggregate_lesions([], "mean")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.floats(0.1, 100))
def test_weighted_equal_volumes_is_mean_bitwise(seed, k, vol):
    rng = np.random.default_rng(seed)
    les = [LesionFeature(rng.normal(size=5), vol) for _ in range(k)]
    assert np.array_equal(aggregate_lesions(les, "weighted"), aggregate_lesions(les, "mean"))


def _att_params(d=6, h=4, seed=0):
    return init_attention({}, d, h, np.random.default_rng(seed))


def test_attention_single_patch():
    v = np.random.default_rng(2).normal(size=(1, 6))
    pooled, w = attention_pool(v, _att_params())
    assert np.array_equal(w, [1.0])
    assert np.allclose(pooled, v[0])


def test_attention_zero_scores_is_average():
    p = _att_params()
    p["att.w"] = Tensor(np.zeros(4))
    x = np.random.default_rng(3).normal(size=(5, 6))
    pooled, w = attention_pool(x, p)
    assert np.allclose(w, 0.2)
    assert np.allclose(pooled, x.mean(axis=0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_attention_permutation(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(7, 6))
    perm = rng.permutation(7)
    p = _att_params(seed=seed)
    pooled, w = attention_pool(x, p)
    pooled2, w2 = attention_pool(x[perm], p)
    assert np.allclose(w2, w[perm], atol=1e-14)
    assert np.allclose(pooled2, pooled, atol=1e-12)
    assert abs(w.sum() - 1) < 1e-12


# ------------------------------------------------------------------ stratification


def test_stratify_median_split():
    s = stratify_risks([1.0, 2.0, 3.0, 4.0])
    assert list(s.low) == [0, 1] and list(s.high) == [2, 3]


def test_stratify_ties_go_low():
    s = stratify_risks([5.0] * 6)
    assert len(s.low) == 6 and len(s.high) == 0


def test_stratify_needs_two():
    with pytest.raises(ValueError):
        stratify_risks([1.0])


# ------------------------------------------------------------------------- training


@pytest.fixture(scope="module")
def small_cohort():
    return gen_cohort(CohortSpec(seed=3, n_patients=150, patches_per_lesion=16))


def test_train_cox_reproducible_and_beats_chance(small_cohort):
    pats = small_cohort.patients
    batch = PatientBatch.from_patients(pats)
    tr, va = np.arange(100), np.arange(100, 150)
    cfg = PrognosisConfig(head="cox", max_epochs=60, lr=1e-3)
    recs = (small_cohort.times, small_cohort.events)
    sub = lambda i: (recs[0][i], recs[1][i])
    m1 = train_prognosis(batch.subset(tr), sub(tr), cfg, val=batch.subset(va), val_records=sub(va))
    m2 = train_prognosis(batch.subset(tr), sub(tr), cfg, val=batch.subset(va), val_records=sub(va))
    r1 = m1.predict_risk(batch.subset(va))
    assert np.array_equal(r1, m2.predict_risk(batch.subset(va)))
    assert concordance_index(r1, sub(va)) > 0.6


def test_train_all_censored_raises(small_cohort):
    batch = PatientBatch.from_patients(small_cohort.patients[:20])
    with pytest.raises(ValueError, match="censored"):
        train_prognosis(batch, (small_cohort.times[:20], np.zeros(20, bool)), PrognosisConfig(max_epochs=2))


def test_checkpoint_roundtrip(small_cohort):
    batch = PatientBatch.from_patients(small_cohort.patients[:40])
    m = train_prognosis(batch, (small_cohort.times[:40], small_cohort.events[:40]),
                        PrognosisConfig(head="discrete", max_epochs=3))
    m2 = PrognosisModel.from_checkpoint(type(m.to_checkpoint()).from_bytes(m.to_checkpoint().to_bytes()))
    assert np.array_equal(m.predict_risk(batch), m2.predict_risk(batch))
    probs = m.predict_probs(batch)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_cohort_io_roundtrip(small_cohort, tmp_path):
    pats = small_cohort.patients[:10]
    write_cohort(pats, tmp_path / "c.csv", tmp_path / "c.npz")
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header.startswith("patient_id,endpoint,time_months,event,trg,volume_1")
    back = read_cohort(tmp_path / "c.csv", tmp_path / "c.npz")
    a = PatientBatch.from_patients(pats)
    b = PatientBatch.from_patients(back)
    assert np.array_equal(a.patches, b.patches) and np.array_equal(a.volumes, b.volumes)
    assert [p.record for p in back] == [p.record for p in pats]


# ---------------------------------------------------------------------------- TRG


def test_groupings():
    assert len(parse_grouping("1-2 vs 3-5")) == 2
    assert parse_grouping("1-2 vs 3 vs 4-5") == [[1, 2], [3], [4, 5]]
    assert all(len(parse_grouping(g)) in (2, 3) for g in GROUPINGS)
    with pytest.raises(ValueError):
        parse_grouping("1-2 vs 4-5")
    assert list(group_labels([1, 2, 3, 4, 5], "1-3 vs 4-5")) == [0, 0, 0, 1, 1]


def test_trg_from_composition(small_cohort):
    comp = small_cohort.compositions
    grades = small_cohort.trg
    m = train_trg(comp[:100], grades[:100], "1-2 vs 3-5", val_features=comp[100:], val_grades=grades[100:])
    cls, probs = predict_trg(comp[100:], m)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert probs.shape[1] == 2
    # no residual cancer -> the low grade group
    cls1, _ = predict_trg(np.array([[0.5, 0.3, 0.0, 0.05, 0.15]]), m)
    assert cls1[0] == 0
    with pytest.raises(ValueError, match="does not match"):
        predict_trg(comp[:3], m, grouping="1 vs 2-5")

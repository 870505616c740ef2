"""The pipeline stages behind each command; each reads and writes only files in the run directory."""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from ..distill import DistillData, TinyViT, comparison_report, train_distilled, write_report
from ..gradcore import ModelCheckpoint
from ..meanteacher import (MTModel, SSLComparison, apply_manifest, classification_map, compare_ssl,
                           extract_patches, label_fraction, read_manifest, stack_patches, write_manifest)
from ..plots import Series, write_chart
from ..prognosis import (GROUPINGS, PatientBatch, PrognosisModel, bootstrap_ci, concordance_index, group_labels,
                         label_fraction_curve, parse_grouping, predict_trg, read_cohort, stratify_risks,
                         train_prognosis, train_trg, write_cohort)
from ..stainlab import (StyleModel, cross_style_distance, estimate_stain_basis, lab_stats, macenko_normalize,
                        normalize_image, pcc, read_png, reinhard_normalize, ssim, to_gray, train_style_transfer,
                        write_png)
from ..synthdata import CANCER, SlideSpec, gen_cohort, gen_slide, split_indices
from .config import RunConfig
from .rundir import RunDir, read_table, write_table

SPLITS = ("train", "val", "test")


class MissingArtifacts(ValueError):
    pass
REFERENCE_SEED = 999


# ------------------------------------------------------------------------- helpers


def _write_mask(path, mask) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="L").save(path, format="PNG", optimize=False)


def _read_mask(path) -> np.ndarray:
    if not Path(path).exists():
        raise FileNotFoundError(str(path))
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.int64)


def _slide_specs(cfg: RunConfig) -> list:
    n = cfg.n_train_slides + cfg.n_test_slides
    seeds = np.random.SeedSequence([cfg.seed, 1]).generate_state(n)
    return [("train" if k < cfg.n_train_slides else "test", f"slide_{k}",
             SlideSpec(int(s), cfg.slide_size, cfg.slide_size, trg_grade=k % 5 + 1, pixel_noise=cfg.pixel_noise,
                       blob_sigma=cfg.blob_sigma)) for k, s in enumerate(seeds)]


def grouping_slug(grouping: str) -> str:
    """``"1-2 vs 3-5"`` -> ``"1to2_vs_3to5"``."""
    return "_vs_".join(part.strip().replace("-", "to") for part in grouping.split("vs"))


def _load_slides(run: RunDir, split: str, manifest=None) -> list:
    folder = run.data / "slides" / split
    run.require(folder)
    samples = []
    for png in sorted(folder.glob("slide_*.png")):
        if png.stem.endswith("_mask"):
            continue
        img = read_png(png)
        mask = _read_mask(png.with_name(png.stem + "_mask.png")) if manifest is None else None
        samples.extend(extract_patches(img, mask=mask, slide_id=png.stem))
    if not samples:
        raise ValueError(f"no slides found in {folder}")
    return apply_manifest(samples, manifest) if manifest is not None else samples


def load_cohort(run: RunDir) -> tuple:
    """``(patients, (train, val, test) index arrays)`` from the synthesized cohort files."""
    csv_path, side, split_path = run.data / "cohort.csv", run.data / "cohort.npz", run.data / "split.csv"
    run.require(csv_path, side, split_path)
    patients = read_cohort(csv_path, side)
    pos = {p.patient_id: i for i, p in enumerate(patients)}
    idx = {s: [] for s in SPLITS}
    for r in read_table(split_path):
        if r["split"] not in idx or r["patient_id"] not in pos:
            raise ValueError(f"{split_path}: bad row {r}")
        idx[r["split"]].append(pos[r["patient_id"]])
    return patients, tuple(np.array(idx[s], dtype=int) for s in SPLITS)


def _records(patients, idx) -> tuple:
    return (np.array([patients[i].record.time for i in idx], dtype=np.float64),
            np.array([patients[i].record.event for i in idx], dtype=bool))


def _batch(patients, idx) -> PatientBatch:
    return PatientBatch.from_patients([patients[i] for i in idx])


def _load(run: RunDir, name: str) -> ModelCheckpoint:
    path = run.checkpoints / name
    run.require(path)
    return ModelCheckpoint.load(path)


# ---------------------------------------------------------------------------- synth


def synth(run: RunDir, cfg: RunConfig) -> None:
    data = run.data
    # tissue slides with ground-truth masks, and the sparse label manifest for training slides
    train_patches = []
    for split, sid, spec in _slide_specs(cfg):
        folder = data / "slides" / split
        folder.mkdir(parents=True, exist_ok=True)
        img, mask = gen_slide(spec)
        write_png(folder / f"{sid}.png", img)
        _write_mask(folder / f"{sid}_mask.png", mask)
        if split == "train":
            train_patches.extend(extract_patches(img, mask=mask, slide_id=sid))
    write_manifest(label_fraction(train_patches, cfg.label_fraction, cfg.seed), data / "patches.csv")

    # unpaired style-training images plus paired held-out renderings for evaluation
    style = data / "style"
    (style / "train").mkdir(parents=True, exist_ok=True)
    (style / "pairs").mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence([cfg.seed, 2])
    seeds_a, seeds_b, seeds_p = (c.generate_state(max(cfg.style_images, cfg.style_pairs)) for c in ss.spawn(3))
    with open(style / "tumor_labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "tumor"])
        for i in range(cfg.style_images):
            g = i % 5 + 1
            a, m = gen_slide(SlideSpec(int(seeds_a[i]), cfg.style_size, cfg.style_size, trg_grade=g, blob_sigma=4.0))
            b, _ = gen_slide(SlideSpec(int(seeds_b[i]), cfg.style_size, cfg.style_size, trg_grade=g,
                                       stain_style="B", blob_sigma=4.0))
            write_png(style / "train" / f"a_{i:03d}.png", a)
            write_png(style / "train" / f"b_{i:03d}.png", b)
            w.writerow([f"a_{i:03d}.png", int(np.mean(m == CANCER) > 0.25)])
    for i in range(cfg.style_pairs):
        spec = SlideSpec(int(seeds_p[i]), 256, 256, trg_grade=i % 5 + 1)
        a, m = gen_slide(spec)
        b, _ = gen_slide(replace(spec, stain_style="B"))
        write_png(style / "pairs" / f"pair_{i:03d}_a.png", a)
        write_png(style / "pairs" / f"pair_{i:03d}_b.png", b)
        _write_mask(style / "pairs" / f"pair_{i:03d}_mask.png", m)
    ref, _ = gen_slide(SlideSpec(REFERENCE_SEED + cfg.seed, 256, 256))
    write_png(style / "reference.png", ref)

    # survival cohort and its fixed split
    cohort = gen_cohort(cfg.cohort())
    write_cohort(cohort.patients, data / "cohort.csv", data / "cohort.npz")
    parts = split_indices(len(cohort), cfg.seed)
    label = {int(i): s for s, idx in zip(SPLITS, parts) for i in idx}
    write_table(data / "split.csv", ("patient_id", "split"),
                [{"patient_id": p.patient_id, "split": label[i]} for i, p in enumerate(cohort.patients)])


# ------------------------------------------------------------------------ normalize


def normalize_file(method: str, src, dst, reference=None, checkpoint=None) -> None:
    """Normalize one PNG with Macenko or Reinhard (against ``reference``) or a trained style model."""
    img = read_png(src)
    if method == "style":
        if checkpoint is None:
            raise ValueError("--method style needs --checkpoint (or --run with a trained normalizer)")
        if not Path(checkpoint).exists():
            raise FileNotFoundError(str(checkpoint))
        out = normalize_image(StyleModel.from_checkpoint(ModelCheckpoint.load(checkpoint)), img)
    else:
        if reference is None:
            raise ValueError(f"--method {method} needs --reference")
        ref = read_png(reference)
        if method == "macenko":
            out = macenko_normalize(img, estimate_stain_basis(ref))[0]
        elif method == "reinhard":
            out = reinhard_normalize(img, lab_stats(ref))
        else:
            raise ValueError(f"unknown normalization method {method!r}")
    write_png(dst, out)


def _style_images(run: RunDir) -> tuple:
    folder = run.data / "style" / "train"
    labels_path = run.data / "style" / "tumor_labels.csv"
    run.require(folder, labels_path)
    rows = read_table(labels_path)
    a = np.stack([read_png(folder / r["image"]) for r in rows])
    b = np.stack([read_png(p) for p in sorted(folder.glob("b_*.png"))])
    return a, b, np.array([float(r["tumor"]) for r in rows])


def _pairs(run: RunDir) -> list:
    folder = run.data / "style" / "pairs"
    run.require(folder)
    out = []
    for pa in sorted(folder.glob("pair_*_a.png")):
        stem = pa.name[:-len("_a.png")]
        out.append((read_png(pa), read_png(folder / f"{stem}_b.png"), _read_mask(folder / f"{stem}_mask.png")))
    if not out:
        raise ValueError(f"no evaluation pairs in {folder}")
    return out


def normalize_run(run: RunDir, cfg: RunConfig) -> None:
    """Train the style normalizer on the run's unpaired images and normalize the held-out pairs."""
    a, b, lab = _style_images(run)
    model = train_style_transfer(a, b, lab, cfg.style(), curve_path=run.metrics / "style_curve.csv")
    model.to_checkpoint().save(run.checkpoints / "style.ckpt")
    for i, (pa, pb, _) in enumerate(_pairs(run)):
        write_png(run.normalized / f"pair_{i:03d}_a.png", normalize_image(model, pa))
        write_png(run.normalized / f"pair_{i:03d}_b.png", normalize_image(model, pb))


# ------------------------------------------------------------------------- classify


def train_classifier(run: RunDir, cfg: RunConfig) -> None:
    manifest = read_manifest(run.data / "patches.csv")
    train = _load_slides(run, "train", manifest)
    comp = compare_ssl(train, cfg.mean_teacher())
    comp.mean_teacher.to_checkpoint().save(run.checkpoints / "classifier.ckpt")
    comp.baseline.to_checkpoint().save(run.checkpoints / "classifier_supervised.ckpt")
    for png in sorted((run.data / "slides" / "test").glob("slide_*.png")):
        if png.stem.endswith("_mask"):
            continue
        cmap = classification_map(comp.mean_teacher, read_png(png))
        cmap.write(run.maps / f"{png.stem}.png", run.maps / f"{png.stem}.json")


# ------------------------------------------------------------------------ prognosis


def train_prognosis_stage(run: RunDir, cfg: RunConfig) -> None:
    patients, (tr, va, _) = load_cohort(run)
    for head in ("cox", "discrete"):
        model = train_prognosis(_batch(patients, tr), _records(patients, tr), cfg.prognosis(head),
                                val=_batch(patients, va), val_records=_records(patients, va))
        model.to_checkpoint().save(run.checkpoints / f"prognosis_{head}.ckpt")
    # tumor regression grade from pooled tissue composition, one model per grouping
    comp = lambda idx: np.stack([patients[i].composition for i in idx])
    grades = lambda idx: np.array([patients[i].trg for i in idx])
    for grouping in GROUPINGS:
        model = train_trg(comp(tr), grades(tr), grouping, val_features=comp(va), val_grades=grades(va))
        model.to_checkpoint().save(run.checkpoints / "trg" / f"{grouping_slug(grouping)}.ckpt")


def distill_stage(run: RunDir, cfg: RunConfig) -> None:
    patients, (tr, va, _) = load_cohort(run)
    teacher = PrognosisModel.from_checkpoint(_load(run, "prognosis_discrete.ckpt"))
    data = lambda idx: DistillData.from_patients([patients[i] for i in idx])
    kd = train_distilled(teacher, data(tr), cfg.distill(), val=data(va))
    kd.student.to_checkpoint().save(run.checkpoints / "tinyvit.ckpt")
    plain = train_distilled(None, data(tr), cfg.distill(), grid=teacher.grid, val=data(va))
    plain.student.to_checkpoint().save(run.checkpoints / "tinyvit_plain.ckpt")


# ------------------------------------------------------------------------- evaluate


METRIC_FILES = ("normalization.csv", "classification.csv", "concordance.csv", "label_fraction.csv", "km.csv",
                "logrank.csv", "trg.csv", "kd.csv")


def _normalization_rows(run: RunDir) -> list:
    pairs = _pairs(run)
    ref = read_png(run.data / "style" / "reference.png")
    style = StyleModel.from_checkpoint(_load(run, "style.ckpt"))
    basis, stats = estimate_stain_basis(ref), lab_stats(ref)
    methods = (("none", lambda im: im), ("reinhard", lambda im: reinhard_normalize(im, stats)),
               ("macenko", lambda im: macenko_normalize(im, basis)[0]),
               ("style", lambda im: normalize_image(style, im)))
    rows = []
    for name, f in methods:
        outs = [f(b) for _, b, _ in pairs]
        rows.append({"method": name, "cross_style_distance": cross_style_distance(pairs, f),
                     "ssim": float(np.mean([ssim(b, o) for (_, b, _), o in zip(pairs, outs)])),
                     "pcc": float(np.mean([pcc(to_gray(b), to_gray(o)) for (_, b, _), o in zip(pairs, outs)]))})
    return rows


def _classification_rows(run: RunDir) -> list:
    test = _load_slides(run, "test")
    x, y, _ = stack_patches(test)
    comp = SSLComparison(MTModel.from_checkpoint(_load(run, "classifier.ckpt")),
                         MTModel.from_checkpoint(_load(run, "classifier_supervised.ckpt")))
    return comp.rows(x, y)


def _ci(risks, te, seed, n) -> tuple:
    t, e = te
    return bootstrap_ci(lambda idx: concordance_index(risks[idx], (t[idx], e[idx])), len(risks), seed, n)


def evaluate(run: RunDir, cfg: RunConfig) -> None:
    patients, (tr, va, te) = load_cohort(run)
    te_rec = _records(patients, te)
    models = {h: PrognosisModel.from_checkpoint(_load(run, f"prognosis_{h}.ckpt")) for h in ("cox", "discrete")}
    test_batch = _batch(patients, te)
    # checked up front so a missing upstream artifact fails before any slow work
    for name in ("style.ckpt", "classifier.ckpt", "classifier_supervised.ckpt", "tinyvit.ckpt", "tinyvit_plain.ckpt"):
        run.require(run.checkpoints / name)

    write_table(run.metrics / "normalization.csv", ("method", "cross_style_distance", "ssim", "pcc"),
                _normalization_rows(run))
    write_table(run.metrics / "classification.csv", ("model", "accuracy", "macro_f1"), _classification_rows(run))

    conc = []
    oracle = np.array([patients[i].oracle_risk for i in te], dtype=np.float64)
    for name, risks in [("oracle", oracle)] + [(h, m.predict_risk(test_batch)) for h, m in models.items()]:
        lo, hi = _ci(risks, te_rec, cfg.seed, cfg.bootstrap)
        conc.append({"model": name, "c_index": concordance_index(risks, te_rec), "ci_low": lo, "ci_high": hi})
    write_table(run.metrics / "concordance.csv", ("model", "c_index", "ci_low", "ci_high"), conc)

    curve = label_fraction_curve(patients, (tr, va, te), cfg.prognosis(), cfg.label_fractions,
                                 seeds=tuple(range(cfg.seed, cfg.seed + cfg.curve_seeds)))
    write_table(run.metrics / "label_fraction.csv", ("fraction", "seed", "n_train", "c_index"), curve)

    strat = stratify_risks(models[cfg.head].predict_risk(test_batch), te_rec)
    km = []
    for group, curve_ in (("low", strat.km_low), ("high", strat.km_high)):
        km += [{"group": group, "time": float(t), "survival": float(s), "at_risk": int(n)}
               for t, s, n in zip(curve_.times, curve_.survival, curve_.at_risk)]
    write_table(run.metrics / "km.csv", ("group", "time", "survival", "at_risk"), km)
    write_table(run.metrics / "logrank.csv", ("head", "threshold", "n_low", "n_high", "statistic", "p_value"),
                [{"head": cfg.head, "threshold": strat.threshold, "n_low": len(strat.low),
                  "n_high": len(strat.high), "statistic": strat.statistic, "p_value": strat.p_value}])

    comp = np.stack([patients[i].composition for i in te])
    grades = np.array([patients[i].trg for i in te])
    trg_rows = []
    for grouping in GROUPINGS:
        model = PrognosisModel.from_checkpoint(_load(run, f"trg/{grouping_slug(grouping)}.ckpt"))
        pred, _ = predict_trg(comp, model, grouping)
        trg_rows.append({"grouping": grouping, "n_groups": len(parse_grouping(grouping)),
                         "accuracy": float(np.mean(pred == group_labels(grades, grouping)))})
    write_table(run.metrics / "trg.csv", ("grouping", "n_groups", "accuracy"), trg_rows)

    data = DistillData.from_patients([patients[i] for i in te])
    student = TinyViT.from_checkpoint(_load(run, "tinyvit.ckpt"))
    plain = TinyViT.from_checkpoint(_load(run, "tinyvit_plain.ckpt"))
    rows = comparison_report(models["discrete"], student, data, endpoint=cfg.endpoint, seed=cfg.seed,
                             n_resamples=cfg.bootstrap, extra={"tinyvit_plain": plain})
    write_report(rows, run.metrics / "kd.csv")


# --------------------------------------------------------------------------- report


def report(run: RunDir, cfg: RunConfig) -> Path:
    """Render figures and ``report.md`` from the metrics tables; every table must exist."""
    missing = [str(run.metrics / f) for f in METRIC_FILES if not (run.metrics / f).exists()]
    if missing:
        raise MissingArtifacts("missing upstream artifacts: " + ", ".join(missing))
    tables = {f: read_table(run.metrics / f) for f in METRIC_FILES}

    fr = sorted({float(r["fraction"]) for r in tables["label_fraction.csv"]})
    mean_c = [float(np.mean([float(r["c_index"]) for r in tables["label_fraction.csv"] if float(r["fraction"]) == f]))
              for f in fr]
    write_chart(run.figures / "label_fraction.svg", [Series("mean c-index", np.array(fr), np.array(mean_c))],
                "Held-out c-index by training fraction", "fraction of training patients", "c-index")
    series = []
    for group in ("low", "high"):
        rows = [r for r in tables["km.csv"] if r["group"] == group]
        series.append(Series(f"{group} risk", np.array([float(r["time"]) for r in rows]),
                             np.array([float(r["survival"]) for r in rows]), step=True))
    write_chart(run.figures / "km.svg", series, "Kaplan-Meier by median risk", "time (months)", "survival",
                ylim=(0.0, 1.0))

    lines = [f"# Run report (seed {cfg.seed})", ""]
    titles = {"normalization.csv": "Stain normalization", "classification.csv": "Tissue classification",
              "concordance.csv": "Survival concordance", "label_fraction.csv": "C-index by training fraction",
              "logrank.csv": "Risk stratification", "trg.csv": "Tumor regression grade",
              "kd.csv": "Distillation"}
    for f, title in titles.items():
        rows = tables[f]
        cols = list(rows[0].keys()) if rows else []
        lines += [f"## {title}", "", "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        lines += ["| " + " | ".join(r[c] for c in cols) + " |" for r in rows]
        lines.append("")
    lines += ["Figures: figures/label_fraction.svg, figures/km.svg (data in the .csv siblings).", ""]
    out = run.root / "report.md"
    out.write_text("\n".join(lines))
    return out

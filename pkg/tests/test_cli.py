import csv
import hashlib
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from histoprog.cli import RunConfig, resolve, run
from histoprog.cli.stages import METRIC_FILES, grouping_slug
from histoprog.kvconfig import parse_kv
from histoprog.plots import Series, write_chart
from histoprog.prognosis import GROUPINGS
from histoprog.stainlab import read_png, write_png

SMALL = {
    "n_patients": 150, "n_train_slides": 2, "n_test_slides": 2, "slide_size": 128, "style_images": 8,
    "style_size": 32, "style_pairs": 2, "style_epochs": 2, "style_fhat_steps": 20, "mt_epochs": 3,
    "prog_max_epochs": 30, "kd_epochs": 3, "bootstrap": 20,
}
PIPELINE = ("synth", "normalize", "train-classifier", "train-prognosis", "distill", "evaluate", "report")


def small_config(tmp: Path) -> Path:
    p = tmp / "small.kv"
    p.write_text("".join(f"{k}={v}\n" for k, v in SMALL.items()))
    return p


def tree_digest(root: Path, sub: str = "") -> dict:
    base = root / sub
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(base.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------------------- config


def test_config_defaults_cover_modules():
    cfg = RunConfig()
    assert cfg.mean_teacher().ema_decay == cfg.ema_decay
    assert cfg.prognosis("discrete").head == "discrete"
    assert cfg.distill().alpha1 == cfg.kd_alpha1
    assert cfg.label_fractions == (0.125, 0.25, 0.375, 0.5, 0.75, 1.0)


def test_config_resolution_order(tmp_path):
    f = tmp_path / "c.kv"
    f.write_text("seed=3\nhead=discrete\nkd_alpha1=0.25\n")
    cfg = resolve(f, ["kd_alpha1=0.75"], seed=9)
    assert (cfg.seed, cfg.head, cfg.kd_alpha1) == (9, "discrete", 0.75)


def test_config_rejects_unknown_and_invalid():
    with pytest.raises(ValueError, match="unknown config key"):
        resolve(None, ["learning_rate=1"])
    with pytest.raises(ValueError, match="head"):
        resolve(None, ["head=trg"])
    with pytest.raises(ValueError):
        resolve(None, ["label_fraction=0"])


def test_unknown_key_exit_code(tmp_path, capsys):
    assert run(["synth", "--run", str(tmp_path / "r"), "--set", "bogus=1"]) == 1
    assert "bogus" in capsys.readouterr().err


def test_bad_arguments_exit_code(capsys):
    assert run(["frobnicate"]) == 1
    assert run(["normalize", "--method", "nope", "--input", "x.png", "--output", "y.png"]) == 1


def test_grouping_slugs_unique():
    slugs = [grouping_slug(g) for g in GROUPINGS]
    assert len(set(slugs)) == len(slugs)
    assert grouping_slug("1-2 vs 3-5") == "1to2_vs_3to5"


# ---------------------------------------------------------------------------- synth


def test_synth_deterministic(tmp_path):
    cfg = small_config(tmp_path)
    for name in ("a", "b"):
        assert run(["synth", "--run", str(tmp_path / name), "--config", str(cfg), "--seed", "7"]) == 0
    da, db = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    assert da == db
    assert "data/cohort.npz" in da and "data/patches.csv" in da
    resolved = parse_kv((tmp_path / "a" / "config.resolved").read_text())
    assert resolved["seed"] == "7" and set(resolved) == set(RunConfig.__dataclass_fields__)


def test_synth_seed_changes_output(tmp_path):
    cfg = small_config(tmp_path)
    run(["synth", "--run", str(tmp_path / "a"), "--config", str(cfg), "--seed", "1"])
    run(["synth", "--run", str(tmp_path / "b"), "--config", str(cfg), "--seed", "2"])
    assert tree_digest(tmp_path / "a", "data") != tree_digest(tmp_path / "b", "data")


# ------------------------------------------------------------------------ normalize


def test_normalize_background_only(tmp_path, capsys):
    white = tmp_path / "white.png"
    write_png(white, np.ones((64, 64, 3)))
    code = run(["normalize", "--method", "macenko", "--input", str(white), "--output", str(tmp_path / "o.png"),
                "--reference", str(white)])
    assert code == 1
    assert "background-only image" in capsys.readouterr().err


def test_normalize_missing_input(tmp_path, capsys):
    missing = tmp_path / "nope.png"
    code = run(["normalize", "--method", "reinhard", "--input", str(missing), "--output", str(tmp_path / "o.png"),
                "--reference", str(missing)])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_normalize_single_image(tmp_path):
    from histoprog.synthdata import SlideSpec, gen_slide
    a, _ = gen_slide(SlideSpec(1, 64, 64))
    b, _ = gen_slide(SlideSpec(2, 64, 64, stain_style="B"))
    write_png(tmp_path / "a.png", a)
    write_png(tmp_path / "b.png", b)
    for method in ("reinhard", "macenko"):
        out = tmp_path / f"{method}.png"
        assert run(["normalize", "--method", method, "--input", str(tmp_path / "b.png"), "--output", str(out),
                    "--reference", str(tmp_path / "a.png")]) == 0
        assert read_png(out).shape == (64, 64, 3)
    assert run(["normalize", "--method", "style", "--input", str(tmp_path / "b.png"),
                "--output", str(tmp_path / "s.png")]) == 1


# --------------------------------------------------------------------- run directory


def test_missing_upstream_inputs(tmp_path, capsys):
    r = tmp_path / "r"
    assert run(["train-prognosis", "--run", str(r)]) == 1
    assert str(r / "data" / "cohort.csv") in capsys.readouterr().err


def test_report_fails_loudly(tmp_path, capsys):
    assert run(["report", "--run", str(tmp_path / "r")]) == 1
    err = capsys.readouterr().err
    for f in METRIC_FILES:
        assert f in err
    assert not (tmp_path / "r" / "report.md").exists()


def test_locked_run_directory(tmp_path, capsys):
    r = tmp_path / "r"
    r.mkdir()
    (r / ".lock").write_text("123\n")
    assert run(["synth", "--run", str(r)]) == 2
    assert "locked" in capsys.readouterr().err
    (r / ".lock").unlink()
    assert run(["synth", "--run", str(r), "--config", str(small_config(tmp_path))]) == 0
    assert not (r / ".lock").exists()


# --------------------------------------------------------------------------- plots


def test_chart_svg_and_csv(tmp_path):
    svg, data = write_chart(tmp_path / "c.svg", [Series("a", np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.5, 0.2]),
                                                        step=True)], "t", "x", "y")
    root = ET.fromstring(svg.read_text())
    assert root.tag.endswith("svg")
    rows = list(csv.reader(open(data)))
    assert rows[0] == ["series", "x", "y"] and len(rows) == 4


# ------------------------------------------------------------------------ end to end


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("e2e")
    cfg = small_config(tmp)
    roots = []
    for name in ("one", "two"):
        root = tmp / name
        codes = [run([c, "--run", str(root), "--config", str(cfg)]) for c in PIPELINE]
        roots.append((root, codes))
    return roots


@pytest.mark.slow
def test_pipeline_completes(pipeline_runs):
    root, codes = pipeline_runs[0]
    assert codes == [0] * len(PIPELINE)
    for f in METRIC_FILES:
        assert (root / "metrics" / f).exists()
    for fig in ("label_fraction", "km"):
        assert (root / "figures" / f"{fig}.svg").exists() and (root / "figures" / f"{fig}.csv").exists()
    assert (root / "report.md").exists()
    assert sorted(p.name for p in (root / "maps").glob("*.png")) == ["slide_2.png", "slide_3.png"]
    fractions = [float(r["fraction"]) for r in csv.DictReader(open(root / "metrics" / "label_fraction.csv"))]
    assert fractions == [0.125, 0.25, 0.375, 0.5, 0.75, 1.0]
    with open(root / "metrics" / "kd.csv") as fh:
        assert [r["model"] for r in csv.DictReader(fh)] == ["teacher", "tinyvit_kd", "tinyvit_plain"]


@pytest.mark.slow
def test_pipeline_log_one_line_per_epoch(pipeline_runs):
    root, _ = pipeline_runs[0]
    lines = (root / "log.txt").read_text().splitlines()
    assert lines and all(" epoch " in f" {ln} " for ln in lines)
    assert sum(ln.startswith("style epoch") for ln in lines) == SMALL["style_epochs"]


@pytest.mark.slow
def test_pipeline_metrics_byte_identical(pipeline_runs):
    (a, _), (b, _) = pipeline_runs
    assert tree_digest(a, "metrics") == tree_digest(b, "metrics")
    assert (a / "report.md").read_bytes() == (b / "report.md").read_bytes()
    assert tree_digest(a, "figures") == tree_digest(b, "figures")

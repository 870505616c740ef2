import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.color import lab2rgb, rgb2lab

from histoprog.gradcore import Tensor, frozen, grad_check, init_mlp
from histoprog.stainlab import (LabStats, StainBasis, StyleConfig, StyleModel, adversarial_losses, angle_deg,
                                cross_style_distance, estimate_stain_basis, feature_preserving_loss,
                                gray_normalize, kl_divergence, lab_stats, lab_to_rgb, load_lab_stats,
                                load_stain_basis, macenko_normalize, normalize_image, pcc, read_png,
                                recon_loss, reinhard_lab, reinhard_normalize, rgb_lab_roundtrip, rgb_to_lab,
                                save_json, ssim, train_style_transfer, write_png)
from histoprog.stainlab.style import DISC, FHAT_HEAD, FHAT_PIXEL, ZETA, colorize, discriminate
from histoprog.synthdata import STAIN_BASIS_A, SlideSpec, gen_slide, gen_style_dataset


def ssim_oracle(x, y, win=8, stride=4):
    """Loop over windows with the textbook formula."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for r in range(0, x.shape[0] - win + 1, stride):
        for c in range(0, x.shape[1] - win + 1, stride):
            a = x[r:r + win, c:c + win].ravel()
            b = y[r:r + win, c:c + win].ravel()
            ma, mb = a.mean(), b.mean()
            va, vb = a.var(), b.var()
            cov = ((a - ma) * (b - mb)).mean()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------- color


def test_lab_white_and_black():
    assert np.allclose(rgb_to_lab(np.ones(3)), [100, 0, 0], atol=1e-2)
    assert np.allclose(rgb_to_lab(np.zeros(3)), 0.0, atol=1e-12)


def test_lab_matches_skimage():
    img = np.random.default_rng(0).random((16, 16, 3))
    assert np.max(np.abs(rgb_to_lab(img) - rgb2lab(img))) < 1e-3
    lab = rgb_to_lab(img)
    assert np.max(np.abs(lab_to_rgb(lab) - lab2rgb(lab))) < 1e-4


def test_lab_roundtrip():
    img = np.random.default_rng(1).random((32, 32, 3))
    assert np.max(np.abs(rgb_lab_roundtrip(img) - img)) < 1e-6


# ------------------------------------------------------------------------- reinhard


def test_reinhard_idempotent():
    img, _ = gen_slide(SlideSpec(seed=1, height=64, width=64))
    assert np.max(np.abs(reinhard_normalize(img, lab_stats(img)) - img)) < 1e-6


def test_reinhard_shift_invariance():
    img, _ = gen_slide(SlideSpec(seed=2, height=64, width=64))
    target = LabStats((60.0, 10.0, -5.0), (12.0, 6.0, 4.0))
    lab = rgb_to_lab(img)
    lab[..., 0] -= 5.0
    shifted = lab_to_rgb(lab)
    assert np.allclose(reinhard_lab(shifted, target), reinhard_lab(img, target), atol=1e-6)


def test_reinhard_two_color_stats():
    img = np.zeros((8, 8, 3))
    img[:, :4] = (0.8, 0.3, 0.5)
    img[:, 4:] = (0.2, 0.6, 0.4)
    target = LabStats((50.0, 5.0, 3.0), (20.0, 8.0, 2.0))
    out = reinhard_lab(img, target).reshape(-1, 3)
    assert np.allclose(out.mean(axis=0), target.mean, atol=1e-6)
    assert np.allclose(out.std(axis=0), target.std, atol=1e-6)


def test_reinhard_degenerate():
    with pytest.raises(ValueError, match="degenerate channel"):
        reinhard_normalize(np.full((8, 8, 3), 0.5), LabStats((50, 0, 0), (1, 1, 1)))


def test_lab_stats_json_roundtrip(tmp_path):
    s = LabStats((50.0, 1.0, 2.0), (3.0, 4.0, 5.0))
    save_json(tmp_path / "s.json", s)
    assert load_lab_stats(tmp_path / "s.json") == s


# -------------------------------------------------------------------------- macenko


def test_macenko_recovers_generator_basis():
    img, _ = gen_slide(SlideSpec(seed=3, height=256, width=256, trg_grade=4))
    b = estimate_stain_basis(img)
    for k in range(2):
        assert angle_deg(b.vectors[k], STAIN_BASIS_A[k]) < 5.0


def test_macenko_self_normalization():
    img, _ = gen_slide(SlideSpec(seed=4, height=128, width=128))
    out, basis = macenko_normalize(img, estimate_stain_basis(img))
    assert np.max(np.abs(out - img).mean(axis=(0, 1))) < 0.01
    assert out.min() >= 0 and out.max() <= 1


def test_macenko_background_only():
    with pytest.raises(ValueError, match="background-only image"):
        estimate_stain_basis(np.ones((64, 64, 3)))


def test_stain_basis_validation(tmp_path):
    with pytest.raises(ValueError):
        StainBasis(np.array([[1.0, 0, 0], [1.0, 0, 0]]), np.ones(2))
    b = StainBasis(STAIN_BASIS_A, np.array([1.5, 1.2]))
    save_json(tmp_path / "b.json", b)
    b2 = load_stain_basis(tmp_path / "b.json")
    assert np.array_equal(b2.vectors, b.vectors) and np.array_equal(b2.max_conc, b.max_conc)


# --------------------------------------------------------------------------- metrics


def test_ssim_identity_and_oracle():
    rng = np.random.default_rng(5)
    x, y = rng.random((32, 32)), rng.random((32, 32))
    assert abs(ssim(x, x) - 1.0) < 1e-12
    assert ssim(x, y) == pytest.approx(ssim_oracle(x, y), abs=1e-12)
    assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-15)


def test_ssim_inverted_binary_negative():
    x = np.zeros((16, 16))
    x[:, 8:] = 1.0
    assert ssim(x, 1 - x) < 0


def test_ssim_shape_mismatch():
    with pytest.raises(ValueError):
        ssim(np.zeros((16, 16)), np.zeros((16, 20)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_ssim_rotation_and_bounds(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.random((24, 24)), rng.random((24, 24))
    s = ssim(x, y)
    assert abs(s - ssim(np.rot90(x), np.rot90(y))) < 1e-12
    assert -1 <= s <= 1


def test_pcc_examples():
    x = np.random.default_rng(6).random((10, 10, 3))
    assert pcc(x, x) == pytest.approx(1.0, abs=1e-12)
    assert pcc(x, 2.5 * x + 0.3) == pytest.approx(1.0, abs=1e-12)
    assert pcc(x, -x + 1) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError, match="constant image"):
        pcc(x, np.full_like(x, 0.2))


# ---------------------------------------------------------------------------- losses


def test_recon_loss_examples():
    img, _ = gen_slide(SlideSpec(seed=7, height=32, width=32))
    assert recon_loss(img, img).data == pytest.approx(0.0, abs=1e-12)
    noisy = np.clip(img + 0.01 * np.random.default_rng(0).normal(size=img.shape), 0, 1)
    assert 0 < recon_loss(img, noisy).data < 0.2


@pytest.mark.parametrize("seed", range(20))
def test_recon_loss_grad_check(seed):
    rng = np.random.default_rng(seed)
    orig = rng.random((1, 12, 12, 3))
    rep = grad_check(lambda g: recon_loss(orig, g), rng.random((1, 12, 12, 3)))
    assert rep.max_rel_error < 1e-4


def test_adversarial_examples():
    d, _ = adversarial_losses(Tensor(np.full(4, 0.5)), Tensor(np.full(4, 0.5)))
    assert d.data == pytest.approx(2 * math.log(2), abs=1e-12)
    d, _ = adversarial_losses(Tensor(np.array([0.99])), Tensor(np.array([0.01])))
    assert d.data == pytest.approx(-2 * math.log(0.99), abs=1e-12)
    d, g = adversarial_losses(Tensor(np.array([1.0])), Tensor(np.array([0.0])))
    assert np.isfinite(d.data) and np.isfinite(g.data)


@pytest.mark.parametrize("seed", range(20))
def test_generator_loss_grad_check(seed):
    rng = np.random.default_rng(seed)
    disc = frozen(init_mlp(DISC, rng))
    real = Tensor(rng.random((2, 8, 8, 3)))
    gray = rng.random((2, 8, 8))
    base = init_mlp(ZETA, rng)
    w0 = base["zeta.1.W"].data

    def g_loss(w):
        p = dict(base)
        p["zeta.1.W"] = w
        _, g = adversarial_losses(discriminate(disc, real), discriminate(disc, colorize(p, gray)))
        return g

    assert grad_check(g_loss, w0).max_rel_error < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_discriminator_loss_grad_check(seed):
    rng = np.random.default_rng(seed)
    r0, f0 = rng.uniform(0.05, 0.95, 6), rng.uniform(0.05, 0.95, 6)
    assert grad_check(lambda r: adversarial_losses(r, Tensor(f0))[0], r0).max_rel_error < 1e-4
    assert grad_check(lambda f: adversarial_losses(Tensor(r0), f)[0], f0).max_rel_error < 1e-4


def test_kl_closed_form():
    p = Tensor(np.log(np.array([[0.5, 0.5]])))
    q = Tensor(np.log(np.array([[0.9, 0.1]])))
    want = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    assert kl_divergence(p, q).data == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.5108, abs=1e-4)


def _fhat(rng):
    return frozen({**init_mlp(FHAT_PIXEL, rng), **init_mlp(FHAT_HEAD, rng)})


def test_fp_loss_identical_zero_and_nonnegative():
    rng = np.random.default_rng(8)
    fh = _fhat(rng)
    x = rng.random((3, 8, 8, 3))
    assert feature_preserving_loss(fh, x, x).data == pytest.approx(0.0, abs=1e-15)
    for _ in range(100):
        assert feature_preserving_loss(fh, rng.random((2, 8, 8, 3)), rng.random((2, 8, 8, 3))).data >= 0


@pytest.mark.parametrize("seed", range(20))
def test_fp_loss_grad_check(seed):
    rng = np.random.default_rng(seed)
    fh = _fhat(rng)
    ref = rng.random((2, 6, 6, 3))
    assert grad_check(lambda g: feature_preserving_loss(fh, ref, g), rng.random((2, 6, 6, 3))).max_rel_error < 1e-4


# ---------------------------------------------------------------------------- model


def test_gray_normalize_stats_and_constant():
    # two gray levels give z-scores of +-1, so nothing is clipped
    img = np.full((32, 32, 3), 0.3)
    img[:, 16:] = 0.5
    g = gray_normalize(img)
    assert g.mean() == pytest.approx(0.6, abs=1e-9) and g.std() == pytest.approx(0.2, abs=1e-9)
    assert np.all(gray_normalize(np.full((8, 8, 3), 0.4)) == 0.6)


@pytest.fixture(scope="module")
def small_style():
    a, b, lab = gen_style_dataset(seed=1, n_per_style=16, size=32)
    cfg = StyleConfig(epochs=4, fhat_steps=50, seed=3)
    return a, b, lab, cfg, train_style_transfer(a, b, lab, cfg)


def test_style_training_deterministic(small_style, tmp_path):
    a, b, lab, cfg, m1 = small_style
    m2 = train_style_transfer(a, b, lab, cfg, curve_path=tmp_path / "curve.csv")
    assert m1.to_checkpoint().digest() == m2.to_checkpoint().digest()
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "epoch,l_gan,l_recon,l_fp,total" and len(lines) == 5


def test_style_checkpoint_roundtrip(small_style):
    *_, m = small_style
    ck = m.to_checkpoint()
    m2 = StyleModel.from_checkpoint(type(ck).from_bytes(ck.to_bytes()))
    img = np.random.default_rng(0).random((16, 16, 3))
    assert np.array_equal(normalize_image(m, img), normalize_image(m2, img))


def test_normalize_constant_input(small_style):
    *_, m = small_style
    out = normalize_image(m, np.full((16, 16, 3), 0.3))
    assert np.all(out == out[0, 0]) and out.min() >= 0 and out.max() <= 1


def test_cross_style_identity_is_raw_distance():
    a, m = gen_slide(SlideSpec(seed=0, height=64, width=64))
    b, _ = gen_slide(SlideSpec(seed=0, height=64, width=64, stain_style="B"))
    assert cross_style_distance([(a, a, m)]) == 0.0
    assert cross_style_distance([(a, b, m)]) > 10.0


def test_png_roundtrip(tmp_path):
    img = np.random.default_rng(0).random((8, 8, 3))
    write_png(tmp_path / "x.png", img)
    back = read_png(tmp_path / "x.png")
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12
    with pytest.raises(FileNotFoundError):
        read_png(tmp_path / "missing.png")

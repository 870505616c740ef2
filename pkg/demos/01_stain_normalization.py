"""Stain normalization on synthetic slides.

A slide rendered in stain style B is mapped back toward style A three ways:
Reinhard (LAB statistics), Macenko (stain vectors from a reference) and, with
``--style``, the learned style-transfer normalizer. The score is the cross-style
distance: mean Delta-E between class colors of the A and B renderings after
normalization, so lower is better and 0 means the two styles became identical.

    python demos/01_stain_normalization.py            # seconds
    python demos/01_stain_normalization.py --style    # trains the normalizer, about 80 s
"""

import argparse

import numpy as np

from histoprog.stainlab import (angle_deg, cross_style_distance, estimate_stain_basis, lab_stats,
                                macenko_normalize, normalize_image, reinhard_normalize, ssim, train_style_transfer)
from histoprog.synthdata import STAIN_BASIS_A, SlideSpec, gen_slide, gen_style_dataset

parser = argparse.ArgumentParser()
parser.add_argument("--style", action="store_true", help="also train the style-transfer normalizer")
args = parser.parse_args()

# Macenko first: can the stain vectors be read back off a slide?
img, _ = gen_slide(SlideSpec(100, 256, 256, trg_grade=3))
est = estimate_stain_basis(img).vectors
print(f"hematoxylin vector off by {angle_deg(est[0], STAIN_BASIS_A[0]):.2f} deg, "
      f"eosin by {angle_deg(est[1], STAIN_BASIS_A[1]):.2f} deg")

# the same tissue in both styles, plus an unrelated style-A reference slide
pairs = []
for s in range(4):
    a, mask = gen_slide(SlideSpec(s, 256, 256, trg_grade=s + 1))
    b, _ = gen_slide(SlideSpec(s, 256, 256, trg_grade=s + 1, stain_style="B"))
    pairs.append((a, b, mask))
ref, _ = gen_slide(SlideSpec(999, 256, 256))
basis, stats = estimate_stain_basis(ref), lab_stats(ref)

methods = {
    "none": None,
    "reinhard": lambda im: reinhard_normalize(im, stats),
    "macenko": lambda im: macenko_normalize(im, basis)[0],
}
if args.style:
    a, b, labels = gen_style_dataset(seed=0)
    model = train_style_transfer(a, b, labels)
    methods["style"] = lambda im: normalize_image(model, im)

print(f"\n{'method':<10} {'distance':>9} {'ssim(B)':>8}")
for name, fn in methods.items():
    d = cross_style_distance(pairs, fn)
    s = 1.0 if fn is None else float(np.mean([ssim(b, fn(b)) for _, b, _ in pairs]))
    print(f"{name:<10} {d:9.2f} {s:8.3f}")

"""Patch tiling, augmentation, labeled-patch manifests and slide-level splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..synthdata.slides import CLASSES, N_CLASSES, SlideSpec, gen_slide

AUGMENT_MODES = ("rot90", "hflip", "identity")


@dataclass(frozen=True)
class PatchSample:
    """One ``size x size x 3`` tile; ``label`` is a class index or None when unlabeled."""

    pixels: np.ndarray
    label: int | None
    slide_id: str
    row: int
    col: int

    def __post_init__(self):
        if self.label is not None and not 0 <= int(self.label) < N_CLASSES:
            raise ValueError(f"label must be one of {N_CLASSES} classes, got {self.label}")
        if self.row < 0 or self.col < 0:
            raise ValueError(f"grid position must be nonnegative, got ({self.row}, {self.col})")


def grid_shape(height: int, width: int, size: int = 32, stride: int = 32) -> tuple:
    if size < 1 or stride < 1:
        raise ValueError("patch size and stride must be positive")
    if height < size or width < size:
        raise ValueError(f"slide {height}x{width} is smaller than one {size}x{size} patch")
    return (height - size) // stride + 1, (width - size) // stride + 1


def tile(slide: np.ndarray, size: int = 32, stride: int = 32) -> np.ndarray:
    """All tiles as an array of shape ``(rows, cols, size, size, C)``, row-major."""
    slide = np.asarray(slide, dtype=np.float64)
    rows, cols = grid_shape(slide.shape[0], slide.shape[1], size, stride)
    out = np.empty((rows, cols, size, size) + slide.shape[2:])
    for r in range(rows):
        for c in range(cols):
            out[r, c] = slide[r * stride:r * stride + size, c * stride:c * stride + size]
    return out


def majority_labels(mask: np.ndarray, size: int = 32, stride: int = 32) -> np.ndarray:
    """Most frequent mask class in each tile; ties go to the lower class index."""
    tiles = tile(np.asarray(mask)[..., None], size, stride)[..., 0].astype(int)
    rows, cols = tiles.shape[:2]
    flat = tiles.reshape(rows * cols, -1)
    counts = np.stack([(flat == k).sum(axis=1) for k in range(N_CLASSES)], axis=1)
    return counts.argmax(axis=1).reshape(rows, cols)


def extract_patches(slide, size: int = 32, stride: int = 32, *, mask=None, slide_id: str = "") -> list:
    """Tile ``slide`` row-major, dropping partial edge tiles.

    With a ground-truth ``mask`` each patch is labeled by its majority class.
    """
    tiles = tile(slide, size, stride)
    labels = majority_labels(mask, size, stride) if mask is not None else None
    rows, cols = tiles.shape[:2]
    return [PatchSample(tiles[r, c], None if labels is None else int(labels[r, c]), slide_id, r, c)
            for r in range(rows) for c in range(cols)]


def augment_pixels(pixels: np.ndarray, mode: str) -> np.ndarray:
    if mode == "rot90":
        return np.rot90(pixels, k=1, axes=(-3, -2))
    if mode == "hflip":
        return pixels[..., ::-1, :]
    if mode == "identity":
        return pixels
    raise ValueError(f"augmentation mode must be one of {AUGMENT_MODES}, got {mode!r}")


def augment_patch(p: PatchSample, mode: str) -> PatchSample:
    return replace(p, pixels=np.ascontiguousarray(augment_pixels(p.pixels, mode)))


def random_augment(batch: np.ndarray, rng: np.random.Generator, max_shift: int = 0) -> np.ndarray:
    """Independent random rotation (0-3 quarter turns) and flip per patch of an ``(N, S, S, C)`` batch.

    With ``max_shift`` > 0 each patch is also translated by up to that many pixels per axis,
    filling the uncovered border by reflection.
    """
    out = np.empty_like(batch)
    turns = rng.integers(0, 4, size=len(batch))
    flips = rng.random(len(batch)) < 0.5
    if max_shift > 0:
        shifts = rng.integers(-max_shift, max_shift + 1, size=(len(batch), 2))
        m = max_shift
        padded = np.pad(batch, ((0, 0), (m, m), (m, m), (0, 0)), mode="reflect")
        h, w = batch.shape[1:3]
    for i in range(len(batch)):
        x = batch[i]
        if max_shift > 0:
            dy, dx = shifts[i]
            x = padded[i, m + dy:m + dy + h, m + dx:m + dx + w]
        x = np.rot90(x, k=int(turns[i]), axes=(0, 1))
        out[i] = x[:, ::-1] if flips[i] else x
    return out


def stack_patches(samples) -> tuple:
    """``(pixels (N,S,S,3), labels (N,) with -1 for unlabeled, slide_ids)``."""
    samples = list(samples)
    if not samples:
        return np.zeros((0, 32, 32, 3)), np.zeros(0, dtype=int), []
    x = np.stack([s.pixels for s in samples])
    y = np.array([-1 if s.label is None else int(s.label) for s in samples], dtype=int)
    return x, y, [s.slide_id for s in samples]


def split_by_slide(samples, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> tuple:
    """Partition patches into train/val/test so no slide straddles two parts."""
    samples = list(samples)
    ids = sorted({s.slide_id for s in samples})
    order = np.random.default_rng(seed).permutation(len(ids))
    cuts = np.floor(np.cumsum(fractions)[:-1] / np.sum(fractions) * len(ids)).astype(int)
    groups = [set(ids[i] for i in part) for part in np.split(order, cuts)]
    return tuple([s for s in samples if s.slide_id in g] for g in groups)


def write_manifest(samples, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slide_id", "row", "col", "label"])
        for s in samples:
            w.writerow([s.slide_id, s.row, s.col, "" if s.label is None else CLASSES[s.label]])
    return path


def read_manifest(path) -> list:
    """Rows of ``(slide_id, row, col, label_index_or_None)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["slide_id", "row", "col", "label"]:
            raise ValueError(f"{path}: expected columns slide_id,row,col,label, got {reader.fieldnames}")
        for n, r in enumerate(reader, start=2):
            lab = r["label"].strip()
            if lab and lab not in CLASSES:
                raise ValueError(f"{path}:{n}: unknown label {lab!r}")
            out.append((r["slide_id"], int(r["row"]), int(r["col"]), CLASSES.index(lab) if lab else None))
    return out


def apply_manifest(patches, manifest) -> list:
    """Relabel ``patches`` from manifest rows; patches not listed become unlabeled."""
    labels = {(sid, r, c): lab for sid, r, c, lab in manifest}
    return [replace(p, label=labels.get((p.slide_id, p.row, p.col))) for p in patches]


def synthetic_patches(seed: int, n_train_slides: int = 4, n_test_slides: int = 12, size: int = 256,
                      pixel_noise: float = 0.1, blob_sigma: float = 40.0) -> tuple:
    """Labeled patches from seeded synthetic slides, split by slide: ``(train, test)``.

    Grades cycle through 1..5 so every class appears; slide ids are ``slide_<k>``.
    """
    seeds = np.random.SeedSequence(seed).generate_state(n_train_slides + n_test_slides)
    train, test = [], []
    for k, s in enumerate(seeds):
        img, mask = gen_slide(SlideSpec(int(s), size, size, trg_grade=k % 5 + 1, pixel_noise=pixel_noise,
                                        blob_sigma=blob_sigma))
        (train if k < n_train_slides else test).extend(extract_patches(img, mask=mask, slide_id=f"slide_{k}"))
    return train, test


def label_fraction(samples, fraction: float, seed: int, stratify: bool = False) -> list:
    """Keep labels on a random ``fraction`` of patches and hide the rest.

    With ``stratify`` the fraction is taken within each class (at least one patch per
    class present), so a small budget cannot miss a class entirely.
    """
    samples = list(samples)
    rng = np.random.default_rng(seed)
    if not stratify:
        n = int(round(fraction * len(samples)))
        keep = set(rng.permutation(len(samples))[:n].tolist())
    else:
        labels = np.array([-1 if s.label is None else s.label for s in samples])
        keep = set()
        for c in np.unique(labels[labels >= 0]):
            idx = np.flatnonzero(labels == c)
            n = max(1, int(round(fraction * len(idx))))
            keep.update(idx[rng.permutation(len(idx))[:n]].tolist())
    return [s if i in keep else replace(s, label=None) for i, s in enumerate(samples)]

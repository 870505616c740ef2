"""8-bit PNG images and JSON stain statistics."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .macenko import StainBasis
from .reinhard import LabStats


def read_png(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    with Image.open(p) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG", optimize=False)


def save_json(path, obj) -> None:
    data = obj.to_dict() if hasattr(obj, "to_dict") else obj
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def load_lab_stats(path) -> LabStats:
    return LabStats.from_dict(json.loads(Path(path).read_text()))


def load_stain_basis(path) -> StainBasis:
    return StainBasis.from_dict(json.loads(Path(path).read_text()))

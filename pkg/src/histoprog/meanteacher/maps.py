"""Per-patch classification maps with an indexed-PNG and JSON export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..synthdata.slides import CLASSES
from .model import MTModel
from .patches import tile

# normal, fibrosis, cancer, necrosis, background
MAP_PALETTE = ((0, 160, 0), (255, 220, 0), (220, 0, 0), (0, 0, 0), (255, 255, 255))


@dataclass(frozen=True)
class ClassificationMap:
    """One cell per patch: argmax class and full probability vector."""

    classes: np.ndarray
    probs: np.ndarray
    patch_size: int = 32
    stride: int = 32

    @property
    def shape(self) -> tuple:
        return self.classes.shape

    def to_dict(self) -> dict:
        return {"classes": list(CLASSES), "patch_size": self.patch_size, "stride": self.stride,
                "grid": list(self.shape), "probs": np.round(self.probs, 6).tolist()}

    def write(self, png_path, json_path=None) -> Path:
        """Indexed PNG (one pixel per patch, fixed palette) plus optional JSON probability sidecar."""
        img = Image.fromarray(self.classes.astype(np.uint8), mode="P")
        flat = [v for rgb in MAP_PALETTE for v in rgb]
        img.putpalette(flat + [0] * (768 - len(flat)))
        img.save(png_path, format="PNG", optimize=False)
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")
        return Path(png_path)


def read_map(png_path) -> np.ndarray:
    return np.asarray(Image.open(png_path)).astype(int)


def classification_map(model: MTModel, slide, size: int = 32, stride: int = 32) -> ClassificationMap:
    """Teacher predictions for every patch of ``slide`` with noise disabled."""
    tiles = tile(slide, size, stride)
    rows, cols = tiles.shape[:2]
    probs = model.predict_proba(tiles.reshape((rows * cols,) + tiles.shape[2:])).reshape(rows, cols, -1)
    return ClassificationMap(probs.argmax(axis=2), probs, size, stride)

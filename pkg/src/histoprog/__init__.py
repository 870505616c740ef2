"""Desk-scale histopathology prognosis pipeline: stain normalization, Mean Teacher
tissue classification, survival prediction and distillation into a tiny ViT."""

__version__ = "0.1.0"

"""Encoders mapping images and texts into a shared embedding space.

The primary encoder is CLIP ViT-B/32 through `transformers`; it is only
used when the weights are already available locally (no downloads at
export time). When it is not, a deterministic fallback encoder keeps the
tool usable offline: embeddings are fixed functions of the pixel/byte
content, so exports are reproducible, but they carry no semantics.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

CLIP_MODEL_NAME = "openai/clip-vit-base-patch32"
FALLBACK_DIM = 512
_PATCH = 16  # fallback thumbnail side length


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return m / norms


class FallbackEncoder:
    """Deterministic stand-in encoder.

    Images: square thumbnail pixels pushed through a fixed random
    projection with a tanh nonlinearity. Texts: rows seeded from the
    SHA-256 of the string, so equal strings encode identically across
    processes and platforms.
    """

    name = "fallback"

    def __init__(self, dim: int = FALLBACK_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        rng = np.random.default_rng(dim)
        n_px = _PATCH * _PATCH * 3
        self._proj = rng.normal(0.0, 1.0 / np.sqrt(n_px), size=(n_px, dim))

    def encode_images(self, images) -> np.ndarray:
        rows = []
        for img in images:
            small = img.convert("RGB").resize((_PATCH, _PATCH), Image.BILINEAR)
            px = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0
            rows.append(np.tanh((px - px.mean()) @ self._proj * 4.0))
        return _unit_rows(np.stack(rows))

    def encode_texts(self, texts) -> np.ndarray:
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "little")
            rows.append(np.random.default_rng(seed).normal(size=self.dim))
        return _unit_rows(np.stack(rows))


class ClipEncoder:
    """CLIP ViT-B/32 via transformers, greedy-deterministic settings."""

    name = "clip-vit-b32"

    def __init__(self):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self._model = CLIPModel.from_pretrained(CLIP_MODEL_NAME)
        self._model.eval()
        self._processor = CLIPProcessor.from_pretrained(CLIP_MODEL_NAME)
        self.dim = int(self._model.config.projection_dim)

    def encode_images(self, images) -> np.ndarray:
        inputs = self._processor(
            images=[img.convert("RGB") for img in images], return_tensors="pt"
        )
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return _unit_rows(feats.numpy().astype(np.float64))

    def encode_texts(self, texts) -> np.ndarray:
        inputs = self._processor(
            text=list(texts), return_tensors="pt", padding=True, truncation=True
        )
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return _unit_rows(feats.numpy().astype(np.float64))


def get_encoder(name: str = "auto"):
    """Resolve an encoder by name: 'clip-vit-b32', 'fallback', or 'auto'
    (CLIP when locally available, else fallback)."""
    if name == "fallback":
        return FallbackEncoder()
    if name in ("auto", "clip-vit-b32", ClipEncoder.name):
        try:
            return ClipEncoder()
        except Exception as e:  # model weights absent, transformers missing, ...
            if name != "auto":
                raise RuntimeError(f"CLIP encoder unavailable: {e}") from e
            log.warning("CLIP unavailable (%s); using the fallback encoder", e)
            return FallbackEncoder()
    raise ValueError(f"unknown encoder {name!r}")

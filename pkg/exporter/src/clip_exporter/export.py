"""Export logic: crop, encode, and write embedding files.

The manifest lists images with optional normalized boxes (the scene JSON
convention: [x1, y1, x2, y2] in [0, 1], origin top-left). Each (image,
box) pair becomes one embedding row; crops are padded to square before
encoding so aspect ratio does not distort the embedding.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import get_encoder
from .formats import ExportFormatError, write_embeddings

log = logging.getLogger(__name__)

FULL_IMAGE_BOX = [0.0, 0.0, 1.0, 1.0]


@dataclass
class ImageEntry:
    path: str
    boxes: list = field(default_factory=lambda: [list(FULL_IMAGE_BOX)])
    objectness: list | None = None

    def __post_init__(self):
        if not self.boxes:
            raise ExportFormatError(f"{self.path}: empty box list")
        for b in self.boxes:
            x1, y1, x2, y2 = b
            if not (0.0 <= x1 <= x2 <= 1.0 and 0.0 <= y1 <= y2 <= 1.0):
                raise ExportFormatError(f"{self.path}: box {b} out of bounds")
        if self.objectness is not None and len(self.objectness) != len(self.boxes):
            raise ExportFormatError(
                f"{self.path}: {len(self.objectness)} objectness values for "
                f"{len(self.boxes)} boxes"
            )


@dataclass
class ExportManifest:
    images: list  # ImageEntry
    encoder: str = "auto"

    @classmethod
    def from_dict(cls, d: dict) -> "ExportManifest":
        try:
            images = [
                ImageEntry(
                    path=e["path"],
                    boxes=e.get("boxes", [list(FULL_IMAGE_BOX)]),
                    objectness=e.get("objectness"),
                )
                for e in d["images"]
            ]
        except KeyError as e:
            raise ExportFormatError(f"manifest missing field {e.args[0]!r}") from e
        return cls(images=images, encoder=d.get("encoder", "auto"))

    @classmethod
    def load(cls, path) -> "ExportManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as e:
            raise ExportFormatError(f"{path}: invalid JSON: {e}") from e


def square_pad(img: Image.Image) -> Image.Image:
    """Pad with black to a centered square; no-op for square inputs."""
    w, h = img.size
    if w == h:
        return img
    side = max(w, h)
    out = Image.new("RGB", (side, side))
    out.paste(img.convert("RGB"), ((side - w) // 2, (side - h) // 2))
    return out


def crop_box(img: Image.Image, box) -> Image.Image:
    """Crop a normalized box out of the image; at least one pixel each way."""
    w, h = img.size
    x1, y1, x2, y2 = box
    px1, py1 = int(np.floor(x1 * w)), int(np.floor(y1 * h))
    px2, py2 = max(int(np.ceil(x2 * w)), px1 + 1), max(int(np.ceil(y2 * h)), py1 + 1)
    return img.crop((px1, py1, min(px2, w), min(py2, h)))


def export_image_embeddings(manifest: ExportManifest, out_path, encoder=None):
    """Crop, square-pad, encode, and write every (image, box) pair.

    Unreadable images are skipped with a logged warning; an export where
    nothing survives is an error. Returns the written matrix.
    """
    encoder = encoder or get_encoder(manifest.encoder)
    crops, meta = [], []
    for entry in manifest.images:
        try:
            img = Image.open(entry.path)
            img.load()
        except OSError as e:
            log.warning("skipping unreadable image %s: %s", entry.path, e)
            continue
        for i, box in enumerate(entry.boxes):
            crops.append(square_pad(crop_box(img, box)))
            meta.append(
                {
                    "path": entry.path,
                    "box": list(map(float, box)),
                    "objectness": (
                        float(entry.objectness[i]) if entry.objectness else None
                    ),
                }
            )
    if not crops:
        raise ExportFormatError("no readable image crops to export")
    matrix = encoder.encode_images(crops)
    write_embeddings(
        out_path, matrix, sidecar={"encoder": encoder.name, "rows": meta}
    )
    return matrix


def export_text_embeddings(texts, out_path, encoder=None, encoder_name: str = "auto"):
    """Encode a non-empty text list; the sidecar records the sources."""
    texts = [t for t in texts]
    if not texts:
        raise ExportFormatError("no texts to export")
    encoder = encoder or get_encoder(encoder_name)
    matrix = encoder.encode_texts(texts)
    write_embeddings(
        out_path, matrix, sidecar={"encoder": encoder.name, "texts": texts}
    )
    return matrix

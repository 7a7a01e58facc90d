"""Bridge real images and captions into the embedding-file format the
detection pipeline consumes.

Encodes image crops and texts with CLIP ViT-B/32 when the model is
available locally, otherwise with a deterministic fallback encoder, and
writes PLACEMB1 files plus JSON sidecars.
"""

from .encoders import FallbackEncoder, get_encoder
from .export import ExportManifest, export_image_embeddings, export_text_embeddings
from .formats import read_embeddings, write_embeddings

__all__ = [
    "ExportManifest",
    "FallbackEncoder",
    "export_image_embeddings",
    "export_text_embeddings",
    "get_encoder",
    "read_embeddings",
    "write_embeddings",
]

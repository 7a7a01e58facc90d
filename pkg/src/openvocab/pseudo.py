"""Region-proposal filtering and pseudo-label generation, including the two
baseline labelers used for ablations (nearest concept from a fixed pool, and
the raw image embedding itself).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Box, iou
from .errors import ConfigError, ShapeError
from .labeler import PlacModel
from .numerics import as_matrix
from .scoring import unit_normalize


@dataclass(frozen=True)
class Proposal:
    box: Box
    objectness: float
    image_embedding: np.ndarray

    def __post_init__(self):
        if not (0.0 <= self.objectness <= 1.0):
            raise ValueError(f"objectness {self.objectness} outside [0, 1]")


@dataclass(frozen=True)
class BaseAnnotation:
    box: Box
    concept_id: str


@dataclass(frozen=True)
class PseudoLabel:
    box: Box
    embedding: np.ndarray
    source_objectness: float


def filter_proposals(proposals, base_boxes, iou_max: float = 0.7, obj_min: float = 0.2):
    """Drop proposals that compete with annotated objects or look like
    background.

    A proposal is discarded when its max IoU against any base box is
    strictly greater than iou_max, or its objectness is strictly smaller
    than obj_min. Both comparisons are strict on purpose: boundary values
    are kept. Order is preserved; the result is a subsequence of the input.
    """
    if not (0.0 <= iou_max <= 1.0 and 0.0 <= obj_min <= 1.0):
        raise ConfigError("filter thresholds must lie in [0, 1]")
    kept = []
    for p in proposals:
        if p.objectness < obj_min:
            continue
        max_iou = max((iou(p.box, b) for b in base_boxes), default=0.0)
        if max_iou > iou_max:
            continue
        kept.append(p)
    return kept


def generate_pseudo_labels(model: PlacModel, proposals):
    """One pseudo-label per proposal: the learned map applied to the
    proposal's image embedding, box carried through unchanged."""
    if not proposals:
        return []
    embs = as_matrix([p.image_embedding for p in proposals], "proposal embeddings")
    mapped = model.apply(embs)
    return [
        PseudoLabel(p.box, mapped[i], p.objectness) for i, p in enumerate(proposals)
    ]


def concept_pool_label(proposals, pool):
    """Baseline labeler: nearest pool embedding by cosine similarity.

    Cannot represent concepts absent from the pool, which is exactly the
    limitation the learned labeler removes.
    """
    pool = as_matrix(pool, "pool")
    if pool.shape[0] == 0:
        raise ConfigError("concept pool is empty")
    if not proposals:
        return []
    embs = as_matrix([p.image_embedding for p in proposals], "proposal embeddings")
    if embs.shape[1] != pool.shape[1]:
        raise ShapeError("proposal/pool embedding dimensions differ")
    sims = unit_normalize(embs, axis=1) @ unit_normalize(pool, axis=1).T
    nearest = np.argmax(sims, axis=1)
    return [
        PseudoLabel(p.box, pool[nearest[i]].copy(), p.objectness)
        for i, p in enumerate(proposals)
    ]


def image_embed_label(proposals):
    """Baseline labeler: the proposal's own image embedding, unchanged."""
    return [
        PseudoLabel(p.box, np.array(p.image_embedding, dtype=np.float64), p.objectness)
        for p in proposals
    ]

"""Planted synthetic embedding world.

Stands in for a vision-language embedding space plus detection scenes: unit
concept anchors in image space, a frozen nonlinear ground-truth map g from
image space to text space (so the labeler has a real function to learn), a
frozen linear feature map f from (embedding, box) to detector features, and
configurable noise at every stage. Everything is deterministic under seeds,
which makes each pipeline stage testable against known ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Box
from .errors import ConfigError
from .labeler import PairBatch
from .pseudo import BaseAnnotation, Proposal
from .scoring import unit_normalize

MAX_ANCHOR_COSINE = 0.95
_ANCHOR_RETRIES = 1000


@dataclass
class NoiseConfig:
    sigma_pair: float = 0.05  # image-embedding jitter around concept anchors
    sigma_text: float = 0.01  # text-side noise on top of g(e_image)
    sigma_region: float = 0.02  # proposal image-embedding jitter
    sigma_feature: float = 0.0  # detector-feature noise

    def validate(self):
        for v in (self.sigma_pair, self.sigma_text, self.sigma_region, self.sigma_feature):
            if v < 0:
                raise ConfigError("noise scales must be non-negative")


@dataclass
class Concept:
    id: str
    anchor_image: np.ndarray  # unit vector in image space
    anchor_text: np.ndarray  # unit vector in text space, = normalize(g(anchor_image))
    is_novel: bool


@dataclass
class World:
    dim: int
    feature_dim: int
    seed: int
    concepts: list
    g_w1: np.ndarray
    g_b1: np.ndarray
    g_w2: np.ndarray
    f_matrix: np.ndarray  # (dim + 4) x feature_dim
    noise: NoiseConfig

    @property
    def base_concepts(self):
        return [c for c in self.concepts if not c.is_novel]

    @property
    def novel_concepts(self):
        return [c for c in self.concepts if c.is_novel]

    def concept(self, concept_id: str) -> Concept:
        for c in self.concepts:
            if c.id == concept_id:
                return c
        raise KeyError(concept_id)

    def text_anchors(self, base_only: bool = False) -> dict:
        return {
            c.id: c.anchor_text
            for c in self.concepts
            if not (base_only and c.is_novel)
        }

    def ground_truth_map(self, image_embeddings) -> np.ndarray:
        """The planted map g (2-layer tanh net), applied row-wise."""
        x = np.atleast_2d(np.asarray(image_embeddings, dtype=np.float64))
        return np.tanh(x @ self.g_w1 + self.g_b1) @ self.g_w2

    def features_of(self, image_embeddings, boxes, rng=None) -> np.ndarray:
        """Detector features: f of (embedding, box coords), plus noise."""
        embs = np.atleast_2d(np.asarray(image_embeddings, dtype=np.float64))
        coords = np.stack([b.to_array() for b in boxes])
        feats = np.concatenate([embs, coords], axis=1) @ self.f_matrix
        if rng is not None and self.noise.sigma_feature > 0:
            feats = feats + rng.normal(0.0, self.noise.sigma_feature, feats.shape)
        return feats

    def oracle_labeler(self) -> "OracleLabeler":
        return OracleLabeler(self)


@dataclass
class OracleLabeler:
    """Pseudo-labeler that applies the planted map exactly (test oracle)."""

    world: World

    @property
    def dim(self) -> int:
        return self.world.dim

    def apply(self, image_embeddings) -> np.ndarray:
        return self.world.ground_truth_map(image_embeddings)


@dataclass
class SceneObject:
    box: Box
    concept_id: str
    is_novel: bool


@dataclass
class Scene:
    objects: list  # SceneObject
    base_annotations: list  # BaseAnnotation, exactly the base-concept objects
    proposals: list  # Proposal, object-derived then distractors
    features: np.ndarray  # one row per proposal
    rec_queries: list  # (query text embedding, target Box)


def _sample_separated_anchors(rng, n, d):
    anchors = []
    for _ in range(n):
        for _attempt in range(_ANCHOR_RETRIES):
            v = unit_normalize(rng.normal(size=d))
            if all(abs(float(v @ a)) < MAX_ANCHOR_COSINE for a in anchors):
                anchors.append(v)
                break
        else:
            raise ConfigError(
                f"could not place {n} anchors with pairwise cosine < {MAX_ANCHOR_COSINE} in dim {d}"
            )
    return anchors


def _orthogonal(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def make_world(
    seed: int,
    d: int = 32,
    n_base: int = 20,
    n_novel: int = 10,
    noise: NoiseConfig | None = None,
    feature_dim: int | None = None,
    g_gain: float = 3.0,
) -> World:
    """Build a world; deterministic under seed.

    Image-space anchors are sampled on the sphere with accept/reject for the
    pairwise-cosine separation invariant; text anchors are their images
    under g, renormalized, and must satisfy the same separation.
    """
    if d < 8:
        raise ConfigError("embedding dimension must be at least 8")
    if n_base < 1 or n_novel < 1:
        raise ConfigError("need at least one base and one novel concept")
    noise = noise or NoiseConfig()
    noise.validate()
    feature_dim = feature_dim or d + 8
    if feature_dim < d + 4:
        raise ConfigError("feature_dim must be at least d + 4 (f must not lose rank)")

    if g_gain <= 0:
        raise ConfigError("g_gain must be positive")
    rng = np.random.default_rng(seed)
    # g: frozen 2-layer tanh net with orthogonal weights. The input gain sets
    # how nonlinear the map is on the unit sphere; it has to be high enough
    # that a head fit on the base anchors alone cannot extrapolate to the
    # novel anchors, otherwise pseudo-labels would have nothing to add.
    g_w1 = _orthogonal(rng, d) * g_gain
    g_b1 = rng.normal(0.0, 0.1, size=d)
    g_w2 = _orthogonal(rng, d)
    f_matrix = rng.normal(0.0, 1.0 / np.sqrt(d + 4), size=(d + 4, feature_dim))

    for _attempt in range(50):
        image_anchors = _sample_separated_anchors(rng, n_base + n_novel, d)
        raw = np.tanh(np.stack(image_anchors) @ g_w1 + g_b1) @ g_w2
        text_anchors = unit_normalize(raw, axis=1)
        cos = text_anchors @ text_anchors.T
        np.fill_diagonal(cos, 0.0)
        if np.abs(cos).max() < MAX_ANCHOR_COSINE:
            break
    else:
        raise ConfigError("could not satisfy text-anchor separation; lower n or raise d")

    concepts = []
    for i in range(n_base + n_novel):
        novel = i >= n_base
        prefix = "novel" if novel else "base"
        concepts.append(
            Concept(
                id=f"{prefix}_{i - n_base if novel else i:02d}",
                anchor_image=image_anchors[i],
                anchor_text=text_anchors[i],
                is_novel=novel,
            )
        )
    return World(
        dim=d,
        feature_dim=feature_dim,
        seed=seed,
        concepts=concepts,
        g_w1=g_w1,
        g_b1=g_b1,
        g_w2=g_w2,
        f_matrix=f_matrix,
        noise=noise,
    )


def sample_pairs(world: World, n: int, seed: int = 0) -> PairBatch:
    """Image-text embedding pairs drawn around concept anchors (both base
    and novel concepts: caption-style data covers the open vocabulary)."""
    if n < 2:
        raise ConfigError("need at least 2 pairs")
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, len(world.concepts), size=n)
    anchors = np.stack([world.concepts[i].anchor_image for i in ids])
    image = anchors + rng.normal(0.0, world.noise.sigma_pair, size=(n, world.dim))
    text = world.ground_truth_map(image)
    if world.noise.sigma_text > 0:
        text = text + rng.normal(0.0, world.noise.sigma_text, size=text.shape)
    return PairBatch(image, text)


def _random_box(rng, min_size=0.12, max_size=0.35) -> Box:
    w = rng.uniform(min_size, max_size)
    h = rng.uniform(min_size, max_size)
    cx = rng.uniform(w / 2, 1.0 - w / 2)
    cy = rng.uniform(h / 2, 1.0 - h / 2)
    return Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def _jitter_box(rng, box: Box, amount: float) -> Box:
    c = box.to_array() + rng.uniform(-amount, amount, size=4)
    c[0] = min(max(c[0], 0.0), 1.0)
    c[1] = min(max(c[1], 0.0), 1.0)
    c[2] = min(max(c[2], c[0]), 1.0)
    c[3] = min(max(c[3], c[1]), 1.0)
    return Box.from_array(c)


def sample_scene(
    world: World,
    n_objects: int = 5,
    n_distractors: int = 3,
    novel_fraction: float = 0.4,
    seed: int = 0,
    jitter: float = 0.005,
) -> Scene:
    """One image's worth of planted data.

    Objects carry distinct concepts (so referring queries are unambiguous);
    base-concept objects are annotated, novel ones are not. Each object
    yields one tightly jittered high-objectness proposal; distractors are
    random low-objectness background boxes.
    """
    if n_objects < 0 or n_distractors < 0:
        raise ConfigError("counts must be non-negative")
    if not (0.0 <= novel_fraction <= 1.0):
        raise ConfigError("novel_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)

    n_novel_obj = min(int(round(novel_fraction * n_objects)), len(world.novel_concepts))
    n_base_obj = min(n_objects - n_novel_obj, len(world.base_concepts))
    base_pick = rng.choice(len(world.base_concepts), size=n_base_obj, replace=False)
    novel_pick = rng.choice(len(world.novel_concepts), size=n_novel_obj, replace=False)
    chosen = [world.base_concepts[i] for i in base_pick] + [
        world.novel_concepts[i] for i in novel_pick
    ]

    objects, annotations, proposals = [], [], []
    for concept in chosen:
        box = _random_box(rng)
        objects.append(SceneObject(box, concept.id, concept.is_novel))
        if not concept.is_novel:
            annotations.append(BaseAnnotation(box, concept.id))
        emb = concept.anchor_image + rng.normal(
            0.0, world.noise.sigma_region, size=world.dim
        )
        proposals.append(
            Proposal(_jitter_box(rng, box, jitter), float(rng.uniform(0.7, 0.98)), emb)
        )
    for _ in range(n_distractors):
        emb = rng.normal(0.0, 1.0 / np.sqrt(world.dim), size=world.dim)
        proposals.append(
            Proposal(_random_box(rng), float(rng.uniform(0.0, 0.15)), emb)
        )

    if proposals:
        features = world.features_of(
            np.stack([p.image_embedding for p in proposals]),
            [p.box for p in proposals],
            rng=rng,
        )
    else:
        features = np.zeros((0, world.feature_dim))

    rec_queries = [
        (world.concept(o.concept_id).anchor_text.copy(), o.box) for o in objects
    ]
    return Scene(objects, annotations, proposals, features, rec_queries)


def sample_scenes(world: World, n_scenes: int, seed: int = 0, **kwargs) -> list:
    """n deterministic scenes; scene i uses derived seed (seed, i)."""
    root = np.random.default_rng(seed)
    seeds = root.integers(0, 2**63 - 1, size=n_scenes)
    return [sample_scene(world, seed=int(s), **kwargs) for s in seeds]

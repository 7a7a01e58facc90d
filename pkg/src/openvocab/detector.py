"""Toy set-prediction detector for open-vocabulary training.

Per-proposal MLP heads replace the transformer machinery of full detectors:
an embedding head maps proposal features to region embeddings in the joint
text space, a box head regresses boxes. Supervision is exactly the matched
contract: alignment (BCE on the scaled-cosine probability) for matched
pairs from both matching stages, box regression for annotated matches only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import Box, giou_with_grad, l1_grad, l1_distance
from .errors import ConfigError, EvaluationError, NumericError, ShapeError
from .matcher import MatchConfig, MatchResult, MatchWeights, two_stage_match
from .numerics import (
    Mlp,
    OptimizerState,
    adamw_step,
    as_matrix,
    cosine_lr,
    mlp_backward,
    mlp_forward,
)
from .scoring import DEFAULT_ALPHA, DEFAULT_BETA, classify_prob, classify_prob_matrix, sigmoid


@dataclass
class Vocabulary:
    """Concept ids with unit text embeddings and a novel/base flag."""

    ids: list
    embeddings: np.ndarray  # unit rows
    is_novel: list

    def __post_init__(self):
        self.embeddings = as_matrix(self.embeddings, "vocabulary embeddings")
        if len(self.ids) != self.embeddings.shape[0] or len(self.ids) != len(self.is_novel):
            raise ShapeError("vocabulary fields have inconsistent lengths")
        if len(set(self.ids)) != len(self.ids):
            raise ConfigError("vocabulary ids must be unique")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ConfigError("vocabulary embeddings must be unit-normalized")

    @classmethod
    def from_world(cls, world, base_only: bool = False) -> "Vocabulary":
        concepts = [c for c in world.concepts if not (base_only and c.is_novel)]
        return cls(
            ids=[c.id for c in concepts],
            embeddings=np.stack([c.anchor_text for c in concepts]),
            is_novel=[c.is_novel for c in concepts],
        )

    def concept_map(self) -> dict:
        return {cid: self.embeddings[i] for i, cid in enumerate(self.ids)}

    def base_subset(self) -> "Vocabulary":
        keep = [i for i, nov in enumerate(self.is_novel) if not nov]
        return Vocabulary(
            [self.ids[i] for i in keep],
            self.embeddings[keep],
            [False] * len(keep),
        )


@dataclass(frozen=True)
class Detection:
    box: Box
    concept_id: str
    score: float


@dataclass
class DetectorModel:
    embed_head: Mlp  # feature dim -> d
    box_head: Mlp  # feature dim -> 4 (sigmoid -> cx, cy, w, h)
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.embed_head.in_dim != self.box_head.in_dim:
            raise ShapeError("heads disagree on the feature dimension")
        if self.box_head.out_dim != 4:
            raise ShapeError("box head must produce 4 coordinates")

    @property
    def feature_dim(self) -> int:
        return self.embed_head.in_dim

    @property
    def embed_dim(self) -> int:
        return self.embed_head.out_dim

    def forward(self, features):
        """Region embeddings plus unclipped xyxy boxes; caches for backprop."""
        feats = as_matrix(features, "features")
        regions, cache_e = mlp_forward(self.embed_head, feats)
        raw, cache_b = mlp_forward(self.box_head, feats)
        s = sigmoid(raw)  # (cx, cy, w, h) in (0, 1)
        boxes = np.empty_like(s)
        boxes[:, 0] = s[:, 0] - s[:, 2] / 2.0
        boxes[:, 1] = s[:, 1] - s[:, 3] / 2.0
        boxes[:, 2] = s[:, 0] + s[:, 2] / 2.0
        boxes[:, 3] = s[:, 1] + s[:, 3] / 2.0
        return regions, boxes, (cache_e, cache_b, s)

    def backward_boxes(self, cache, grad_boxes) -> np.ndarray:
        """Map dLoss/d(xyxy) back to the box head's pre-sigmoid outputs."""
        _, _, s = cache
        g = np.empty_like(grad_boxes)
        g[:, 0] = grad_boxes[:, 0] + grad_boxes[:, 2]  # cx
        g[:, 1] = grad_boxes[:, 1] + grad_boxes[:, 3]  # cy
        g[:, 2] = (grad_boxes[:, 2] - grad_boxes[:, 0]) / 2.0  # w
        g[:, 3] = (grad_boxes[:, 3] - grad_boxes[:, 1]) / 2.0  # h
        return g * s * (1.0 - s)


def clip_box(coords) -> Box:
    c = np.clip(np.asarray(coords, dtype=np.float64), 0.0, 1.0)
    return Box(float(c[0]), float(c[1]), float(max(c[0], c[2])), float(max(c[1], c[3])))


def alignment_loss(
    region_embeddings,
    match: MatchResult,
    base_annotations,
    vocabulary: Vocabulary,
    pseudo_labels,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    unmatched_negatives: bool = False,
    pseudo_negatives: bool = False,
):
    """BCE over (query, target-embedding) pairs.

    Positives: stage-1 queries with their annotation's concept embedding,
    stage-2 queries with their (normalized) pseudo embedding. Negatives:
    matched queries against every base concept other than their own match;
    with pseudo_negatives set, stage-2 queries are additionally repelled
    from the other pseudo embeddings in the scene (the base-concept BCE
    saturates early, so nothing else separates co-occurring pseudo targets).
    Queries left unmatched by both stages carry no loss unless
    unmatched_negatives is set. Returns (loss, grad wrt region embeddings).
    """
    regions = as_matrix(region_embeddings, "region_embeddings")
    nq, d = regions.shape
    base_vocab = vocabulary.base_subset()
    concept_of = base_vocab.concept_map()

    # (query, unit target, label) terms
    terms = []
    for q, j in match.stage1:
        if not (0 <= q < nq and 0 <= j < len(base_annotations)):
            raise ShapeError("stage-1 match index out of range")
        cid = base_annotations[j].concept_id
        if cid not in concept_of:
            raise ConfigError(f"annotation concept {cid!r} missing from vocabulary")
        terms.append((q, concept_of[cid], 1.0))
        for other_id, emb in concept_of.items():
            if other_id != cid:
                terms.append((q, emb, 0.0))
    for q, j in match.stage2:
        if not (0 <= q < nq and 0 <= j < len(pseudo_labels)):
            raise ShapeError("stage-2 match index out of range")
        target = np.asarray(pseudo_labels[j].embedding, dtype=np.float64)
        norm = np.linalg.norm(target)
        if norm == 0.0:
            raise NumericError("zero-norm pseudo embedding")
        terms.append((q, target / norm, 1.0))
        for emb in concept_of.values():
            terms.append((q, emb, 0.0))
        if pseudo_negatives:
            for k, pl in enumerate(pseudo_labels):
                if k == j:
                    continue
                other = np.asarray(pl.embedding, dtype=np.float64)
                other_norm = np.linalg.norm(other)
                if other_norm == 0.0:
                    raise NumericError("zero-norm pseudo embedding")
                terms.append((q, other / other_norm, 0.0))
    if unmatched_negatives:
        for q in match.unmatched_queries:
            for emb in concept_of.values():
                terms.append((q, emb, 0.0))

    grad = np.zeros_like(regions)
    if not terms:
        return 0.0, grad

    norms = np.linalg.norm(regions, axis=1)
    if np.any(norms == 0.0):
        raise NumericError("zero-norm region embedding")
    unit = regions / norms[:, None]

    loss = 0.0
    for q, c, y in terms:
        dot = float(unit[q] @ c)
        z = alpha * dot + beta
        # BCE in logit space: softplus(z) - y*z, stable for |z| up to alpha
        loss += max(z, 0.0) + np.log1p(np.exp(-abs(z))) - y * z
        # d/do of z: alpha * (c - (o_hat . c) o_hat) / ||o||
        dz = float(sigmoid(z)) - y
        grad[q] += dz * alpha * (c - dot * unit[q]) / norms[q]
    n_terms = len(terms)
    return loss / n_terms, grad / n_terms


def box_loss(
    predicted_boxes,
    match: MatchResult,
    base_annotations,
    weights: MatchWeights = MatchWeights(),
):
    """L1 + (1 - gIoU) over stage-1 matches, averaged; stage-2 matches and
    unmatched queries contribute exactly zero. Returns (loss, grad n x 4)."""
    boxes = as_matrix(predicted_boxes, "predicted_boxes")
    grad = np.zeros_like(boxes)
    if not match.stage1:
        return 0.0, grad
    loss = 0.0
    n = len(match.stage1)
    for q, j in match.stage1:
        target = base_annotations[j].box
        loss += weights.w_l1 * l1_distance(boxes[q], target)
        g_val, g_grad = giou_with_grad(boxes[q], target)
        loss += weights.w_giou * (1.0 - g_val)
        grad[q] += (weights.w_l1 * l1_grad(boxes[q], target) - weights.w_giou * g_grad) / n
    return loss / n, grad


@dataclass
class DetectorTrainConfig:
    iterations: int = 2000
    lr: float = 2e-3
    decay_factor: float = 0.1
    decay_at: float = 5.0 / 6.0  # fraction of total iterations (step schedule)
    box_warmup_iterations: int = 2000
    box_warmup_lr: float = 1e-2
    box_lr_scale: float = 0.1  # box head moves slowly once anchored
    hidden_dim: int = 64
    weights: MatchWeights = field(default_factory=MatchWeights)
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    single_stage: bool = False
    unmatched_negatives: bool = False
    pseudo_negatives: bool = False
    weight_decay: float = 0.0
    seed: int = 0

    def validate(self):
        if self.iterations < 0 or self.lr < 0:
            raise ConfigError("iterations and lr must be non-negative")
        if self.box_warmup_iterations < 0:
            raise ConfigError("box_warmup_iterations must be non-negative")
        if not (0.0 < self.decay_at <= 1.0):
            raise ConfigError("decay_at must lie in (0, 1]")


def init_detector(feature_dim: int, embed_dim: int, config: DetectorTrainConfig) -> DetectorModel:
    rng = np.random.default_rng(config.seed)
    h = config.hidden_dim
    embed_head = Mlp.create([feature_dim, h, h, embed_dim], rng)
    box_head = Mlp.create([feature_dim, h, h, 4], rng)
    return DetectorModel(embed_head, box_head, alpha=config.alpha, beta=config.beta)


def _warmup_box_head(model: DetectorModel, scenes, config: DetectorTrainConfig):
    """Regress each proposal's own box before matched training starts.

    At initialization every query predicts a near-identical box, so the
    assignment is effectively arbitrary and early mistakes get reinforced.
    Anchoring predictions to the proposals breaks that degeneracy: once a
    query's box tracks its proposal, the geometric matching costs are
    meaningful from the first matched iteration. Squared error on the xyxy
    coordinates, mini-batches pooled across all scenes, cosine-decayed lr.
    """
    if config.box_warmup_iterations == 0:
        return
    feats = np.concatenate([s.features for s in scenes if s.features.shape[0]])
    targets = np.concatenate(
        [[p.box.to_array() for p in s.proposals] for s in scenes if s.proposals]
    )
    if feats.shape[0] == 0:
        return
    params = model.box_head.params()
    state = OptimizerState.for_params(params, lr=config.box_warmup_lr)
    rng = np.random.default_rng(config.seed + 2)
    n = feats.shape[0]
    batch = min(256, n)
    total = config.box_warmup_iterations
    for it in range(total):
        idx = rng.integers(0, n, size=batch)
        _, boxes, cache = model.forward(feats[idx])
        diff = boxes - targets[idx]
        loss = float((diff**2).sum() / batch)
        if not np.isfinite(loss):
            raise NumericError(f"box warmup diverged at iteration {it}")
        grads = mlp_backward(
            model.box_head, cache[1], model.backward_boxes(cache, 2.0 * diff / batch)
        )
        lr = cosine_lr(it, total, max(total // 20, 1), config.box_warmup_lr)
        params = adamw_step(params, grads, state, lr=lr)
        model.box_head.set_params(params)


def train_detector(
    scenes,
    pseudo_labels_per_scene,
    vocabulary: Vocabulary,
    config: DetectorTrainConfig,
    trace: list | None = None,
) -> DetectorModel:
    """Matched-pair training over scenes; one AdamW step per scene visit.

    pseudo_labels_per_scene aligns with scenes; pass empty lists for
    base-only training (then no stage-2 match ever occurs). Deterministic
    under config.seed.
    """
    config.validate()
    if len(scenes) == 0:
        raise ConfigError("no training scenes")
    if len(pseudo_labels_per_scene) != len(scenes):
        raise ShapeError("pseudo_labels_per_scene must align with scenes")
    feature_dim = scenes[0].features.shape[1]
    embed_dim = vocabulary.embeddings.shape[1]
    model = init_detector(feature_dim, embed_dim, config)
    base_vocab = vocabulary.base_subset()
    concept_of = base_vocab.concept_map()
    match_cfg = MatchConfig(
        weights=config.weights,
        alpha=config.alpha,
        beta=config.beta,
        single_stage=config.single_stage,
    )
    _warmup_box_head(model, scenes, config)
    embed_params = model.embed_head.params()
    box_params = model.box_head.params()
    embed_state = OptimizerState.for_params(
        embed_params, lr=config.lr, weight_decay=config.weight_decay
    )
    box_state = OptimizerState.for_params(
        box_params, lr=config.lr * config.box_lr_scale, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(config.seed + 1)
    order = rng.permutation(len(scenes))
    pos = 0
    decay_step = int(config.decay_at * config.iterations)
    for it in range(config.iterations):
        if pos == len(order):
            order = rng.permutation(len(scenes))
            pos = 0
        idx = int(order[pos])
        pos += 1
        scene = scenes[idx]
        pseudo = pseudo_labels_per_scene[idx]
        if scene.features.shape[0] == 0:
            continue
        regions, boxes, cache = model.forward(scene.features)
        match = two_stage_match(
            regions, boxes, scene.base_annotations, pseudo, concept_of, match_cfg
        )
        l_align, g_regions = alignment_loss(
            regions,
            match,
            scene.base_annotations,
            vocabulary,
            pseudo,
            alpha=config.alpha,
            beta=config.beta,
            unmatched_negatives=config.unmatched_negatives,
            pseudo_negatives=config.pseudo_negatives,
        )
        l_box, g_boxes = box_loss(boxes, match, scene.base_annotations, config.weights)
        loss = l_align + l_box
        if not np.isfinite(loss):
            raise NumericError(f"detector training diverged at iteration {it}")
        g_embed = mlp_backward(model.embed_head, cache[0], g_regions)
        g_box = mlp_backward(model.box_head, cache[1], model.backward_boxes(cache, g_boxes))
        factor = config.decay_factor if it >= decay_step else 1.0
        embed_params = adamw_step(embed_params, g_embed, embed_state, lr=config.lr * factor)
        box_params = adamw_step(
            box_params, g_box, box_state, lr=config.lr * config.box_lr_scale * factor
        )
        model.embed_head.set_params(embed_params)
        model.box_head.set_params(box_params)
        if trace is not None:
            trace.append(loss)
    return model


def predict(model: DetectorModel, scene, vocabulary: Vocabulary, top_k: int = 20):
    """Score every (proposal, concept) pair; return the top_k detections.

    Ties in score keep row-major (proposal, concept) insertion order.
    """
    if len(vocabulary.ids) == 0:
        raise ConfigError("vocabulary is empty")
    if scene.features.shape[0] == 0:
        return []
    regions, boxes, _ = model.forward(scene.features)
    probs = classify_prob_matrix(
        regions, vocabulary.embeddings, alpha=model.alpha, beta=model.beta
    )
    flat = probs.reshape(-1)
    order = np.argsort(-flat, kind="stable")[:top_k]
    nv = len(vocabulary.ids)
    out = []
    for k in order:
        i, c = divmod(int(k), nv)
        out.append(Detection(clip_box(boxes[i]), vocabulary.ids[c], float(flat[k])))
    return out


def predict_query(model: DetectorModel, scene, query_embedding, k: int = 10):
    """Rank this scene's proposals against one free-form query embedding;
    return the top-k predicted boxes."""
    if k < 1:
        raise ConfigError("k must be at least 1")
    if scene.features.shape[0] == 0:
        return []
    regions, boxes, _ = model.forward(scene.features)
    q = np.asarray(query_embedding, dtype=np.float64).reshape(1, -1)
    probs = classify_prob_matrix(regions, q, alpha=model.alpha, beta=model.beta)[:, 0]
    order = np.argsort(-probs, kind="stable")[:k]
    return [clip_box(boxes[i]) for i in order]

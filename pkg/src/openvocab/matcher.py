"""Exact minimum-cost bipartite assignment and the base-first two-stage
matching used to combine human annotations with pseudo-labels.

Stage 1 matches all queries against annotated base targets (classification
+ L1 + gIoU cost, DETR-convention weights). Stage 2 matches only the
leftover queries against pseudo-labels with an alignment-only cost, so
pseudo-labels can never displace a base match.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .boxes import giou, l1_distance
from .errors import ConfigError, NumericError, ShapeError
from .numerics import as_matrix
from .scoring import DEFAULT_ALPHA, DEFAULT_BETA, classify_prob_matrix


@dataclass(frozen=True)
class MatchWeights:
    """Cost weights for the annotated-target stage (DETR convention)."""

    w_cls: float = 2.0
    w_l1: float = 5.0
    w_giou: float = 2.0

    def __post_init__(self):
        if min(self.w_cls, self.w_l1, self.w_giou) < 0:
            raise ConfigError("matching weights must be non-negative")


@dataclass
class MatchResult:
    """Disjoint query assignments: annotated targets first, then pseudo-labels."""

    stage1: list = field(default_factory=list)  # (query_index, base_target_index)
    stage2: list = field(default_factory=list)  # (query_index, pseudo_index)
    unmatched_queries: list = field(default_factory=list)

    def matched_queries(self):
        return [q for q, _ in self.stage1] + [q for q, _ in self.stage2]


def hungarian(cost) -> list:
    """Minimum-total-cost assignment of size min(rows, cols).

    Shortest-augmenting-path implementation with potentials; handles
    arbitrary finite real costs and rectangular matrices. Scan order is
    fixed (ascending indices), so tie-breaking is deterministic and favors
    low row, then low column indices. Returns (row, col) pairs sorted by row.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ShapeError(f"cost matrix must be 2-D, got shape {c.shape}")
    if c.size == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise NumericError("cost matrix contains non-finite entries")

    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    n, m = c.shape  # n <= m

    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) assigned to col j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = []
    for j in range(1, m + 1):
        if p[j] != 0:
            r, col = p[j] - 1, j - 1
            pairs.append((col, r) if transposed else (r, col))
    pairs.sort()
    return pairs


def stage1_cost(
    region_embeddings,
    predicted_boxes,
    base_annotations,
    concept_embeddings,
    weights: MatchWeights = MatchWeights(),
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> np.ndarray:
    """Query x base-annotation cost: -p(class) + L1 + (1 - gIoU), weighted.

    concept_embeddings maps concept id -> unit text embedding; an id missing
    from the map is an error.
    """
    regions = as_matrix(region_embeddings, "region_embeddings")
    nq = regions.shape[0]
    nt = len(base_annotations)
    cost = np.zeros((nq, nt))
    if nq == 0 or nt == 0:
        return cost
    try:
        concepts = np.stack(
            [np.asarray(concept_embeddings[a.concept_id]) for a in base_annotations]
        )
    except KeyError as e:
        raise ConfigError(f"unknown concept id {e.args[0]!r}") from e
    if weights.w_cls != 0.0:
        probs = classify_prob_matrix(regions, concepts, alpha=alpha, beta=beta)
        cost += weights.w_cls * (-probs)
    if weights.w_l1 != 0.0 or weights.w_giou != 0.0:
        for i in range(nq):
            for j, ann in enumerate(base_annotations):
                cost[i, j] += weights.w_l1 * l1_distance(predicted_boxes[i], ann.box)
                cost[i, j] += weights.w_giou * (1.0 - giou(predicted_boxes[i], ann.box))
    return cost


def stage2_cost(
    region_embeddings,
    pseudo_labels,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> np.ndarray:
    """Query x pseudo-label cost: -p on unit-normalized embeddings.

    Alignment-only: no box regression signal is attached to pseudo matches,
    so box proximity does not participate in the cost either.
    """
    regions = as_matrix(region_embeddings, "region_embeddings")
    if regions.shape[0] == 0 or not pseudo_labels:
        return np.zeros((regions.shape[0], len(pseudo_labels)))
    pseudo = np.stack([np.asarray(pl.embedding) for pl in pseudo_labels])
    return -classify_prob_matrix(regions, pseudo, alpha=alpha, beta=beta)


@dataclass(frozen=True)
class MatchConfig:
    weights: MatchWeights = MatchWeights()
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    single_stage: bool = False


def two_stage_match(
    region_embeddings,
    predicted_boxes,
    base_annotations,
    pseudo_labels,
    concept_embeddings,
    config: MatchConfig = MatchConfig(),
) -> MatchResult:
    """Base-first matching: all queries vs base targets, then the remaining
    queries vs pseudo-labels. Pseudo-labels can never change stage 1.

    With config.single_stage set, a single assignment is solved over the
    union of base and pseudo columns instead (the ablation variant); the
    result is re-split into the same MatchResult shape.
    """
    regions = as_matrix(region_embeddings, "region_embeddings")
    nq = regions.shape[0]
    if nq < len(base_annotations):
        logging.getLogger(__name__).warning(
            "fewer queries (%d) than base annotations (%d); some targets stay unmatched",
            nq,
            len(base_annotations),
        )
    c1 = stage1_cost(
        regions,
        predicted_boxes,
        base_annotations,
        concept_embeddings,
        weights=config.weights,
        alpha=config.alpha,
        beta=config.beta,
    )
    c2 = stage2_cost(regions, pseudo_labels, alpha=config.alpha, beta=config.beta)

    if config.single_stage:
        nb = len(base_annotations)
        joint = np.concatenate([c1, c2], axis=1) if nq else np.zeros((0, nb + len(pseudo_labels)))
        result = MatchResult()
        for q, col in hungarian(joint):
            if col < nb:
                result.stage1.append((q, col))
            else:
                result.stage2.append((q, col - nb))
        matched = set(result.matched_queries())
        result.unmatched_queries = [q for q in range(nq) if q not in matched]
        return result

    result = MatchResult(stage1=hungarian(c1))
    taken = {q for q, _ in result.stage1}
    remaining = [q for q in range(nq) if q not in taken]
    if remaining and pseudo_labels:
        sub = hungarian(c2[remaining, :])
        result.stage2 = [(remaining[r], j) for r, j in sub]
    matched = set(result.matched_queries())
    result.unmatched_queries = [q for q in range(nq) if q not in matched]
    return result


def single_stage_match(
    region_embeddings,
    predicted_boxes,
    base_annotations,
    pseudo_labels,
    concept_embeddings,
    config: MatchConfig = MatchConfig(),
) -> MatchResult:
    """Ablation variant: one assignment over base and pseudo columns jointly."""
    cfg = MatchConfig(
        weights=config.weights,
        alpha=config.alpha,
        beta=config.beta,
        single_stage=True,
    )
    return two_stage_match(
        region_embeddings,
        predicted_boxes,
        base_annotations,
        pseudo_labels,
        concept_embeddings,
        cfg,
    )

"""Open-vocabulary classification probability: a scaled, shifted sigmoid
over the cosine similarity between a region embedding and a concept
embedding. Defaults alpha=25, beta=-0.25 everywhere (training, matching,
inference).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError
from .numerics import as_matrix

DEFAULT_ALPHA = 25.0
DEFAULT_BETA = -0.25


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def unit_normalize(x, axis: int = -1) -> np.ndarray:
    """Scale rows to unit L2 norm; zero-norm rows are an error."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=axis, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericError("cannot unit-normalize a zero-norm embedding")
    return x / norms


def classify_prob(
    region_embedding,
    concept_embedding,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> float:
    """sigmoid(alpha * cosine + beta), in (0, 1). Inputs are unit-normalized
    internally, so the result is invariant to positive rescaling."""
    r = unit_normalize(np.asarray(region_embedding, dtype=np.float64))
    c = unit_normalize(np.asarray(concept_embedding, dtype=np.float64))
    return float(sigmoid(alpha * float(r @ c) + beta))


def classify_prob_matrix(
    region_embeddings,
    concept_embeddings,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> np.ndarray:
    """Probability matrix over all (region, concept) pairs; rows = regions."""
    r = unit_normalize(as_matrix(region_embeddings, "region_embeddings"), axis=1)
    c = unit_normalize(as_matrix(concept_embeddings, "concept_embeddings"), axis=1)
    return sigmoid(alpha * (r @ c.T) + beta)

"""Finite-difference verification of every analytic gradient path.

Each check builds a seeded random instance, evaluates the analytic
gradient, and compares it against central differences. Used by the test
suite and by the `gradcheck` CLI subcommand.
"""

from __future__ import annotations

import numpy as np

from .boxes import Box
from .detector import Vocabulary, alignment_loss, box_loss
from .labeler import PairBatch, PlacModel, mse_loss, plac_objective, rkd_loss
from .matcher import MatchResult, MatchWeights
from .numerics import Mlp, finite_diff_check

FD_STEP = 1e-5


def check_mse(seed: int, n: int = 6, d: int = 5) -> float:
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(n, d))
    target = rng.normal(size=(n, d))
    _, grad = mse_loss(pred, target)
    return finite_diff_check(lambda ps: mse_loss(ps[0], target)[0], [pred], [grad], h=FD_STEP)


def check_rkd(seed: int, n: int = 6, d: int = 5, delta: float = 1.0) -> float:
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(n, d))
    target = rng.normal(size=(n, d))
    _, grad = rkd_loss(pred, target, delta=delta)
    return finite_diff_check(
        lambda ps: rkd_loss(ps[0], target, delta=delta)[0], [pred], [grad], h=FD_STEP
    )


def check_plac_objective(
    seed: int, n: int = 8, d: int = 6, hidden: int = 7, lambda_rkd: float = 20.0
) -> float:
    rng = np.random.default_rng(seed)
    model = PlacModel(Mlp.create([d, hidden, hidden, d], rng))
    batch = PairBatch(rng.normal(size=(n, d)), rng.normal(size=(n, d)))
    _, grads = plac_objective(model, batch, lambda_rkd)

    def loss_fn(params):
        probe = PlacModel(model.mlp.copy())
        probe.mlp.set_params(params)
        return plac_objective(probe, batch, lambda_rkd)[0]

    return finite_diff_check(loss_fn, model.mlp.params(), grads, h=FD_STEP)


def _random_instance(rng, nq, nb, npseudo, d):
    from .pseudo import BaseAnnotation, PseudoLabel

    def rand_box():
        x1, y1 = rng.uniform(0.05, 0.5, size=2)
        w, h = rng.uniform(0.15, 0.4, size=2)
        return Box(x1, y1, min(x1 + w, 1.0), min(y1 + h, 1.0))

    ids = [f"base_{i:02d}" for i in range(nb + 2)]
    vocab = Vocabulary(
        ids=ids,
        embeddings=np.stack(
            [v / np.linalg.norm(v) for v in rng.normal(size=(nb + 2, d))]
        ),
        is_novel=[False] * (nb + 2),
    )
    anns = [BaseAnnotation(rand_box(), ids[i]) for i in range(nb)]
    pseudo = [
        PseudoLabel(rand_box(), rng.normal(size=d), 0.5) for _ in range(npseudo)
    ]
    match = MatchResult()
    queries = list(range(nq))
    rng.shuffle(queries)
    for j in range(nb):
        match.stage1.append((queries.pop(), j))
    for j in range(min(npseudo, len(queries))):
        match.stage2.append((queries.pop(), j))
    match.unmatched_queries = queries
    return vocab, anns, pseudo, match


def check_alignment_loss(seed: int, nq: int = 5, nb: int = 2, npseudo: int = 2, d: int = 6) -> float:
    rng = np.random.default_rng(seed)
    vocab, anns, pseudo, match = _random_instance(rng, nq, nb, npseudo, d)
    regions = rng.normal(size=(nq, d))
    _, grad = alignment_loss(regions, match, anns, vocab, pseudo)
    return finite_diff_check(
        lambda ps: alignment_loss(ps[0], match, anns, vocab, pseudo)[0],
        [regions],
        [grad],
        h=FD_STEP,
    )


def check_box_loss(seed: int, nq: int = 5, nb: int = 3) -> float:
    rng = np.random.default_rng(seed)
    vocab, anns, pseudo, match = _random_instance(rng, nq, nb, 0, 4)
    # random predicted boxes, kept off the piecewise kinks of L1/gIoU
    boxes = np.stack(
        [
            np.array([x1, y1, x1 + w, y1 + h])
            for x1, y1, w, h in rng.uniform(
                [0.0, 0.0, 0.1, 0.1], [0.45, 0.45, 0.5, 0.5], size=(nq, 4)
            )
        ]
    )
    weights = MatchWeights()
    _, grad = box_loss(boxes, match, anns, weights)
    return finite_diff_check(
        lambda ps: box_loss(ps[0], match, anns, weights)[0], [boxes], [grad], h=FD_STEP
    )


ALL_CHECKS = {
    "mse_loss": check_mse,
    "rkd_loss": check_rkd,
    "labeler_objective": check_plac_objective,
    "alignment_loss": check_alignment_loss,
    "box_loss": check_box_loss,
}


def run_all(seeds) -> dict:
    """Worst relative error per gradient path over the given seeds."""
    return {
        name: max(fn(seed) for seed in seeds) for name, fn in ALL_CHECKS.items()
    }

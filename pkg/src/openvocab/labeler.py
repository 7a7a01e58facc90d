"""Image-embedding -> text-embedding pseudo-labeler.

A 3-layer gelu MLP trained on image-text embedding pairs with a pointwise
MSE term plus a relational distillation term that matches normalized
pairwise distances between the predicted set and the target set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateBatchError, NumericError, ShapeError
from .numerics import (
    Mlp,
    OptimizerState,
    adamw_step,
    as_matrix,
    cosine_lr,
    mlp_backward,
    mlp_forward,
)


@dataclass
class PairBatch:
    """Aligned image/text embedding rows in the shared joint space."""

    image_embeddings: np.ndarray
    text_embeddings: np.ndarray

    def __post_init__(self):
        img = as_matrix(self.image_embeddings, "image_embeddings")
        txt = as_matrix(self.text_embeddings, "text_embeddings")
        if img.shape != txt.shape:
            raise ShapeError(
                f"image/text embedding shapes differ: {img.shape} vs {txt.shape}"
            )
        self.image_embeddings = img
        self.text_embeddings = txt

    @property
    def size(self) -> int:
        return self.image_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.image_embeddings.shape[1]

    def subset(self, idx) -> "PairBatch":
        return PairBatch(self.image_embeddings[idx], self.text_embeddings[idx])


@dataclass
class PlacModel:
    """Trained pseudo-labeler: an MLP from image space to text space (d -> d)."""

    mlp: Mlp
    lambda_rkd: float = 0.0
    epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.mlp.in_dim != self.mlp.out_dim:
            raise ShapeError("pseudo-labeler must map d -> d")

    @property
    def dim(self) -> int:
        return self.mlp.in_dim

    def apply(self, image_embeddings) -> np.ndarray:
        return plac_apply(self, image_embeddings)


def mse_loss(pred, target):
    """Per-row squared L2 distance, averaged over the batch.

    No division by the embedding dimension. Returns (loss, grad_pred).
    """
    p = as_matrix(pred, "pred")
    t = as_matrix(target, "target")
    if p.shape != t.shape:
        raise ShapeError(f"pred/target shapes differ: {p.shape} vs {t.shape}")
    if p.shape[0] < 1:
        raise ShapeError("mse_loss needs at least one row")
    diff = p - t
    loss = float((diff * diff).sum() / p.shape[0])
    grad = 2.0 * diff / p.shape[0]
    return loss, grad


def _pairwise_distances(x: np.ndarray):
    diffs = x[:, None, :] - x[None, :, :]
    return diffs, np.sqrt((diffs * diffs).sum(axis=2))


def _huber(r: np.ndarray, delta: float):
    a = np.abs(r)
    small = a < delta
    val = np.where(small, 0.5 * r * r / delta, a - 0.5 * delta)
    grad = np.where(small, r / delta, np.sign(r))
    return val, grad


def rkd_loss(pred, target, delta: float = 1.0, stop_grad_mu: bool = False):
    """Relational loss over ordered distinct pairs.

    Each set's pairwise L2 distances are normalized by that set's own mean
    pairwise distance, then compared with a smooth-L1 penalty (threshold
    delta). The gradient flows through the predicted set's normalizer unless
    stop_grad_mu is set. Returns (loss, grad_pred).
    """
    p = as_matrix(pred, "pred")
    t = as_matrix(target, "target")
    if p.shape != t.shape:
        raise ShapeError(f"pred/target shapes differ: {p.shape} vs {t.shape}")
    n = p.shape[0]
    if n < 2:
        raise ShapeError("rkd_loss needs at least 2 rows")
    off = ~np.eye(n, dtype=bool)
    m = n * (n - 1)

    diffs_p, d_p = _pairwise_distances(p)
    _, d_t = _pairwise_distances(t)
    mu_p = d_p[off].sum() / m
    mu_t = d_t[off].sum() / m
    if mu_p == 0.0 or mu_t == 0.0:
        raise DegenerateBatchError("all points of a set coincide; mean distance is 0")

    psi_p = d_p / mu_p
    psi_t = d_t / mu_t
    residual = psi_t - psi_p
    h_val, h_grad = _huber(residual, delta)
    loss = float(h_val[off].sum())

    # dLoss/d(distance d_jk), including the mu_p channel shared by all pairs
    g_psi = np.where(off, -h_grad, 0.0)  # dLoss/dpsi_p
    w = g_psi / mu_p
    if not stop_grad_mu:
        s = (g_psi * d_p).sum()
        w = w - np.where(off, s / (m * mu_p * mu_p), 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(d_p > 0.0, (w + w.T) / d_p, 0.0)
    grad = coef.sum(axis=1)[:, None] * p - coef @ p
    return loss, grad


def relational_error(pred, target) -> float:
    """Mean absolute difference of normalized pairwise distances (ordered
    pairs). The held-out metric the relational loss optimizes."""
    p = as_matrix(pred, "pred")
    t = as_matrix(target, "target")
    n = p.shape[0]
    if n < 2:
        raise ShapeError("relational_error needs at least 2 rows")
    off = ~np.eye(n, dtype=bool)
    _, d_p = _pairwise_distances(p)
    _, d_t = _pairwise_distances(t)
    mu_p = d_p[off].mean()
    mu_t = d_t[off].mean()
    if mu_p == 0.0 or mu_t == 0.0:
        raise DegenerateBatchError("all points of a set coincide")
    return float(np.abs(d_t[off] / mu_t - d_p[off] / mu_p).mean())


def plac_objective(
    model: PlacModel,
    batch: PairBatch,
    lambda_rkd: float,
    delta: float = 1.0,
    stop_grad_mu: bool = False,
):
    """Combined objective: MSE + lambda * relational loss on the MLP outputs.

    Returns (loss, parameter gradients in Mlp.params() order).
    """
    if lambda_rkd < 0:
        raise ConfigError("lambda_rkd must be non-negative")
    pred, cache = mlp_forward(model.mlp, batch.image_embeddings)
    loss_mse, grad_out = mse_loss(pred, batch.text_embeddings)
    loss = loss_mse
    if lambda_rkd > 0 and batch.size >= 2:
        loss_rkd, grad_rkd = rkd_loss(
            pred, batch.text_embeddings, delta=delta, stop_grad_mu=stop_grad_mu
        )
        loss = loss + lambda_rkd * loss_rkd
        grad_out = grad_out + lambda_rkd * grad_rkd
    grads = mlp_backward(model.mlp, cache, grad_out)
    return loss, grads


@dataclass
class PlacTrainConfig:
    epochs: int = 60
    batch_size: int = 128
    lr: float = 1e-3
    lambda_rkd: float = 20.0
    delta: float = 1.0
    hidden_dim: int | None = None  # defaults to twice the embedding dimension
    warmup_epochs: int = 1
    weight_decay: float = 0.0
    seed: int = 0
    stop_grad_mu: bool = False

    def validate(self):
        if self.epochs < 0 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 0 and batch_size >= 2")
        if self.lr < 0 or self.lambda_rkd < 0 or self.delta <= 0:
            raise ConfigError("lr/lambda_rkd must be >= 0 and delta > 0")


@dataclass
class TrainTrace:
    losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)


def init_plac_model(dim: int, config: PlacTrainConfig) -> PlacModel:
    hidden = config.hidden_dim or 2 * dim
    rng = np.random.default_rng(config.seed)
    mlp = Mlp.create([dim, hidden, hidden, dim], rng)
    return PlacModel(
        mlp, lambda_rkd=config.lambda_rkd, epochs=config.epochs, seed=config.seed
    )


def train_plac(pairs: PairBatch, config: PlacTrainConfig, trace: TrainTrace | None = None) -> PlacModel:
    """Train the pseudo-labeler; deterministic under config.seed."""
    config.validate()
    if pairs.size < 2:
        raise ConfigError("need at least 2 training pairs")
    model = init_plac_model(pairs.dim, config)
    if config.epochs == 0:
        return model
    rng = np.random.default_rng(config.seed + 1)
    steps_per_epoch = max(1, -(-pairs.size // config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    warmup = config.warmup_epochs * steps_per_epoch
    if warmup >= total_steps:
        warmup = max(0, total_steps - 1)
    params = model.mlp.params()
    state = OptimizerState.for_params(
        params, lr=config.lr, weight_decay=config.weight_decay
    )
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(pairs.size)
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            if idx.size == 0:
                continue
            batch = pairs.subset(idx)
            # The relational term is a sum over ordered pairs, so its raw
            # magnitude grows with the square of the batch size and would
            # drown the pointwise term. Scale the weight by the pair count
            # so lambda_rkd means the same thing at any batch size.
            n_pairs = batch.size * (batch.size - 1)
            lam = config.lambda_rkd / n_pairs if n_pairs > 0 else 0.0
            loss, grads = plac_objective(
                model,
                batch,
                lam,
                delta=config.delta,
                stop_grad_mu=config.stop_grad_mu,
            )
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at step {step}: loss={loss}")
            lr = cosine_lr(step, total_steps, warmup, config.lr)
            params = adamw_step(params, grads, state, lr=lr)
            model.mlp.set_params(params)
            if trace is not None:
                trace.losses.append(loss)
                trace.lrs.append(lr)
            step += 1
    return model


def plac_apply(model: PlacModel, image_embeddings) -> np.ndarray:
    """Row-wise application of the learned map; rows stay aligned."""
    x = as_matrix(image_embeddings, "image_embeddings")
    if x.shape[1] != model.dim:
        raise ShapeError(f"embeddings have dim {x.shape[1]}, model expects {model.dim}")
    out, _ = mlp_forward(model.mlp, x)
    return out

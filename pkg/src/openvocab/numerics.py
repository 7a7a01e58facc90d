"""Dense numeric kernels: gelu MLP with manual backprop, finite-difference
gradient checking, AdamW updates and the cosine learning-rate schedule.

All math runs in float64. File formats downcast to float32 at the I/O
boundary only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def as_matrix(x, name: str = "array") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, raising ShapeError otherwise."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name}: contains non-finite values")
    return a


def gelu(x):
    """Tanh-approximation gelu.

    The exact erf form differs by < 1e-3 everywhere; the tanh variant is the
    one used by mainstream trainers and is what this package standardizes on.
    """
    x = np.asarray(x, dtype=np.float64)
    inner = _GELU_C * (x + _GELU_A * x**3)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_grad(x):
    """Exact derivative of the tanh-approximation gelu."""
    x = np.asarray(x, dtype=np.float64)
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    sech2 = 1.0 - t * t
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


@dataclass
class Mlp:
    """Fully-connected net: gelu between layers, identity on the output.

    weights[i] has shape (fan_in, fan_out); biases[i] has shape (fan_out,).
    The canonical configuration is 3 layers (in -> hidden -> hidden -> out).
    """

    weights: list  # list[np.ndarray]
    biases: list  # list[np.ndarray]

    @classmethod
    def create(cls, dims, rng: np.random.Generator) -> "Mlp":
        """Glorot-normal weights, zero biases. dims = [in, h1, ..., out]."""
        if len(dims) < 2:
            raise ShapeError("Mlp needs at least one layer")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = math.sqrt(2.0 / (fan_in + fan_out))
            weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dims(self):
        return [self.in_dim] + [w.shape[1] for w in self.weights]

    def params(self):
        """Flat parameter list, fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params):
        n = len(self.weights)
        if len(params) != 2 * n:
            raise ShapeError(f"expected {2 * n} parameter arrays, got {len(params)}")
        for i in range(n):
            w = np.asarray(params[2 * i], dtype=np.float64)
            b = np.asarray(params[2 * i + 1], dtype=np.float64)
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ShapeError("parameter shape mismatch in set_params")
            self.weights[i] = w
            self.biases[i] = b

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class ForwardCache:
    """Intermediate activations retained for the backward pass."""

    inputs: np.ndarray
    preacts: list  # z_i for every layer, in forward order
    activations: list  # layer inputs: [X, a1, a2, ...]
    shapes: tuple  # weight shapes, for stale-cache detection


def mlp_forward(model: Mlp, batch) -> tuple:
    """Forward pass over a batch (rows are samples).

    Returns (outputs, cache); the cache feeds mlp_backward.
    """
    x = as_matrix(batch, "batch")
    if x.shape[1] != model.in_dim:
        raise ShapeError(f"batch has {x.shape[1]} columns, model expects {model.in_dim}")
    preacts, activations = [], [x]
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        preacts.append(z)
        a = z if i == last else gelu(z)
        if i != last:
            activations.append(a)
    cache = ForwardCache(x, preacts, activations, tuple(w.shape for w in model.weights))
    return a, cache


def mlp_backward(model: Mlp, cache: ForwardCache, grad_outputs):
    """Backprop grad_outputs (dLoss/dOut) to parameter gradients.

    Returns gradients in the same order as Mlp.params().
    """
    if cache.shapes != tuple(w.shape for w in model.weights):
        raise ShapeError("cache does not match this model (stale or foreign cache)")
    g = as_matrix(grad_outputs, "grad_outputs")
    if g.shape != (cache.inputs.shape[0], model.out_dim):
        raise ShapeError(f"grad_outputs shape {g.shape} does not match forward outputs")
    n = len(model.weights)
    grads_w = [None] * n
    grads_b = [None] * n
    dz = g  # output layer is identity
    for i in range(n - 1, -1, -1):
        a_prev = cache.activations[i]
        grads_w[i] = a_prev.T @ dz
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ model.weights[i].T
            dz = da * gelu_grad(cache.preacts[i - 1])
    out = []
    for gw, gb in zip(grads_w, grads_b):
        out.append(gw)
        out.append(gb)
    return out


def mlp_input_grad(model: Mlp, cache: ForwardCache, grad_outputs) -> np.ndarray:
    """Gradient of the loss w.r.t. the batch rows (used by composed heads)."""
    g = as_matrix(grad_outputs, "grad_outputs")
    dz = g
    for i in range(len(model.weights) - 1, 0, -1):
        da = dz @ model.weights[i].T
        dz = da * gelu_grad(cache.preacts[i - 1])
    return dz @ model.weights[0].T


def finite_diff_check(loss_fn, params, grads, h: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    loss_fn takes a parameter list and returns a scalar; grads are the
    analytic gradients at `params`, same shapes. Returns the worst relative
    error, denominator max(|analytic|, |numeric|, 1e-8).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    worst = 0.0
    work = [np.array(p, dtype=np.float64) for p in params]
    for pi, (p, g) in enumerate(zip(work, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError("gradient shape mismatch in finite_diff_check")
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + h
            lo_hi = loss_fn(work)
            flat_p[j] = orig - h
            lo_lo = loss_fn(work)
            flat_p[j] = orig
            if not (np.isfinite(lo_hi) and np.isfinite(lo_lo)):
                raise NumericError("loss_fn returned non-finite value during check")
            numeric = (lo_hi - lo_lo) / (2.0 * h)
            denom = max(abs(flat_g[j]), abs(numeric), 1e-8)
            worst = max(worst, abs(flat_g[j] - numeric) / denom)
    return worst


@dataclass
class OptimizerState:
    """Decoupled-weight-decay Adam state. Accumulators mirror parameter shapes."""

    lr: float
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        return cls(
            lr=lr,
            betas=betas,
            eps=eps,
            weight_decay=weight_decay,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adamw_step(params, grads, state: OptimizerState, lr: float | None = None):
    """One AdamW update. Returns new parameter arrays; mutates `state`.

    `lr` overrides state.lr for this step (scheduled training).
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params/grads/state length mismatch")
    step_lr = state.lr if lr is None else lr
    if step_lr < 0:
        raise ValueError("learning rate must be non-negative")
    b1, b2 = state.betas
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient in adamw_step")
        if g.shape != p.shape:
            raise ShapeError("gradient/parameter shape mismatch")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / (1.0 - b1**t)
        v_hat = state.v[i] / (1.0 - b2**t)
        update = m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p
        out.append(p - step_lr * update)
    return out


def cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to base_lr, then cosine decay to 0 at total_steps."""
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup_steps >= total_steps:
        raise ValueError("warmup_steps must be smaller than total_steps")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))

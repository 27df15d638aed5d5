"""Dense numeric kernel: MLP stacks with exact gradients, Adam, cosine LR.

All math is float64 numpy. A parameter set is exposed as a flat list of
ndarrays so the same helpers serve local training, federated averaging and
finite-difference checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Matrix = np.ndarray  # 2-D float64 array, row-major

RELU = "relu"
IDENTITY = "identity"


@dataclass
class MlpParams:
    """Affine layer stack; weights[k] is [out_k, in_k], biases[k] is [out_k]."""

    weights: list[Matrix]
    biases: list[np.ndarray]
    activations: list[str]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


def init_mlp(dims, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases, ReLU hidden layers, identity output.

    dims is the full chain [in, hidden..., out].
    """
    if len(dims) < 2:
        raise ValueError("an MLP needs at least input and output dimensions")
    weights, biases, acts = [], [], []
    last = len(dims) - 2
    for k in range(len(dims) - 1):
        fan_in, fan_out = int(dims[k]), int(dims[k + 1])
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append(IDENTITY if k == last else RELU)
    return MlpParams(weights, biases, acts)


def mlp_arrays(params: MlpParams) -> list[np.ndarray]:
    """Flat parameter list [W0, b0, W1, b1, ...]."""
    out: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        out.append(w)
        out.append(b)
    return out


def mlp_from_arrays(template: MlpParams, arrays) -> MlpParams:
    arrays = list(arrays)
    if len(arrays) != 2 * template.n_layers:
        raise ValueError("array list does not match the layer stack")
    weights, biases = [], []
    for k in range(template.n_layers):
        w, b = arrays[2 * k], arrays[2 * k + 1]
        if w.shape != template.weights[k].shape or b.shape != template.biases[k].shape:
            raise ValueError(f"layer {k}: shape mismatch")
        weights.append(w)
        biases.append(b)
    return MlpParams(weights, biases, list(template.activations))


@dataclass
class MlpCache:
    """Per-layer inputs and pre-activations recorded by a forward pass."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]


def mlp_forward(params: MlpParams, x: Matrix) -> tuple[Matrix, MlpCache]:
    """Run the stack on a [batch, in] matrix; the cache enables exact backprop."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"input must be 2-D, got shape {x.shape}")
    if x.shape[1] != params.in_dim:
        raise ValueError(f"input has {x.shape[1]} columns, expected {params.in_dim}")
    inputs, preacts = [], []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        if h.shape[1] != w.shape[1]:
            raise ValueError("layer dimensions do not chain")
        inputs.append(h)
        z = h @ w.T + b
        preacts.append(z)
        h = np.maximum(z, 0.0) if act == RELU else z
    return h, MlpCache(inputs, preacts)


def mlp_backward(
    params: MlpParams, cache: MlpCache, upstream: Matrix
) -> tuple[list[np.ndarray], Matrix]:
    """Exact gradients for the composed function.

    Returns (grads aligned with mlp_arrays(params), gradient wrt the input).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if len(cache.inputs) != params.n_layers:
        raise ValueError("cache does not match the layer stack")
    if upstream.shape != cache.preacts[-1].shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match output "
            f"{cache.preacts[-1].shape}"
        )
    grads: list[np.ndarray | None] = [None] * (2 * params.n_layers)
    g = upstream
    for k in range(params.n_layers - 1, -1, -1):
        if params.activations[k] == RELU:
            g = g * (cache.preacts[k] > 0.0)
        grads[2 * k] = g.T @ cache.inputs[k]
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params.weights[k]
    return grads, g  # type: ignore[return-value]


@dataclass
class AdamState:
    """First/second moment accumulators mirroring a flat parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(arrays, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        step=0,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(arrays, grads, state: AdamState, lr: float) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; pure (new arrays and state are returned)."""
    arrays, grads = list(arrays), list(grads)
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("parameter, gradient and state lists must align")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape does not match parameter shape")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient entries")
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * (g * g)
        update = lr * (m2 / bc1) / (np.sqrt(v2 / bc2) + state.eps)
        new_params.append(p - update)
        new_m.append(m2)
        new_v.append(v2)
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


@dataclass(frozen=True)
class CosineSchedule:
    """Cosine annealing from base_lr at step 0 down to min_lr at total_steps."""

    base_lr: float
    total_steps: int
    min_lr: float = 0.0


def cosine_lr(schedule: CosineSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be nonnegative")
    if schedule.total_steps <= 0 or step >= schedule.total_steps:
        return schedule.min_lr
    span = schedule.base_lr - schedule.min_lr
    return schedule.min_lr + 0.5 * span * (1.0 + math.cos(math.pi * step / schedule.total_steps))

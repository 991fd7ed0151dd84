"""Dense linear algebra and a hand-rolled gradient engine for tiny MLPs.

Everything here is float64 and single-threaded per call; determinism is part
of the contract (no parallel reductions, no hidden global state).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import DimensionError, NumericsError

__all__ = [
    "chol_factor",
    "cholesky_solve",
    "Mlp",
    "ExtractorParams",
    "extractor_forward",
    "extractor_backward",
    "AdamWState",
    "adamw_step",
    "glorot_uniform",
]

# Diagonal jitter escalation, as fractions of the mean diagonal.
JITTER_SCHEDULE = (1e-6, 1e-5, 1e-4)


def chol_factor(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of an SPD matrix, with escalating diagonal jitter.

    Raises :class:`NumericsError` if the matrix is still not positive
    definite after the largest jitter.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    try:
        return cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        pass
    mean_diag = float(np.trace(a)) / a.shape[0]
    scale = mean_diag if mean_diag > 0 else 1.0
    for frac in JITTER_SCHEDULE:
        try:
            return cholesky(a + frac * scale * np.eye(a.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise NumericsError(
        f"matrix not positive definite after jitter up to {JITTER_SCHEDULE[-1]:g} of mean diagonal"
    )


def cholesky_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for SPD ``a`` via Cholesky factorization."""
    b = np.asarray(b, dtype=np.float64)
    ell = chol_factor(a)
    return cho_solve((ell, True), b)


def solve_lower(ell: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Forward substitution ``ell @ x = b`` for a lower-triangular factor."""
    return solve_triangular(ell, b, lower=True)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Mlp:
    """Fully-connected stack with ReLU between layers.

    ``activate_last`` controls whether a ReLU follows the final linear layer.
    Parameters are plain float64 arrays; ``forward`` records the activations
    needed by ``backward``.
    """

    def __init__(self, dims: list[int], rng: np.random.Generator | None = None, activate_last: bool = False):
        if len(dims) < 2:
            raise DimensionError("an MLP needs at least one layer")
        self.dims = list(dims)
        self.activate_last = activate_last
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            if rng is None:
                self.weights.append(np.zeros((fan_in, fan_out)))
            else:
                self.weights.append(glorot_uniform(rng, fan_in, fan_out))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, flat: list[np.ndarray]) -> None:
        for k in range(self.n_layers):
            self.weights[k] = flat[2 * k]
            self.biases[k] = flat[2 * k + 1]

    def forward(self, x: np.ndarray):
        """Batched forward pass.  Returns ``(output, cache)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise DimensionError(f"expected input of width {self.dims[0]}, got shape {x.shape}")
        inputs = [x]
        pre = []
        h = x
        for k in range(self.n_layers):
            z = h @ self.weights[k] + self.biases[k]
            pre.append(z)
            if k < self.n_layers - 1 or self.activate_last:
                h = np.maximum(z, 0.0)
            else:
                h = z
            if k < self.n_layers - 1:
                inputs.append(h)
        return h, (inputs, pre)

    def backward(self, cache, d_out: np.ndarray):
        """Reverse pass.  Returns ``(d_input, grads)`` with grads aligned to ``params()``.

        The ReLU subgradient at exactly 0 is taken as 0.
        """
        if cache is None:
            raise NumericsError("backward requires the cache recorded by a forward pass")
        inputs, pre = cache
        grads_w = [None] * self.n_layers
        grads_b = [None] * self.n_layers
        grad = np.asarray(d_out, dtype=np.float64)
        for k in range(self.n_layers - 1, -1, -1):
            if k < self.n_layers - 1 or self.activate_last:
                grad = grad * (pre[k] > 0.0)
            grads_w[k] = inputs[k].T @ grad
            grads_b[k] = grad.sum(axis=0)
            grad = grad @ self.weights[k].T
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.append(gw)
            grads.append(gb)
        return grad, grads


@dataclass
class ExtractorParams:
    """Structure-aware feature extractor.

    Two independent blocks map the instruction and the exemplar embedding to
    32 activations each (Lin(d, 64), Lin(64, 32), ReLU throughout); the
    concatenated 64 activations pass through a joint head Lin(64, 32) ->
    ReLU -> Lin(32, 10) with no terminal activation.
    """

    instruction_block: Mlp
    exemplar_block: Mlp
    joint_head: Mlp
    embedding_dim: int

    @classmethod
    def create(cls, embedding_dim: int, rng: np.random.Generator | None) -> "ExtractorParams":
        return cls(
            instruction_block=Mlp([embedding_dim, 64, 32], rng, activate_last=True),
            exemplar_block=Mlp([embedding_dim, 64, 32], rng, activate_last=True),
            joint_head=Mlp([64, 32, 10], rng, activate_last=False),
            embedding_dim=embedding_dim,
        )

    @property
    def latent_dim(self) -> int:
        return self.joint_head.dims[-1]

    def params(self) -> list[np.ndarray]:
        return self.instruction_block.params() + self.exemplar_block.params() + self.joint_head.params()

    def set_params(self, flat: list[np.ndarray]) -> None:
        n_i = 2 * self.instruction_block.n_layers
        n_e = 2 * self.exemplar_block.n_layers
        self.instruction_block.set_params(flat[:n_i])
        self.exemplar_block.set_params(flat[n_i : n_i + n_e])
        self.joint_head.set_params(flat[n_i + n_e :])


def extractor_forward(params: ExtractorParams, z_i: np.ndarray, z_e: np.ndarray):
    """Map batched (instruction, exemplar) embeddings to 10-d latents.

    Returns ``(latent, cache)``; the cache feeds :func:`extractor_backward`.
    """
    z_i = np.atleast_2d(np.asarray(z_i, dtype=np.float64))
    z_e = np.atleast_2d(np.asarray(z_e, dtype=np.float64))
    if z_i.shape[1] != params.embedding_dim or z_e.shape[1] != params.embedding_dim:
        raise DimensionError(
            f"embeddings must have width {params.embedding_dim}, got {z_i.shape[1]} and {z_e.shape[1]}"
        )
    if z_i.shape[0] != z_e.shape[0]:
        raise DimensionError("instruction and exemplar batches must have equal length")
    hi, cache_i = params.instruction_block.forward(z_i)
    he, cache_e = params.exemplar_block.forward(z_e)
    joint_in = np.concatenate([hi, he], axis=1)
    out, cache_j = params.joint_head.forward(joint_in)
    return out, (cache_i, cache_e, cache_j, hi.shape[1])


def extractor_backward(params: ExtractorParams, cache, d_latent: np.ndarray) -> list[np.ndarray]:
    """Gradients of the extractor parameters given upstream latent gradients.

    Returned list aligns with ``params.params()``.
    """
    if cache is None:
        raise NumericsError("backward requires the cache recorded by a forward pass")
    cache_i, cache_e, cache_j, split = cache
    d_joint_in, grads_j = params.joint_head.backward(cache_j, d_latent)
    _, grads_i = params.instruction_block.backward(cache_i, d_joint_in[:, :split])
    _, grads_e = params.exemplar_block.backward(cache_e, d_joint_in[:, split:])
    return grads_i + grads_e + grads_j


@dataclass
class AdamWState:
    """Decoupled weight-decay Adam over a list of parameter arrays."""

    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    def initialize(self, params: list[np.ndarray]) -> None:
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0


def adamw_step(state: AdamWState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One AdamW update.  Returns the new parameter arrays (inputs untouched)."""
    if not state.m:
        state.initialize(params)
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise DimensionError("params and grads must align in count and shape")
    for idx, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NumericsError(f"non-finite gradient in parameter block {idx}; training aborted")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = state.m[k] / bc1
        v_hat = state.v[k] / bc2
        out.append(p - state.learning_rate * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p))
    return out

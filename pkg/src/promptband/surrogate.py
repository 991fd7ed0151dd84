"""Gaussian-process surrogates over prompts.

Four kinds share one ARD Matérn 5/2 kernel and one training loop:

* ``vanilla``        - GP on the whole-prompt embedding (instruction and
                       exemplar halves concatenated).
* ``pca``            - GP on a PCA reduction of the whole-prompt embedding,
                       refit on the design slice at every fit.
* ``dk_structural``  - deep kernel: separate instruction/exemplar feature
                       blocks feeding a joint head; kernel acts on the 10-d
                       latent.
* ``dk_flat``        - deep kernel with a single feature stack over the
                       concatenated embedding (no structural split).

Training maximizes ``-v' K^-1 v - log|K|`` over kernel parameters (and
extractor weights for the deep kernels) with AdamW; inputs are normalized to
the unit cube and targets standardized, both per design slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.stats import spearmanr

from .domain import EvalRecord, EvaluationLedger, PromptSpace
from .errors import InsufficientDataError, NumericsError, ValidationError
from .numerics import (
    AdamWState,
    ExtractorParams,
    Mlp,
    adamw_step,
    chol_factor,
    extractor_backward,
    extractor_forward,
    solve_lower,
)

__all__ = [
    "KernelParams",
    "FitSnapshot",
    "MODEL_KINDS",
    "matern52",
    "fit",
    "predict",
    "select_training_fidelity",
    "design_slice",
    "latent_alignment_score",
]

MODEL_KINDS = ("vanilla", "pca", "dk_structural", "dk_flat")

NOISE_FLOOR = 1e-6
TARGET_STD_FLOOR = 1e-8
MLL_TOL = 1e-4
MLL_PATIENCE = 10
MAX_EPOCHS = 3000
LEARNING_RATE = 0.01
INIT_LOG_NOISE = float(np.log(1e-2))
PCA_MAX_COMPONENTS = 10
SQRT5 = float(np.sqrt(5.0))


@dataclass(frozen=True)
class KernelParams:
    """ARD Matérn 5/2 parameters: per-dimension lengthscales, output scale, noise."""

    lengthscales: np.ndarray
    outputscale: float
    noise: float

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=np.float64)
        if not np.isfinite(ls).all() or np.any(ls <= 0):
            raise ValidationError("lengthscales must be finite and positive")
        if not self.outputscale > 0:
            raise ValidationError("output scale must be positive")
        if not self.noise >= NOISE_FLOOR:
            raise ValidationError(f"noise must be at least {NOISE_FLOOR}")
        object.__setattr__(self, "lengthscales", ls)


def matern52(u, v, params: KernelParams) -> float:
    """ARD Matérn 5/2 covariance between two (normalized) vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"vector shapes differ: {u.shape} vs {v.shape}")
    diff = (u - v) / params.lengthscales
    r = float(np.sqrt(np.dot(diff, diff)))
    return float(params.outputscale * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * np.exp(-SQRT5 * r))


def _cross_r(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Pairwise ARD-scaled distances between row sets ``a`` and ``b``."""
    ua = a / lengthscales
    ub = b / lengthscales
    sq = np.sum(ua * ua, axis=1)[:, None] + np.sum(ub * ub, axis=1)[None, :] - 2.0 * (ua @ ub.T)
    return np.sqrt(np.maximum(sq, 0.0))


def _matern_from_r(r: np.ndarray, outputscale: float) -> np.ndarray:
    return outputscale * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


class _IdentityFeatures:
    """No learned features: the representation is the normalized input itself."""

    trainable = False

    def forward(self, x):
        return x, None

    def backward(self, cache, d_latent):
        return []

    def params(self):
        return []

    def set_params(self, flat):
        return None


class _StructuralFeatures:
    """Adapter running the split-block extractor on a concatenated input."""

    trainable = True

    def __init__(self, extractor: ExtractorParams):
        self.extractor = extractor
        self.d = extractor.embedding_dim

    def forward(self, x):
        return extractor_forward(self.extractor, x[:, : self.d], x[:, self.d :])

    def backward(self, cache, d_latent):
        return extractor_backward(self.extractor, cache, d_latent)

    def params(self):
        return self.extractor.params()

    def set_params(self, flat):
        self.extractor.set_params(flat)


class _FlatFeatures:
    """Adapter for the single-stack extractor over the whole-prompt embedding."""

    trainable = True

    def __init__(self, mlp: Mlp):
        self.mlp = mlp

    def forward(self, x):
        return self.mlp.forward(x)

    def backward(self, cache, d_latent):
        _, grads = self.mlp.backward(cache, d_latent)
        return grads

    def params(self):
        return self.mlp.params()

    def set_params(self, flat):
        self.mlp.set_params(flat)


@dataclass(frozen=True)
class FitSnapshot:
    """Everything needed to predict from one fitted surrogate.

    Immutable by contract: arrays are not written after construction.
    """

    kind: str
    space: PromptSpace
    prompt_ids: tuple[int, ...]
    fidelity_b: int
    target_mean: float
    target_std: float
    targets_std: np.ndarray
    input_lo: np.ndarray
    input_hi: np.ndarray
    pca_mean: np.ndarray | None
    pca_components: np.ndarray | None
    kernel: KernelParams
    features: object
    train_rep: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    mll_value: float

    @property
    def v_min(self) -> float:
        """Best (lowest) standardized training error; the improvement reference."""
        return float(self.targets_std.min())

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=np.float64) - self.target_mean) / self.target_std

    def unstandardize(self, std: np.ndarray) -> np.ndarray:
        return np.asarray(std, dtype=np.float64) * self.target_std + self.target_mean

    def predict(self, prompt_ids):
        return predict(self, prompt_ids)


def select_training_fidelity(ledger: EvaluationLedger, min_count: int = 4) -> int | None:
    """Largest subset size with at least ``min_count`` records, or None."""
    sizes = sorted({r.size for r in ledger.records}, reverse=True)
    for b in sizes:
        if sum(1 for r in ledger.records if r.size == b) >= min_count:
            return b
    return None


def design_slice(records: list[EvalRecord]) -> tuple[list[int], np.ndarray, int]:
    """Deduplicate a fidelity slice: latest record per prompt, first-seen order.

    Returns ``(prompt_ids, targets, size)`` and rejects mixed fidelities.
    """
    if not records:
        raise InsufficientDataError("empty design slice")
    sizes = {r.size for r in records}
    if len(sizes) != 1:
        raise ValidationError(f"design slice mixes fidelities: {sorted(sizes)}")
    latest: dict[int, float] = {}
    order: list[int] = []
    for r in records:
        if r.prompt_id not in latest:
            order.append(r.prompt_id)
        latest[r.prompt_id] = r.mean_error
    targets = np.array([latest[p] for p in order], dtype=np.float64)
    return order, targets, sizes.pop()


def _raw_inputs(space: PromptSpace, prompt_ids) -> np.ndarray:
    return space.concat_embeddings(prompt_ids)


def _normalize(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = np.maximum(hi - lo, 1e-12)
    return (x - lo) / span


def _build_features(kind: str, embedding_dim: int, rng: np.random.Generator):
    if kind in ("vanilla", "pca"):
        return _IdentityFeatures()
    if kind == "dk_structural":
        return _StructuralFeatures(ExtractorParams.create(embedding_dim, rng))
    if kind == "dk_flat":
        return _FlatFeatures(Mlp([2 * embedding_dim, 64, 32, 32, 10], rng, activate_last=False))
    raise ValidationError(f"unknown model kind: {kind!r}")


def _rep_dim(kind: str, features, n_inputs_dim: int) -> int:
    if kind in ("vanilla", "pca"):
        return n_inputs_dim
    if kind == "dk_structural":
        return features.extractor.latent_dim
    return features.mlp.dims[-1]


def _objective(x_in, v, features, raw_ls, raw_os, raw_noise, want_grads: bool):
    """MLL value (and gradients) at the given raw parameters.

    The objective is ``-v' K^-1 v - log|K|`` with
    ``K = s^2 * M(r) + noise * I`` on the feature representation of ``x_in``.
    """
    ls = np.exp(raw_ls)
    s2 = float(np.exp(raw_os[0]))
    noise = NOISE_FLOOR + float(np.exp(raw_noise[0]))

    h, cache = features.forward(x_in)
    r = _cross_r(h, h, ls)
    decay = np.exp(-SQRT5 * r)
    m = (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * decay
    k_f = s2 * m
    k = k_f + noise * np.eye(h.shape[0])

    ell = chol_factor(k)
    alpha = cho_solve((ell, True), v)
    logdet = 2.0 * float(np.sum(np.log(np.diag(ell))))
    mll = float(-v @ alpha - logdet)

    if not want_grads:
        return mll, None, (h, ell, alpha)

    k_inv = cho_solve((ell, True), np.eye(h.shape[0]))
    g = np.outer(alpha, alpha) - k_inv

    # d k / d r scaled so no 1/r appears: C = (5/3) s^2 (1 + sqrt5 r) e^{-sqrt5 r}.
    c = (5.0 / 3.0) * s2 * (1.0 + SQRT5 * r) * decay
    gc = g * c

    grad_noise = np.array([float(np.trace(g)) * (noise - NOISE_FLOOR)])
    grad_os = np.array([float(np.sum(g * k_f))])

    rs = gc.sum(axis=1)
    gch = gc @ h
    # sum_ij GC_ij (h_id - h_jd)^2 = 2 sum_i rs_i h_id^2 - 2 sum_i h_id (GC h)_id
    per_dim = 2.0 * (rs[:, None] * h * h).sum(axis=0) - 2.0 * (h * gch).sum(axis=0)
    grad_ls = per_dim / (ls * ls)

    grads = [grad_ls, grad_os, grad_noise]
    if features.trainable:
        d_h = -2.0 * (h * rs[:, None] - gch) / (ls * ls)
        grads.extend(features.backward(cache, d_h))
    return mll, grads, (h, ell, alpha)


class _Pack:
    """Flat-vector packing of parameter blocks, so AdamW runs on one array."""

    def __init__(self, shapes: list[tuple[int, ...]]):
        self.shapes = shapes
        sizes = [int(np.prod(s)) for s in shapes]
        self.offsets = np.cumsum([0] + sizes)

    def flatten(self, arrays: list[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.ravel(a) for a in arrays])

    def split(self, flat: np.ndarray) -> list[np.ndarray]:
        return [
            flat[self.offsets[k] : self.offsets[k + 1]].reshape(shape)
            for k, shape in enumerate(self.shapes)
        ]


def fit(
    kind: str,
    space: PromptSpace,
    records: list[EvalRecord],
    seed: int,
    max_epochs: int = MAX_EPOCHS,
) -> FitSnapshot:
    """Maximize the log marginal likelihood on one fidelity slice.

    Deterministic given ``seed``; returns the best parameters seen, so the
    result is never worse than the initialization.
    """
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind: {kind!r}")
    prompt_ids, raw_targets, size = design_slice(records)
    if len(prompt_ids) < 2:
        raise InsufficientDataError("need at least 2 distinct prompts to fit")

    t_mean = float(raw_targets.mean())
    t_std = max(float(raw_targets.std()), TARGET_STD_FLOOR)
    v = (raw_targets - t_mean) / t_std

    x_raw = _raw_inputs(space, prompt_ids)
    pca_mean = pca_components = None
    if kind == "pca":
        n_comp = min(PCA_MAX_COMPONENTS, len(prompt_ids) - 1, x_raw.shape[1])
        pca_mean = x_raw.mean(axis=0)
        centered = x_raw - pca_mean
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        pca_components = vt[:n_comp]
        x_raw = centered @ pca_components.T
    lo = x_raw.min(axis=0)
    hi = x_raw.max(axis=0)
    x_in = _normalize(x_raw, lo, hi)

    rng = np.random.default_rng(seed)
    features = _build_features(kind, space.embedding_dim, rng)
    k_dims = _rep_dim(kind, features, x_in.shape[1])

    feature_params = features.params()
    pack = _Pack([(k_dims,), (1,), (1,)] + [p.shape for p in feature_params])
    flat = pack.flatten([np.zeros(k_dims), np.zeros(1), np.full(1, INIT_LOG_NOISE)] + feature_params)

    def eval_at(theta: np.ndarray, want_grads: bool):
        parts = pack.split(theta)
        if features.trainable:
            features.set_params(parts[3:])
        mll, grads, aux = _objective(x_in, v, features, parts[0], parts[1], parts[2], want_grads)
        return mll, (pack.flatten(grads) if want_grads else None), aux

    opt = AdamWState(learning_rate=LEARNING_RATE)
    mll, gflat, _ = eval_at(flat, True)
    best_mll = mll
    best_flat = flat.copy()
    patience = 0

    for _ in range(max_epochs):
        # AdamW minimizes; feed it the gradient of the negated MLL.
        flat = adamw_step(opt, [flat], [-gflat])[0]
        mll, gflat, _ = eval_at(flat, True)
        if mll > best_mll + MLL_TOL:
            best_mll = mll
            best_flat = flat.copy()
            patience = 0
        else:
            patience += 1
            if patience >= MLL_PATIENCE:
                break

    mll, _, (h, ell, alpha) = eval_at(best_flat, False)
    raw_ls, raw_os, raw_noise = pack.split(best_flat)[:3]
    kernel = KernelParams(
        lengthscales=np.exp(raw_ls),
        outputscale=float(np.exp(raw_os[0])),
        noise=NOISE_FLOOR + float(np.exp(raw_noise[0])),
    )
    return FitSnapshot(
        kind=kind,
        space=space,
        prompt_ids=tuple(prompt_ids),
        fidelity_b=size,
        target_mean=t_mean,
        target_std=t_std,
        targets_std=v,
        input_lo=lo,
        input_hi=hi,
        pca_mean=pca_mean,
        pca_components=pca_components,
        kernel=kernel,
        features=features,
        train_rep=h,
        chol=ell,
        alpha=alpha,
        mll_value=mll,
    )


def _query_rep(snapshot: FitSnapshot, prompt_ids) -> np.ndarray:
    x = _raw_inputs(snapshot.space, prompt_ids)
    if snapshot.pca_components is not None:
        x = (x - snapshot.pca_mean) @ snapshot.pca_components.T
    x = _normalize(x, snapshot.input_lo, snapshot.input_hi)
    h, _ = snapshot.features.forward(x)
    return h


def predict(snapshot: FitSnapshot, prompt_ids) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation (standardized target space)."""
    h_query = _query_rep(snapshot, prompt_ids)
    k_star = _matern_from_r(
        _cross_r(snapshot.train_rep, h_query, snapshot.kernel.lengthscales),
        snapshot.kernel.outputscale,
    )
    mu = k_star.T @ snapshot.alpha
    w = solve_lower(snapshot.chol, k_star)
    var = snapshot.kernel.outputscale - np.sum(w * w, axis=0)
    sigma = np.sqrt(np.maximum(var, 0.0))
    if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
        raise NumericsError("posterior prediction produced non-finite values")
    return mu, sigma


def latent_alignment_score(snapshot: FitSnapshot, holdout: list[tuple[int, float]]) -> float:
    """Spearman rank correlation between predictions and held-out mean errors.

    The holdout prompts must be disjoint from the snapshot's training set.
    """
    if len(holdout) < 3:
        raise InsufficientDataError("need at least 3 holdout points")
    ids = [p for p, _ in holdout]
    if set(ids) & set(snapshot.prompt_ids):
        raise ValidationError("holdout overlaps the training prompts")
    truth = np.array([e for _, e in holdout], dtype=np.float64)
    mu, _ = predict(snapshot, ids)
    rho = spearmanr(mu, truth).statistic
    return float(rho)

"""Objective oracles: tabular replay, synthetic scenario generator, HTTP gateway.

All oracles share one contract: ``evaluate(prompt_id, instance_ids)`` returns
one loss in [0, 1] per requested validation instance, in request order.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import time

import numpy as np

from .errors import OracleUnavailableError, RangeError, ValidationError

__all__ = [
    "MatchPolicy",
    "TabularOracle",
    "SyntheticSpec",
    "GatewayConfig",
    "GatewayOracle",
    "exact_match_loss",
    "bootstrap_variance",
    "synthesize",
    "generate_synthetic",
]

GATEWAY_URL_ENV = "PROMPTBAND_GATEWAY_URL"

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchPolicy:
    """String normalization applied before exact-match comparison."""

    trim: bool = True
    case_fold: bool = True

    def normalize(self, text: str) -> str:
        if self.trim:
            text = text.strip()
        if self.case_fold:
            text = text.casefold()
        return text


def exact_match_loss(y: str, y_hat: str, policy: MatchPolicy = MatchPolicy()) -> int:
    """0 iff the normalized texts are equal, else 1."""
    return 0 if policy.normalize(y) == policy.normalize(y_hat) else 1


@dataclass(frozen=True)
class TabularOracle:
    """Replay oracle backed by precomputed loss matrices.

    ``valid_matrix`` is (n_prompts, n_valid); ``test_matrix`` is
    (n_prompts, n_test).  Lookups are pure, so evaluation is deterministic.
    """

    valid_matrix: np.ndarray
    test_matrix: np.ndarray
    deterministic: bool = True

    def __post_init__(self):
        for name, m in (("valid", self.valid_matrix), ("test", self.test_matrix)):
            m = np.asarray(m)
            if m.ndim != 2:
                raise ValidationError(f"{name} matrix must be 2-dimensional")
            if not np.isfinite(m).all() or np.any((m < 0.0) | (m > 1.0)):
                raise ValidationError(f"{name} matrix entries must be finite and in [0, 1]")
        if self.valid_matrix.shape[0] != self.test_matrix.shape[0]:
            raise ValidationError("valid and test matrices must cover the same prompts")

    @property
    def n_prompts(self) -> int:
        return self.valid_matrix.shape[0]

    @property
    def n_valid(self) -> int:
        return self.valid_matrix.shape[1]

    @property
    def n_test(self) -> int:
        return self.test_matrix.shape[1]

    def evaluate(self, prompt_id: int, instance_ids) -> list[float]:
        if not 0 <= prompt_id < self.n_prompts:
            raise RangeError(f"prompt_id {prompt_id} outside [0, {self.n_prompts})")
        ids = list(instance_ids)
        if any(j < 0 or j >= self.n_valid for j in ids):
            raise RangeError("instance id outside the validation set")
        return [float(self.valid_matrix[prompt_id, j]) for j in ids]

    def full_valid_means(self) -> np.ndarray:
        return self.valid_matrix.mean(axis=1)

    def full_test_means(self) -> np.ndarray:
        return self.test_matrix.mean(axis=1)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a desk-scale scenario with known ground truth.

    Prompt (i, e) answers each instance correctly with probability
    ``clamp(w1*a_i + w2*c_e + gamma*a_i*c_e, 0.02, 0.98)`` where the
    per-instruction and per-exemplar qualities a, c are Uniform[0, 1].
    Point losses are fixed Bernoulli draws.

    Embeddings are noisy linear images of the qualities.  Exemplars come in
    pairs sharing one content embedding (two orderings of the same example
    set, paired so the within-pair quality gap is large): within a pair, the
    quality difference is carried only on a small fixed signature direction
    (``order_scale``), so raw embedding distance barely separates the pair
    even though their qualities differ substantially.
    """

    n_instructions: int = 5
    n_exemplars: int = 50
    n_valid: int = 200
    n_test: int = 100
    embedding_dim: int = 16
    seed: int = 0
    w1: float = -0.55
    w2: float = 0.28
    gamma: float = 1.25
    instruction_noise: float = 0.5
    exemplar_noise: float = 0.5
    order_scale: float = 0.08
    order_jitter: float = 0.001
    name: str = "synthetic"

    def __post_init__(self):
        counts = (self.n_instructions, self.n_exemplars, self.n_valid, self.n_test, self.embedding_dim)
        if any(c <= 0 for c in counts):
            raise ValidationError("all synthetic scenario counts must be positive")
        if self.gamma < 0:
            raise ValidationError("interaction weight must be non-negative")


PROB_FLOOR = 0.02
PROB_CEIL = 0.98


def synthesize(spec: SyntheticSpec):
    """Materialize a synthetic scenario in memory.

    Returns ``(instructions, exemplars, oracle, expected_loss)`` where
    ``instructions``/``exemplars`` are (id, embedding) lists ready for
    ``build_prompt_space`` and ``expected_loss`` is the (n_prompts,) vector
    of true expected losses in lexicographic prompt order.
    """
    rng = np.random.default_rng(spec.seed)
    a = rng.uniform(0.0, 1.0, spec.n_instructions)
    c = rng.uniform(0.0, 1.0, spec.n_exemplars)
    u = rng.normal(0.0, 1.0, spec.embedding_dim)
    w = rng.normal(0.0, 1.0, spec.embedding_dim)
    q_dir = rng.normal(0.0, 1.0, spec.embedding_dim)
    inst_emb = a[:, None] * u[None, :] + spec.instruction_noise * rng.normal(
        size=(spec.n_instructions, spec.embedding_dim)
    )

    # Exemplars pair up into contents (two orderings of one example set).
    # Pairing by quality rank t <-> t + n/2 makes the within-pair quality gap
    # large while the pair shares one content embedding; the residual rides
    # only on the signature direction.
    n_half = spec.n_exemplars // 2
    rank = np.argsort(c, kind="stable")
    content = np.zeros(spec.n_exemplars, dtype=int)
    for t in range(n_half):
        content[rank[t]] = t
        content[rank[t + n_half]] = t
    if spec.n_exemplars % 2:
        content[rank[-1]] = n_half  # odd pool: the last exemplar stands alone
    n_contents = int(content.max()) + 1
    pair_mean = np.zeros(spec.n_exemplars)
    for t in range(n_contents):
        members = np.where(content == t)[0]
        pair_mean[members] = c[members].mean()
    content_noise = spec.exemplar_noise * rng.normal(size=(n_contents, spec.embedding_dim))
    ex_emb = (
        pair_mean[:, None] * w[None, :]
        + spec.order_scale * (c - pair_mean)[:, None] * q_dir[None, :]
        + content_noise[content]
        + spec.order_jitter * rng.normal(size=(spec.n_exemplars, spec.embedding_dim))
    )

    success = spec.w1 * a[:, None] + spec.w2 * c[None, :] + spec.gamma * a[:, None] * c[None, :]
    success = np.clip(success, PROB_FLOOR, PROB_CEIL)
    expected_loss = (1.0 - success).reshape(-1)

    best = expected_loss.min()
    if (expected_loss == best).sum() != 1:
        log.warning(
            "synthetic spec yields %d prompts tied at the best expected loss; "
            "selection quality comparisons on this scenario may be degenerate",
            int((expected_loss == best).sum()),
        )

    n_prompts = spec.n_instructions * spec.n_exemplars
    q = success.reshape(-1)
    valid = (rng.random((n_prompts, spec.n_valid)) >= q[:, None]).astype(np.float64)
    test = (rng.random((n_prompts, spec.n_test)) >= q[:, None]).astype(np.float64)

    instructions = [(i, inst_emb[i]) for i in range(spec.n_instructions)]
    exemplars = [(e, ex_emb[e]) for e in range(spec.n_exemplars)]
    oracle = TabularOracle(valid_matrix=valid, test_matrix=test)
    return instructions, exemplars, oracle, expected_loss


def generate_synthetic(spec: SyntheticSpec, out_dir) -> None:
    """Generate a synthetic scenario and write the on-disk scenario contract.

    Identical specs produce byte-identical files.
    """
    from .scenario import write_scenario_files

    instructions, exemplars, oracle, _ = synthesize(spec)
    write_scenario_files(out_dir, spec.name, instructions, exemplars, oracle)


def bootstrap_variance(row, k: int, n_replicates: int, seed: int) -> float:
    """Variance of the subset-mean estimator, by bootstrap.

    Draws ``n_replicates`` resamples of ``k`` losses (with replacement) from
    the row and returns the variance of the resample means.
    """
    row = np.asarray(row, dtype=np.float64)
    if not 1 <= k <= row.shape[0]:
        raise RangeError(f"k={k} outside [1, {row.shape[0]}]")
    if n_replicates < 2:
        raise RangeError("need at least 2 bootstrap replicates")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, row.shape[0], size=(n_replicates, k))
    means = row[idx].mean(axis=1)
    return float(means.var(ddof=1))


@dataclass(frozen=True)
class GatewayConfig:
    """Connection settings for a remote text-completion endpoint.

    The ``PROMPTBAND_GATEWAY_URL`` environment variable, when set, overrides
    ``endpoint``.
    """

    endpoint: str = ""
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_factor: float = 2.0
    concurrency: int = 4
    policy: MatchPolicy = field(default_factory=MatchPolicy)
    prompt_template: str = "{prompt}"
    input_template: str = "{input}"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValidationError("timeout must be positive")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be non-negative")

    def resolved_endpoint(self) -> str:
        return os.environ.get(GATEWAY_URL_ENV, "") or self.endpoint


class GatewayOracle:
    """Scores prompts by POSTing to an HTTP endpoint and exact-matching outputs.

    Wire format: request ``{"prompt": str, "input": str}``, response
    ``{"output": str}`` with status 200.  Non-200 responses and transport
    errors are retried with exponential backoff; a request that still fails
    aborts the evaluation, surfacing the losses computed so far.
    """

    def __init__(self, config: GatewayConfig, prompt_texts: list[str], instances: list[tuple[str, str]]):
        if not config.resolved_endpoint():
            raise ValidationError("gateway endpoint is not configured")
        self.config = config
        self.prompt_texts = list(prompt_texts)
        self.instances = list(instances)
        self.deterministic = False

    @property
    def n_prompts(self) -> int:
        return len(self.prompt_texts)

    @property
    def n_valid(self) -> int:
        return len(self.instances)

    def _call_once(self, prompt_text: str, input_text: str) -> str:
        import requests

        resp = requests.post(
            self.config.resolved_endpoint(),
            json={
                "prompt": self.config.prompt_template.format(prompt=prompt_text),
                "input": self.config.input_template.format(input=input_text),
            },
            timeout=self.config.timeout,
        )
        if resp.status_code != 200:
            raise OracleUnavailableError(f"gateway returned status {resp.status_code}")
        return str(resp.json()["output"])

    def _call_with_retries(self, prompt_text: str, input_text: str) -> str:
        last = None
        for attempt in range(self.config.max_retries + 1):
            try:
                return self._call_once(prompt_text, input_text)
            except Exception as exc:  # noqa: BLE001 - every failure is retriable here
                last = exc
                if attempt < self.config.max_retries:
                    time.sleep(self.config.backoff_base * self.config.backoff_factor**attempt)
        raise OracleUnavailableError(f"gateway failed after {self.config.max_retries} retries: {last}")

    def evaluate(self, prompt_id: int, instance_ids) -> list[float]:
        if not 0 <= prompt_id < self.n_prompts:
            raise RangeError(f"prompt_id {prompt_id} outside [0, {self.n_prompts})")
        ids = list(instance_ids)
        if any(j < 0 or j >= self.n_valid for j in ids):
            raise RangeError("instance id outside the validation set")
        prompt_text = self.prompt_texts[prompt_id]

        def one(j: int) -> float:
            input_text, target = self.instances[j]
            output = self._call_with_retries(prompt_text, input_text)
            return float(exact_match_loss(target, output, self.config.policy))

        partial: dict[int, float] = {}
        with ThreadPoolExecutor(max_workers=max(1, self.config.concurrency)) as pool:
            futures = [(j, pool.submit(one, j)) for j in ids]
            try:
                for j, fut in futures:
                    partial[j] = fut.result()
            except OracleUnavailableError as exc:
                for j, fut in futures:
                    if fut.done() and not fut.exception() and j not in partial:
                        partial[j] = fut.result()
                raise OracleUnavailableError(str(exc), partial=partial) from exc
        return [partial[j] for j in ids]

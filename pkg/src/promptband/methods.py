"""Selection-method runners behind one interface.

Full-fidelity methods (``rs``, ``bo``, ``bopca``, ``bops_flat``,
``bops_struct``) evaluate every chosen prompt on the whole validation set
and share a common seeded initial design.  Multi-fidelity methods (``sh``,
``hbps``, ``hbbops``) schedule validation-instance counts; ``hbbops`` adds
a model-based proposal inside each bracket.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import propose
from .domain import EvaluationLedger, FidelityChain, PromptSpace, RunTrace, TraceEvent
from .errors import ConfigError, InsufficientDataError, NumericsError
from .scheduler import (
    PolicySet,
    build_plan,
    evaluate_at,
    run_bracket,
    select_incumbent,
    sh_initial_budget,
    top_k,
)
from .surrogate import fit, select_training_fidelity

__all__ = ["MethodConfig", "METHOD_KINDS", "FULL_FIDELITY_KINDS", "run_method", "method_ladder", "LADDER_KINDS"]

log = logging.getLogger(__name__)

METHOD_KINDS = ("rs", "bo", "bopca", "bops_flat", "bops_struct", "sh", "hbps", "hbbops")
FULL_FIDELITY_KINDS = ("rs", "bo", "bopca", "bops_flat", "bops_struct")
LADDER_KINDS = ("rs", "bo", "bops_flat", "bops_struct", "hbps", "hbbops")

_SURROGATE_OF = {
    "bo": "vanilla",
    "bopca": "pca",
    "bops_flat": "dk_flat",
    "bops_struct": "dk_structural",
}

# Stream tags: one independent generator per concern, all derived from the
# run seed so that methods sharing a seed share e.g. the initial design.
_TAG_INIT = 11
_TAG_PROPOSAL = 23
_TAG_SUBSET = 37
_TAG_FIT = 53


@dataclass(frozen=True)
class MethodConfig:
    """One method run: what to run and every knob it needs."""

    kind: str
    seed: int = 0
    budget: int = 25  # in full-fidelity evaluation equivalents
    init_design: int = 10
    rho: float = 0.1
    b_min: int = 10
    eta: float = 2.0
    min_fidelity_obs: int = 4
    policies: PolicySet = field(default_factory=PolicySet)

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method kind: {self.kind!r}")
        if self.budget < 1:
            raise ConfigError("budget must cover at least one full-fidelity evaluation")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        for name in ("init_design", "b_min", "min_fidelity_obs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.eta <= 1:
            raise ConfigError("eta must exceed 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if self.kind in FULL_FIDELITY_KINDS and self.kind != "rs" and self.budget <= self.init_design:
            raise ConfigError("budget must exceed the initial design for model-based full-fidelity methods")


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def _fit_seed(seed: int, counter: int) -> int:
    return int(np.random.SeedSequence([seed, _TAG_FIT, counter]).generate_state(1)[0])


class _Run:
    def __init__(self, config: MethodConfig, space: PromptSpace, oracle, chain: FidelityChain, scenario: str):
        self.config = config
        self.space = space
        self.oracle = oracle
        self.chain = chain
        self.budget_calls = config.budget * chain.n_valid
        self.ledger = EvaluationLedger(cache_enabled=config.policies.caching)
        self.trace = RunTrace(
            method=config.kind, seed=config.seed, scenario=scenario, budget_calls=self.budget_calls
        )
        self.init_rng = _rng(config.seed, _TAG_INIT)
        self.prop_rng = _rng(config.seed, _TAG_PROPOSAL)
        self.subset_rng = _rng(config.seed, _TAG_SUBSET)
        self.fit_counter = 0

    def emit(self) -> None:
        pid, err, fid = select_incumbent(self.ledger, self.config.policies.incumbent)
        self.trace.append(TraceEvent(self.ledger.calls_used, pid, err, fid))

    def remaining(self) -> int:
        return self.budget_calls - self.ledger.calls_used

    def fit_surrogate(self, kind: str, size: int):
        """Fit on the deduplicated slice at fidelity ``size``; None on failure."""
        records = self.ledger.records_at(size)
        self.fit_counter += 1
        try:
            return fit(kind, self.space, records, _fit_seed(self.config.seed, self.fit_counter))
        except (InsufficientDataError, NumericsError) as exc:
            log.warning("surrogate fit failed (%s); falling back to random proposal", exc)
            return None


def _run_full_fidelity(run: _Run) -> None:
    config, space, chain = run.config, run.space, run.chain
    if config.budget > space.n_prompts:
        raise ConfigError(
            f"budget {config.budget} exceeds the {space.n_prompts} distinct prompts available"
        )
    subset_full = chain.subset(chain.n_valid)
    evaluated: set[int] = set()

    def do_eval(pid: int) -> None:
        err = evaluate_at(run.oracle, run.ledger, pid, subset_full, run.budget_calls)
        if err is None:
            return
        evaluated.add(pid)
        run.emit()

    init_size = min(config.init_design, config.budget, space.n_prompts)
    for pid in run.init_rng.choice(space.n_prompts, size=init_size, replace=False):
        if run.remaining() <= 0:
            return
        do_eval(int(pid))

    surrogate_kind = _SURROGATE_OF.get(config.kind)
    while run.remaining() > 0:
        candidates = [p for p in range(space.n_prompts) if p not in evaluated]
        snapshot = None
        if surrogate_kind is not None and len(run.ledger.records_at(chain.n_valid)) >= 2:
            snapshot = run.fit_surrogate(surrogate_kind, chain.n_valid)
        v_min = snapshot.v_min if snapshot is not None else 0.0
        proposal = propose(snapshot, candidates, v_min, run.prop_rng, rho=0.0)
        do_eval(proposal.prompt_id)


def _run_hyperband(run: _Run) -> None:
    config, space, chain = run.config, run.space, run.chain
    plan = build_plan(chain.n_valid, min(config.b_min, chain.n_valid), config.eta)
    all_prompts = list(range(space.n_prompts))
    model_based = config.kind == "hbbops" and config.rho < 1.0

    def proposer(proposed: set[int]):
        candidates = [p for p in all_prompts if p not in proposed]
        if not candidates:
            return None
        snapshot = None
        if model_based:
            size = select_training_fidelity(run.ledger, config.min_fidelity_obs)
            if size is not None:
                snapshot = run.fit_surrogate("dk_structural", size)
        v_min = snapshot.v_min if snapshot is not None else 0.0
        return propose(snapshot, candidates, v_min, run.prop_rng, rho=config.rho).prompt_id

    while run.remaining() > 0:
        calls_before = run.ledger.calls_used
        for bracket in plan.brackets:
            if run.remaining() <= 0:
                break
            run_bracket(
                bracket,
                proposer,
                run.oracle,
                run.ledger,
                chain,
                policies=config.policies,
                trace=run.trace,
                budget_calls=run.budget_calls,
                subset_rng=run.subset_rng,
            )
        if run.ledger.calls_used == calls_before:
            log.warning("scheduler pass made no progress; stopping below budget")
            break


def _run_successive_halving(run: _Run) -> None:
    config, space, chain = run.config, run.space, run.chain
    n_valid = chain.n_valid
    b0 = sh_initial_budget(run.budget_calls, space.n_prompts)

    while run.remaining() > 0:
        calls_before = run.ledger.calls_used
        active = list(range(space.n_prompts))
        b = min(b0, n_valid)
        while run.remaining() > 0:
            errors = []
            kept = []
            for pid in active:
                if run.remaining() <= 0:
                    break
                err = evaluate_at(run.oracle, run.ledger, pid, chain.subset(b), run.budget_calls)
                if err is None:
                    break
                run.emit()
                kept.append(pid)
                errors.append(err)
            if len(kept) <= 1:
                break
            active = top_k(kept, errors, max(1, math.ceil(len(kept) / 2)))
            if len(active) <= 1:
                break
            b = min(2 * b, n_valid)
        if run.ledger.calls_used == calls_before:
            log.warning("scheduler pass made no progress; stopping below budget")
            break


def run_method(
    config: MethodConfig,
    space: PromptSpace,
    oracle,
    chain: FidelityChain,
    scenario: str = "",
) -> RunTrace:
    """Execute one method until its call budget is consumed.

    Deterministic: identical ``(config, space, oracle, chain)`` produce
    identical traces.
    """
    if oracle.n_prompts != space.n_prompts:
        raise ConfigError(
            f"oracle covers {oracle.n_prompts} prompts but the space has {space.n_prompts}"
        )
    if oracle.n_valid != chain.n_valid:
        raise ConfigError("oracle and fidelity chain disagree on the validation set size")
    run = _Run(config, space, oracle, chain, scenario)
    if config.kind in FULL_FIDELITY_KINDS:
        _run_full_fidelity(run)
    elif config.kind in ("hbps", "hbbops"):
        _run_hyperband(run)
    elif config.kind == "sh":
        _run_successive_halving(run)
    else:  # pragma: no cover - guarded by MethodConfig
        raise ConfigError(f"unknown method kind: {config.kind!r}")
    return run.trace


def _chain_for_seed(scenario_chain_seed: int, seed: int, n_valid: int) -> FidelityChain:
    chain_seed = np.random.SeedSequence([scenario_chain_seed, seed, 7])
    return FidelityChain.from_seed(chain_seed, n_valid, b_min=1)


def _ladder_one(args):
    config, space, oracle, chain_seed, scenario = args
    chain = _chain_for_seed(chain_seed, config.seed, oracle.n_valid)
    trace = run_method(config, space, oracle, chain, scenario)
    return trace


def final_normalized_valid_error(trace: RunTrace, oracle) -> float:
    """Normalized full-validation error of the final incumbent."""
    means = oracle.full_valid_means()
    best = float(means.min())
    worst = float(means.max())
    incumbent = trace.events[-1].incumbent_prompt_id
    return (float(means[incumbent]) - best) / (worst - best)


def method_ladder(
    space: PromptSpace,
    oracle,
    seeds,
    budget: int = 25,
    jobs: int = 1,
    scenario: str = "",
    chain_seed: int = 0,
    kinds=LADDER_KINDS,
) -> dict[str, dict]:
    """Run the ablation ladder and report final normalized validation errors.

    Runs every method in ``kinds`` on every seed (paired: same seed implies
    the same fidelity chain and, for full-fidelity methods, the same initial
    design) and returns per-method means with standard errors.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 10:
        raise ConfigError("the method ladder needs at least 10 seeds")
    tasks = [
        (MethodConfig(kind=kind, seed=seed, budget=budget), space, oracle, chain_seed, scenario)
        for kind in kinds
        for seed in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_ladder_one, tasks))
    else:
        traces = [_ladder_one(t) for t in tasks]

    out: dict[str, dict] = {}
    idx = 0
    for kind in kinds:
        finals = []
        kind_traces = []
        for _ in seeds:
            kind_traces.append(traces[idx])
            finals.append(final_normalized_valid_error(traces[idx], oracle))
            idx += 1
        arr = np.asarray(finals)
        se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        out[kind] = {"finals": finals, "mean": float(arr.mean()), "se": se, "traces": kind_traces}
    return out

"""Successive-halving and bracket schedules over validation-instance counts.

``build_plan`` materializes the full bracket/stage table; ``run_bracket``
executes one bracket against an oracle with configurable incumbent, subset,
and pairing policies (the defaults match the main method, the alternatives
exist for ablations).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .domain import EvaluationLedger, FidelityChain, RunTrace, TraceEvent, record_evaluation
from .errors import InsufficientDataError, PlanError, RangeError

__all__ = [
    "Stage",
    "Bracket",
    "HyperbandPlan",
    "PolicySet",
    "build_plan",
    "top_k",
    "sh_initial_budget",
    "run_bracket",
    "select_incumbent",
    "evaluate_at",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stage:
    index: int
    instances: int  # per-prompt validation instances (b)
    prompts: int  # number of prompts evaluated in this stage (n)


@dataclass(frozen=True)
class Bracket:
    index: int  # s, counting down from s_max
    stages: tuple[Stage, ...]


@dataclass(frozen=True)
class HyperbandPlan:
    n_valid: int
    b_min_requested: int
    b_min_effective: int
    eta: float
    s_max: int
    budget_per_bracket: int  # B = (s_max + 1) * n_valid
    brackets: tuple[Bracket, ...]

    def levels(self) -> tuple[int, ...]:
        out = set()
        for br in self.brackets:
            for st in br.stages:
                out.add(st.instances)
        return tuple(sorted(out))

    def rows(self) -> list[tuple[int, int, int, int]]:
        """(bracket, stage, instances, prompts) rows in execution order."""
        return [
            (br.index, st.index, st.instances, st.prompts)
            for br in self.brackets
            for st in br.stages
        ]


def _as_int(x: float, what: str) -> int:
    if abs(x - round(x)) > 1e-9:
        raise PlanError(f"{what} = {x} is not an integer")
    return int(round(x))


def build_plan(n_valid: int, b_min: int, eta: float) -> HyperbandPlan:
    """Exact bracket/stage table for the given fidelity range.

    Subset sizes must come out integral: the number of brackets is reduced
    (never enlarged) until every level ``n_valid / eta^s`` is an integer,
    which effectively rounds ``b_min`` up to the nearest ``n_valid / eta^k``.
    The adjustment is reported, not silent.
    """
    if n_valid < 1 or b_min < 1:
        raise RangeError("n_valid and b_min must be positive")
    if b_min > n_valid:
        raise RangeError(f"b_min={b_min} exceeds n_valid={n_valid}")
    if eta <= 1:
        raise RangeError("eta must exceed 1")

    s_max = int(math.floor(math.log(n_valid / b_min, eta) + 1e-12))
    while s_max > 0:
        try:
            for s in range(s_max + 1):
                _as_int(n_valid / eta**s, "subset size")
            break
        except PlanError:
            s_max -= 1
    b_min_eff = _as_int(n_valid / eta**s_max, "minimum subset size")
    if b_min_eff != b_min:
        log.warning(
            "b_min adjusted from %d to %d so all subset sizes divide n_valid=%d at eta=%g",
            b_min,
            b_min_eff,
            n_valid,
            eta,
        )

    budget = (s_max + 1) * n_valid
    brackets = []
    for s in range(s_max, -1, -1):
        n = math.ceil((budget / n_valid) * eta**s / (s + 1) - 1e-12)
        b = _as_int(n_valid / eta**s, "subset size")
        stages = [Stage(index=0, instances=b, prompts=n)]
        for i in range(1, s + 1):
            n_i = int(math.floor(n / eta**i + 1e-12))
            b_i = _as_int(b * eta**i, "subset size")
            stages.append(Stage(index=i, instances=b_i, prompts=n_i))
        brackets.append(Bracket(index=s, stages=tuple(stages)))
    return HyperbandPlan(
        n_valid=n_valid,
        b_min_requested=b_min,
        b_min_effective=b_min_eff,
        eta=eta,
        s_max=s_max,
        budget_per_bracket=budget,
        brackets=tuple(brackets),
    )


def top_k(prompts: list[int], errors: list[float], k: int) -> list[int]:
    """The ``k`` lowest-error prompts, ordered by (error, earlier position).

    Stable: equal errors keep their original proposal order.
    """
    if len(prompts) != len(errors):
        raise RangeError("prompts and errors must align")
    if not 0 <= k <= len(prompts):
        raise RangeError(f"k={k} outside [0, {len(prompts)}]")
    order = sorted(range(len(prompts)), key=lambda i: (errors[i], i, prompts[i]))
    return [prompts[i] for i in order[:k]]


def sh_initial_budget(b_total: int, n_prompts: int) -> int:
    """Per-prompt starting instances for a plain successive-halving run."""
    if n_prompts < 2:
        raise RangeError("successive halving needs at least 2 prompts")
    return max(1, int(math.floor(b_total / (n_prompts * math.log2(n_prompts)))))


@dataclass(frozen=True)
class PolicySet:
    """Scheduler design choices; the defaults are the recommended settings."""

    incumbent: str = "highest_fidelity"  # or "lowest_error"
    subset: str = "superset"  # or "independent"
    pairing: str = "paired"  # or "per_prompt"
    caching: bool = True

    def __post_init__(self):
        if self.incumbent not in ("highest_fidelity", "lowest_error"):
            raise RangeError(f"unknown incumbent policy: {self.incumbent!r}")
        if self.subset not in ("superset", "independent"):
            raise RangeError(f"unknown subset policy: {self.subset!r}")
        if self.pairing not in ("paired", "per_prompt"):
            raise RangeError(f"unknown pairing policy: {self.pairing!r}")


def select_incumbent(ledger: EvaluationLedger, policy: str = "highest_fidelity"):
    """Current best prompt: ``(prompt_id, error, fidelity)``.

    ``highest_fidelity`` restricts to records at the largest subset size seen
    so far; ``lowest_error`` takes the global minimum regardless of fidelity.
    Ties break toward the lowest prompt id.
    """
    if not ledger.records:
        raise InsufficientDataError("no evaluations yet; no incumbent")
    if policy == "highest_fidelity":
        b = ledger.max_size()
        pool = [r for r in ledger.records if r.size == b]
    elif policy == "lowest_error":
        pool = ledger.records
    else:
        raise RangeError(f"unknown incumbent policy: {policy!r}")
    latest: dict[tuple[int, int], float] = {}
    for r in pool:
        latest[(r.prompt_id, r.size)] = r.mean_error
    key = min(latest, key=lambda pk: (latest[pk], pk[0]))
    return key[0], latest[key], key[1]


class _SubsetSource:
    """Resolves which validation instances a (prompt, stage) evaluation uses.

    The default superset+paired policy reads nested prefixes off the global
    chain.  Ablation policies draw random subsets: per stage (paired) or per
    prompt, nested (superset) or fresh (independent).
    """

    def __init__(self, chain: FidelityChain, policies: PolicySet, rng: np.random.Generator | None):
        self.chain = chain
        self.policies = policies
        self.rng = rng
        self._stage_subsets: dict[tuple[int, int], list[int]] = {}
        self._per_prompt_chains: dict[int, list[int]] = {}

    def _random_perm(self) -> list[int]:
        if self.rng is None:
            raise RangeError("ablation subset policies need an rng")
        return [int(x) for x in self.rng.permutation(self.chain.n_valid)]

    def subset_for(self, prompt_id: int, b: int, stage_key: tuple[int, int]) -> list[int]:
        pol = self.policies
        if pol.subset == "superset" and pol.pairing == "paired":
            return self.chain.subset(b)
        if pol.subset == "superset" and pol.pairing == "per_prompt":
            if prompt_id not in self._per_prompt_chains:
                self._per_prompt_chains[prompt_id] = self._random_perm()
            return self._per_prompt_chains[prompt_id][:b]
        if pol.subset == "independent" and pol.pairing == "paired":
            if stage_key not in self._stage_subsets:
                self._stage_subsets[stage_key] = self._random_perm()
            return self._stage_subsets[stage_key][:b]
        # independent + per_prompt: fresh draw every evaluation
        return self._random_perm()[:b]


def evaluate_at(
    oracle,
    ledger: EvaluationLedger,
    prompt_id: int,
    subset: list[int],
    budget_calls: int | None = None,
) -> float | None:
    """Evaluate one prompt on a subset, cache-aware and budget-capped.

    Uncached instances are fetched from the oracle; if fewer calls remain in
    the budget than needed, the subset is truncated so the run lands exactly
    on the budget.  Returns the recorded mean error, or None when no budget
    remains at all.
    """
    new_ids = ledger.uncached_instances(prompt_id, subset)
    if budget_calls is not None:
        remaining = budget_calls - ledger.calls_used
        if remaining <= 0:
            return None
        if len(new_ids) > remaining:
            new_ids = new_ids[:remaining]
            if ledger.cache_enabled:
                keep_new = set(new_ids)
                subset = [j for j in subset if ledger.cached(prompt_id, j) or j in keep_new]
            else:
                subset = list(new_ids)
    if new_ids:
        losses_new = dict(zip(new_ids, oracle.evaluate(prompt_id, new_ids)))
    else:
        losses_new = {}
    losses = [
        losses_new[j] if j in losses_new else ledger.pointwise[(prompt_id, j)] for j in subset
    ]
    return record_evaluation(ledger, prompt_id, subset, losses)


def run_bracket(
    bracket: Bracket,
    proposer,
    oracle,
    ledger: EvaluationLedger,
    chain: FidelityChain,
    policies: PolicySet = PolicySet(),
    trace: RunTrace | None = None,
    budget_calls: int | None = None,
    subset_rng: np.random.Generator | None = None,
) -> list[int]:
    """Run one bracket: propose stage-0 prompts, then successively halve.

    ``proposer`` is called with the set of prompts already proposed in this
    bracket and must return a prompt id, or None when it has no candidates
    left.  Returns the prompts surviving the final stage.  A trace event is
    appended after every evaluation.
    """
    source = _SubsetSource(chain, policies, subset_rng)

    def emit():
        if trace is not None:
            pid, err, fid = select_incumbent(ledger, policies.incumbent)
            trace.append(TraceEvent(ledger.calls_used, pid, err, fid))

    stage0 = bracket.stages[0]
    active: list[int] = []
    errors: list[float] = []
    proposed: set[int] = set()
    for _ in range(stage0.prompts):
        if budget_calls is not None and ledger.calls_used >= budget_calls:
            return active
        pid = proposer(proposed)
        if pid is None:
            log.warning(
                "proposer exhausted after %d of %d stage-0 prompts in bracket %d",
                len(active),
                stage0.prompts,
                bracket.index,
            )
            break
        proposed.add(pid)
        subset = source.subset_for(pid, stage0.instances, (bracket.index, 0))
        err = evaluate_at(oracle, ledger, pid, subset, budget_calls)
        if err is None:
            return active
        emit()
        active.append(pid)
        errors.append(err)

    for stage in bracket.stages[1:]:
        active = top_k(active, errors, min(stage.prompts, len(active)))
        errors = []
        next_active = []
        for pid in active:
            if budget_calls is not None and ledger.calls_used >= budget_calls:
                return next_active
            subset = source.subset_for(pid, stage.instances, (bracket.index, stage.index))
            err = evaluate_at(oracle, ledger, pid, subset, budget_calls)
            if err is None:
                return next_active
            emit()
            next_active.append(pid)
            errors.append(err)
        active = next_active
    return active

"""Core domain types: prompt pools, fidelity chains, evaluation ledgers, traces.

Prompts are (instruction, exemplar) pairs drawn from the full Cartesian
product of the two pools.  Evaluations are cached per (prompt, instance)
pair so that extending a prompt to a larger validation subset only pays
for the instances not seen before.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlignmentError,
    DimensionError,
    EmptySpaceError,
    InsufficientDataError,
    RangeError,
    ValidationError,
)

__all__ = [
    "PromptSpace",
    "FidelityChain",
    "EvaluationLedger",
    "EvalRecord",
    "TraceEvent",
    "RunTrace",
    "build_prompt_space",
    "fidelity_subset",
    "record_evaluation",
]


@dataclass(frozen=True)
class PromptSpace:
    """The finite pool of prompts: every instruction crossed with every exemplar.

    ``instruction_embeddings`` and ``exemplar_embeddings`` are dense float64
    matrices whose rows align with ``instruction_ids`` / ``exemplar_ids``.
    ``prompts[p] == (i, e)`` maps a prompt id to its component ids; prompt
    ids are dense ``0..n-1`` in lexicographic ``(instruction_id, exemplar_id)``
    order.
    """

    instruction_ids: tuple[int, ...]
    exemplar_ids: tuple[int, ...]
    instruction_embeddings: np.ndarray
    exemplar_embeddings: np.ndarray
    prompts: tuple[tuple[int, int], ...]
    embedding_dim: int

    def __post_init__(self):
        irow = {iid: k for k, iid in enumerate(self.instruction_ids)}
        erow = {eid: k for k, eid in enumerate(self.exemplar_ids)}
        # Per-prompt embedding row indices, for vectorized lookups.
        object.__setattr__(self, "_prompt_irows", np.array([irow[i] for i, _ in self.prompts]))
        object.__setattr__(self, "_prompt_erows", np.array([erow[e] for _, e in self.prompts]))

    @property
    def n_prompts(self) -> int:
        return len(self.prompts)

    def components(self, prompt_id: int) -> tuple[int, int]:
        return self.prompts[prompt_id]

    def split_embeddings(self, prompt_ids) -> tuple[np.ndarray, np.ndarray]:
        """Instruction and exemplar embedding matrices for the given prompts."""
        pids = np.asarray(prompt_ids, dtype=np.intp)
        zi = self.instruction_embeddings[self._prompt_irows[pids]]
        ze = self.exemplar_embeddings[self._prompt_erows[pids]]
        return zi, ze

    def concat_embeddings(self, prompt_ids) -> np.ndarray:
        """Whole-prompt embedding: instruction and exemplar halves concatenated."""
        zi, ze = self.split_embeddings(prompt_ids)
        return np.concatenate([zi, ze], axis=1)


def build_prompt_space(
    instructions: list[tuple[int, np.ndarray]],
    exemplars: list[tuple[int, np.ndarray]],
) -> PromptSpace:
    """Build the full Cartesian pool from the two component lists.

    Prompt ids are assigned densely in lexicographic order of
    ``(instruction_id, exemplar_id)``.
    """
    if not instructions or not exemplars:
        raise EmptySpaceError("instruction and exemplar lists must be non-empty")

    inst = sorted(instructions, key=lambda t: t[0])
    exem = sorted(exemplars, key=lambda t: t[0])

    dims = {np.atleast_1d(v).shape[0] for _, v in inst} | {np.atleast_1d(v).shape[0] for _, v in exem}
    if len(dims) != 1:
        raise DimensionError(f"embeddings have mixed lengths: {sorted(dims)}")
    d = dims.pop()

    iemb = np.asarray([np.asarray(v, dtype=np.float64) for _, v in inst])
    eemb = np.asarray([np.asarray(v, dtype=np.float64) for _, v in exem])
    if not (np.isfinite(iemb).all() and np.isfinite(eemb).all()):
        raise ValidationError("embeddings must be finite")

    iids = tuple(int(i) for i, _ in inst)
    eids = tuple(int(e) for e, _ in exem)
    if len(set(iids)) != len(iids) or len(set(eids)) != len(eids):
        raise ValidationError("instruction/exemplar ids must be unique")

    prompts = tuple((i, e) for i in iids for e in eids)
    return PromptSpace(
        instruction_ids=iids,
        exemplar_ids=eids,
        instruction_embeddings=iemb,
        exemplar_embeddings=eemb,
        prompts=prompts,
        embedding_dim=int(d),
    )


@dataclass(frozen=True)
class FidelityChain:
    """A nested family of validation subsets.

    ``subset(b)`` is always the first ``b`` entries of one fixed permutation,
    so subsets at increasing sizes form a chain: evaluations done at a lower
    fidelity stay valid when a prompt advances to a higher one.
    """

    permutation: tuple[int, ...]
    n_valid: int
    b_min: int
    levels: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.permutation) != list(range(self.n_valid)):
            raise ValidationError("permutation must cover 0..n_valid-1 exactly once")
        if not (1 <= self.b_min <= self.n_valid):
            raise RangeError(f"b_min={self.b_min} outside [1, {self.n_valid}]")
        if self.n_valid not in self.levels:
            raise ValidationError("levels must contain n_valid")
        for b in self.levels:
            if not (self.b_min <= b <= self.n_valid):
                raise RangeError(f"level {b} outside [b_min, n_valid]")

    @classmethod
    def from_seed(cls, seed, n_valid: int, b_min: int, levels=None) -> "FidelityChain":
        rng = np.random.default_rng(seed)
        perm = tuple(int(x) for x in rng.permutation(n_valid))
        lv = tuple(sorted(set(levels))) if levels is not None else (n_valid,)
        return cls(permutation=perm, n_valid=n_valid, b_min=b_min, levels=lv)

    def subset(self, b: int) -> list[int]:
        return fidelity_subset(self, b)


def fidelity_subset(chain: FidelityChain, b: int) -> list[int]:
    """First ``b`` entries of the chain's permutation (deterministic prefix)."""
    if not (chain.b_min <= b <= chain.n_valid):
        raise RangeError(f"subset size {b} outside [{chain.b_min}, {chain.n_valid}]")
    return list(chain.permutation[:b])


@dataclass(frozen=True)
class EvalRecord:
    """One aggregated evaluation: a prompt's mean loss over a subset of size ``size``."""

    prompt_id: int
    size: int
    mean_error: float
    order: int


@dataclass
class EvaluationLedger:
    """Point-wise loss cache plus the ordered aggregated design data.

    ``calls_used`` counts oracle invocations.  With caching enabled a
    (prompt, instance) pair is charged at most once; with caching disabled
    every evaluation is charged in full (used by scheduler ablations).
    """

    pointwise: dict[tuple[int, int], float] = field(default_factory=dict)
    records: list[EvalRecord] = field(default_factory=list)
    calls_used: int = 0
    cache_enabled: bool = True

    def cached(self, prompt_id: int, instance_id: int) -> bool:
        return (prompt_id, instance_id) in self.pointwise

    def uncached_instances(self, prompt_id: int, instances) -> list[int]:
        if not self.cache_enabled:
            return list(instances)
        pw = self.pointwise
        return [j for j in instances if (prompt_id, j) not in pw]

    def records_at(self, size: int) -> list[EvalRecord]:
        return [r for r in self.records if r.size == size]

    def max_size(self) -> int:
        if not self.records:
            raise InsufficientDataError("ledger holds no records")
        return max(r.size for r in self.records)


def record_evaluation(
    ledger: EvaluationLedger,
    prompt_id: int,
    subset: list[int],
    losses,
) -> float:
    """Commit one evaluation: cache point losses, append the aggregated record.

    ``losses`` must align with ``subset``.  Returns the mean error.  Only
    previously uncached (prompt, instance) pairs increase ``calls_used``
    (all pairs when the ledger cache is disabled).
    """
    losses = np.asarray(losses, dtype=np.float64)
    if losses.shape != (len(subset),):
        raise AlignmentError(f"{len(subset)} instances but {losses.shape} losses")
    if losses.size == 0:
        raise ValidationError("cannot record an empty evaluation")
    if not np.isfinite(losses).all() or np.any((losses < 0.0) | (losses > 1.0)):
        raise ValidationError("losses must lie in [0, 1]")

    if ledger.cache_enabled:
        new = sum(1 for j in subset if (prompt_id, j) not in ledger.pointwise)
    else:
        new = len(subset)
    for j, l in zip(subset, losses):
        ledger.pointwise[(prompt_id, int(j))] = float(l)

    mean_error = float(losses.mean())
    ledger.records.append(
        EvalRecord(prompt_id=prompt_id, size=len(subset), mean_error=mean_error, order=len(ledger.records))
    )
    ledger.calls_used += new
    return mean_error


@dataclass(frozen=True)
class TraceEvent:
    calls_used: int
    incumbent_prompt_id: int
    incumbent_error: float
    incumbent_fidelity: int


@dataclass
class RunTrace:
    """Time-stamped incumbent trajectory keyed by cumulative oracle calls."""

    method: str
    seed: int
    scenario: str = ""
    budget_calls: int = 0
    events: list[TraceEvent] = field(default_factory=list)

    def append(self, event: TraceEvent) -> None:
        if self.events and event.calls_used < self.events[-1].calls_used:
            raise ValidationError("trace events must be ordered by calls_used")
        self.events.append(event)

    def last_at_or_before(self, calls: int) -> TraceEvent | None:
        hit = None
        for ev in self.events:
            if ev.calls_used <= calls:
                hit = ev
            else:
                break
        return hit

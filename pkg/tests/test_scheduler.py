"""Bracket schedules, halving, budget accounting, incumbent policies."""

import numpy as np
import pytest

from promptband.domain import EvalRecord, EvaluationLedger, FidelityChain, RunTrace
from promptband.errors import InsufficientDataError, RangeError
from promptband.oracle import TabularOracle
from promptband.scheduler import (
    PolicySet,
    build_plan,
    run_bracket,
    select_incumbent,
    sh_initial_budget,
    top_k,
)

REFERENCE_ROWS = [
    (3, 0, 10, 8),
    (3, 1, 20, 4),
    (3, 2, 40, 2),
    (3, 3, 80, 1),
    (2, 0, 20, 6),
    (2, 1, 40, 3),
    (2, 2, 80, 1),
    (1, 0, 40, 4),
    (1, 1, 80, 2),
    (0, 0, 80, 4),
]


class TestBuildPlan:
    def test_reference_schedule_80_10_2(self):
        plan = build_plan(80, 10, 2.0)
        assert plan.rows() == REFERENCE_ROWS

    def test_derived_quantities(self):
        plan = build_plan(80, 10, 2.0)
        assert plan.s_max == 3
        assert plan.budget_per_bracket == 320

    def test_degenerate_single_bracket(self):
        plan = build_plan(10, 10, 2.0)
        assert plan.rows() == [(0, 0, 10, 1)]

    def test_integrality_adjustment_reported(self, caplog):
        with caplog.at_level("WARNING"):
            plan = build_plan(200, 10, 2.0)
        assert plan.b_min_effective == 25
        assert plan.levels() == (25, 50, 100, 200)
        assert any("adjusted" in rec.message for rec in caplog.records)

    def test_instances_strictly_increase_within_bracket(self):
        plan = build_plan(128, 4, 2.0)
        for bracket in plan.brackets:
            sizes = [st.instances for st in bracket.stages]
            assert sizes == sorted(set(sizes))
            counts = [st.prompts for st in bracket.stages]
            assert counts == sorted(counts, reverse=True)
            assert bracket.stages[-1].instances == plan.n_valid

    def test_range_errors(self):
        with pytest.raises(RangeError):
            build_plan(80, 100, 2.0)
        with pytest.raises(RangeError):
            build_plan(80, 10, 1.0)


class TestTopK:
    def test_halving(self):
        survivors = top_k(list(range(8)), [0.8, 0.1, 0.5, 0.3, 0.9, 0.2, 0.6, 0.4], 4)
        assert len(survivors) == 4

    def test_tie_breaks_by_position(self):
        survivors = top_k([10, 11, 12, 13], [0.2, 0.1, 0.2, 0.3], 2)
        assert survivors == [11, 10]

    def test_k_zero(self):
        assert top_k([1, 2], [0.1, 0.2], 0) == []


class TestShInitialBudget:
    def test_formula(self):
        assert sh_initial_budget(1000, 16) == 15

    def test_floor_guard(self):
        assert sh_initial_budget(64, 16) == 1

    def test_two_prompts(self):
        assert sh_initial_budget(100, 2) == 50


def _tabular(n_prompts=16, n_valid=80, seed=0):
    rng = np.random.default_rng(seed)
    return TabularOracle(
        valid_matrix=rng.integers(0, 2, (n_prompts, n_valid)).astype(float),
        test_matrix=rng.integers(0, 2, (n_prompts, 10)).astype(float),
    )


def _sequential_proposer(pool):
    pool = list(pool)

    def proposer(proposed):
        for p in pool:
            if p not in proposed:
                return p
        return None

    return proposer


class TestRunBracket:
    def test_superset_caching_cost(self):
        plan = build_plan(80, 10, 2.0)
        oracle = _tabular()
        ledger = EvaluationLedger()
        chain = FidelityChain.from_seed(0, 80, 1)
        run_bracket(plan.brackets[0], _sequential_proposer(range(16)), oracle, ledger, chain)
        # 8*10 new + 4*10 extension + 2*20 + 1*40
        assert ledger.calls_used == 200

    def test_independent_no_cache_cost(self):
        plan = build_plan(80, 10, 2.0)
        oracle = _tabular()
        ledger = EvaluationLedger(cache_enabled=False)
        chain = FidelityChain.from_seed(0, 80, 1)
        policies = PolicySet(subset="independent", pairing="paired", caching=False)
        run_bracket(
            plan.brackets[0],
            _sequential_proposer(range(16)),
            oracle,
            ledger,
            chain,
            policies=policies,
            subset_rng=np.random.default_rng(1),
        )
        assert ledger.calls_used == 320  # 8*10 + 4*20 + 2*40 + 1*80

    def test_cost_ratio_approaches_eta(self):
        assert 320 / 200 == pytest.approx(1.6)

    def test_budget_ceiling_per_bracket(self):
        plan = build_plan(80, 10, 2.0)
        for bracket in plan.brackets:
            oracle = _tabular(seed=bracket.index)
            ledger = EvaluationLedger(cache_enabled=False)
            chain = FidelityChain.from_seed(2, 80, 1)
            run_bracket(
                bracket,
                _sequential_proposer(range(16)),
                oracle,
                ledger,
                chain,
                policies=PolicySet(subset="independent", caching=False),
                subset_rng=np.random.default_rng(3),
            )
            assert ledger.calls_used <= plan.budget_per_bracket + plan.n_valid

    def test_survivor_monotonicity(self):
        plan = build_plan(80, 10, 2.0)
        oracle = _tabular()
        ledger = EvaluationLedger()
        chain = FidelityChain.from_seed(4, 80, 1)
        stage_sets = []

        def proposer(proposed):
            for p in range(16):
                if p not in proposed:
                    stage_sets.append(p)
                    return p
            return None

        survivors = run_bracket(plan.brackets[0], proposer, oracle, ledger, chain)
        stage0 = set(stage_sets)
        assert set(survivors) <= stage0
        assert len(survivors) == 1

    def test_proposer_exhaustion_warns_and_runs_short(self, caplog):
        plan = build_plan(80, 10, 2.0)
        oracle = _tabular(n_prompts=3)
        ledger = EvaluationLedger()
        chain = FidelityChain.from_seed(5, 80, 1)
        with caplog.at_level("WARNING"):
            run_bracket(plan.brackets[0], _sequential_proposer(range(3)), oracle, ledger, chain)
        assert any("exhausted" in rec.message for rec in caplog.records)

    def test_trace_events_after_every_evaluation(self):
        plan = build_plan(80, 10, 2.0)
        oracle = _tabular()
        ledger = EvaluationLedger()
        chain = FidelityChain.from_seed(6, 80, 1)
        trace = RunTrace(method="x", seed=0, budget_calls=10_000)
        run_bracket(plan.brackets[0], _sequential_proposer(range(16)), oracle, ledger, chain, trace=trace)
        assert len(trace.events) == len(ledger.records) == 8 + 4 + 2 + 1

    def test_budget_truncation_lands_exactly(self):
        plan = build_plan(80, 10, 2.0)
        oracle = _tabular()
        ledger = EvaluationLedger()
        chain = FidelityChain.from_seed(7, 80, 1)
        run_bracket(
            plan.brackets[0], _sequential_proposer(range(16)), oracle, ledger, chain, budget_calls=93
        )
        assert ledger.calls_used == 93


class TestSelectIncumbent:
    def test_highest_fidelity_policy(self):
        ledger = EvaluationLedger()
        ledger.records = [EvalRecord(1, 10, 0.05, 0), EvalRecord(2, 80, 0.20, 1)]
        assert select_incumbent(ledger, "highest_fidelity") == (2, 0.20, 80)

    def test_lowest_error_policy(self):
        ledger = EvaluationLedger()
        ledger.records = [EvalRecord(1, 10, 0.05, 0), EvalRecord(2, 80, 0.20, 1)]
        assert select_incumbent(ledger, "lowest_error") == (1, 0.05, 10)

    def test_singleton(self):
        ledger = EvaluationLedger()
        ledger.records = [EvalRecord(3, 20, 0.4, 0)]
        assert select_incumbent(ledger, "highest_fidelity") == (3, 0.4, 20)
        assert select_incumbent(ledger, "lowest_error") == (3, 0.4, 20)

    def test_empty_ledger(self):
        with pytest.raises(InsufficientDataError):
            select_incumbent(EvaluationLedger(), "highest_fidelity")

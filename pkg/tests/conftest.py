import numpy as np
import pytest

from promptband.domain import build_prompt_space
from promptband.oracle import SyntheticSpec, synthesize
from promptband.scenario import scenario_from_spec


@pytest.fixture(scope="session")
def small_space():
    """3 instructions x 4 exemplars, 8-dim embeddings."""
    rng = np.random.default_rng(42)
    instructions = [(i, rng.normal(size=8)) for i in range(3)]
    exemplars = [(e, rng.normal(size=8)) for e in range(4)]
    return build_prompt_space(instructions, exemplars)


@pytest.fixture(scope="session")
def synthetic_scenario():
    """The default seeded benchmark scenario (250 prompts, n_valid=200)."""
    return scenario_from_spec(SyntheticSpec(seed=7))


@pytest.fixture(scope="session")
def tiny_scenario():
    """A small scenario for fast end-to-end runs."""
    return scenario_from_spec(
        SyntheticSpec(n_instructions=3, n_exemplars=8, n_valid=40, n_test=20, embedding_dim=6, seed=3)
    )

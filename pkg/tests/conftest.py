"""
Shared fixtures and genome builders for the test suite.
"""

from dataclasses import replace

import pytest

from src.config import ExperimentConfig, FitnessMode, SearchConfig
from src.search_space import (
    Activation,
    BlockGene,
    BranchGene,
    Combiner,
    Genome,
    LayerKind,
    Normalization,
    transformer_seed,
)


def identity_branch(state: int) -> BranchGene:
    return BranchGene(state, Normalization.NONE, LayerKind.IDENTITY, 1, Activation.NONE)


def dead_branch(state: int) -> BranchGene:
    return BranchGene(state, Normalization.NONE, LayerKind.DEAD_BRANCH, 1, Activation.NONE)


def identity_genome(cells: int = 1) -> Genome:
    """Every block passes its previous state through unchanged."""

    def blocks(count):
        return tuple(
            BlockGene(identity_branch(index), dead_branch(index), Combiner.ADDITION)
            for index in range(count)
        )

    return Genome(blocks(6), blocks(8), cells, cells)


def replace_branch(genome: Genome, section: str, index: int, side: str, **changes) -> Genome:
    """Copy of ``genome`` with one branch's fields changed."""
    blocks = list(getattr(genome, f"{section}_blocks"))
    block = blocks[index]
    blocks[index] = replace(block, **{side: replace(getattr(block, side), **changes)})
    return replace(genome, **{f"{section}_blocks": tuple(blocks)})


def small_config(**search_overrides) -> ExperimentConfig:
    """A fast desk-style search: capacity 10, s = <5, 5, 5>, m = 10."""
    search = {
        "population_capacity": 10,
        "parent_subpop_size": 4,
        "kill_subpop_size": 4,
        "mutation_rate": 0.025,
        "fitness_mode": FitnessMode(step_increments=[5, 5, 5], models_per_hurdle=10),
        "total_models": 40,
        "seed": 0,
    }
    search.update(search_overrides)
    return ExperimentConfig(name="test", search=SearchConfig(**search))


@pytest.fixture
def transformer():
    return transformer_seed()

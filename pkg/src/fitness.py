"""
Fitness evaluation contract and the simulated learning-curve oracle.

Fitness is negative log perplexity: higher is better. The oracle maps each
genome to a saturating exponential curve whose asymptote rewards traits of the
evolved seed, so desk-scale searches have a known optimum to move toward.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np

from .config import OracleConfig
from .errors import EvaluationFailed
from .search_space import (
    Activation,
    Combiner,
    Genome,
    LayerFamily,
    LayerKind,
    Normalization,
    et_seed,
    flatten,
    genome_id,
)

logger = logging.getLogger(__name__)

FEATURE_CAPS = {
    "attend_to_encoder": 2,
    "separable_conv": 4,
    "swish": 4,
    "branching": 3,
}


def fitness_from_perplexity(perplexity: float) -> float:
    if perplexity <= 0:
        raise ValueError(f"perplexity must be positive, got {perplexity}")
    return -math.log(perplexity)


def perplexity_from_fitness(fitness: float) -> float:
    return math.exp(-fitness)


@dataclass(frozen=True)
class CurveParams:
    asymptote: float
    rate: float
    noise_scale: float
    monotone: bool
    start: float
    overfit_rate: float = 0.0

    def value(self, steps: float) -> float:
        """Noiseless fitness after ``steps`` train steps."""
        fitness = self.asymptote - (self.asymptote - self.start) * math.exp(-self.rate * steps)
        if not self.monotone:
            fitness -= self.overfit_rate * steps
        return fitness


@dataclass(frozen=True)
class EvaluationSession:
    """Training progress of one independently evaluated copy of a genome.

    ``replica`` selects the noise stream, so copies of the same genome are
    evaluated independently.
    """

    genome: Genome
    genome_id: str
    replica: int = 0
    steps_trained: int = 0
    fitness: Optional[float] = None
    history: Tuple[Tuple[int, float], ...] = ()


class Evaluator(ABC):
    """Deterministic given its seed; monotone in steps when ``monotone`` is set."""

    monotone: bool = True

    @abstractmethod
    def evaluate(self, genome: Genome, cumulative_steps: int, replica: int = 0) -> float:
        """Fitness of ``genome`` after ``cumulative_steps`` steps of training."""

    def true_fitness(self, genome: Genome) -> Optional[float]:
        return None

    def open_session(self, genome: Genome, replica: int = 0) -> EvaluationSession:
        return EvaluationSession(genome=genome, genome_id=genome_id(genome), replica=replica)

    def train_and_evaluate(self, session: EvaluationSession, additional_steps: int) -> EvaluationSession:
        if additional_steps <= 0:
            raise ValueError(f"additional_steps must be positive, got {additional_steps}")
        steps = session.steps_trained + additional_steps
        try:
            fitness = float(self.evaluate(session.genome, steps, session.replica))
        except EvaluationFailed as e:
            raise EvaluationFailed(str(e), steps_used=max(e.steps_used, steps)) from e
        except Exception as e:
            raise EvaluationFailed(f"evaluation of {session.genome_id} failed: {e}", steps_used=steps) from e
        return replace(
            session,
            steps_trained=steps,
            fitness=fitness,
            history=session.history + ((steps, fitness),),
        )


class ConstantEvaluator(Evaluator):
    """Degenerate evaluator returning the same fitness for every genome."""

    def __init__(self, value: float = 0.0):
        self.value = value

    def evaluate(self, genome: Genome, cumulative_steps: int, replica: int = 0) -> float:
        return self.value


def _count_layers(genome: Genome, family: LayerFamily) -> int:
    return sum(
        branch.layer.family is family
        for block in genome.encoder_blocks + genome.decoder_blocks
        for branch in block.branches
    )


def _live_branches(genome: Genome):
    for block in genome.encoder_blocks + genome.decoder_blocks:
        for branch in block.branches:
            if branch.layer is not LayerKind.DEAD_BRANCH:
                yield branch


def genome_features(genome: Genome) -> Dict[str, float]:
    """Feature values scored by the oracle's weight table."""
    reference = flatten(et_seed())
    live = list(_live_branches(genome))
    transforming = [b for b in live if b.layer is not LayerKind.IDENTITY]

    def has_attention(blocks) -> bool:
        return any(branch.layer.family is LayerFamily.ATTENTION for block in blocks for branch in block.branches)

    features = {
        "et_field_matches": float(sum(a == b for a, b in zip(flatten(genome), reference))),
        "encoder_attention": float(has_attention(genome.encoder_blocks)),
        "decoder_attention": float(has_attention(genome.decoder_blocks)),
        "attend_to_encoder": float(_count_layers(genome, LayerFamily.ATTEND_TO_ENCODER)),
        "layer_norm_ratio": sum(b.norm is Normalization.LAYER_NORM for b in live) / len(live) if live else 0.0,
        "separable_conv": float(_count_layers(genome, LayerFamily.SEPARABLE_CONV)),
        "encoder_glu": float(
            any(b.layer is LayerKind.GATED_LINEAR_UNIT for b in genome.encoder_blocks[0].branches)
        ),
        "decoder_cells_4": float(genome.decoder_cells == 4),
        "swish": float(sum(b.activation is Activation.SWISH for b in transforming)),
        "branching": float(
            sum(
                all(b.layer not in (LayerKind.DEAD_BRANCH, LayerKind.IDENTITY) for b in block.branches)
                for block in genome.encoder_blocks + genome.decoder_blocks
            )
        ),
        "multiplication": float(
            sum(
                block.combiner is Combiner.MULTIPLICATION
                for block in genome.encoder_blocks + genome.decoder_blocks
            )
        ),
    }
    for name, cap in FEATURE_CAPS.items():
        features[name] = min(features[name], float(cap))
    return features


def _stream(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(key) for key in keys]))


def curve_for(genome: Genome, oracle_seed: int, config: Optional[OracleConfig] = None) -> CurveParams:
    """Deterministic curve for (genome content, oracle seed)."""
    config = config or OracleConfig()
    features = genome_features(genome)
    bonus = math.fsum(weight * features.get(name, 0.0) for name, weight in config.feature_weights.items())
    digest = int(genome_id(genome), 16)
    draws = _stream(oracle_seed, digest).standard_normal(2)
    jitter = config.jitter * math.tanh(float(draws[0]))
    asymptote = max(config.base_asymptote + bonus + jitter, config.initial_fitness + 1e-3)
    log_rate = config.rate_spread * float(draws[1]) - config.rate_asymptote_coupling * (
        asymptote - config.base_asymptote
    )
    return CurveParams(
        asymptote=asymptote,
        rate=config.rate_mean * math.exp(log_rate),
        noise_scale=config.noise_scale,
        monotone=config.monotone,
        start=config.initial_fitness,
        overfit_rate=config.overfit_rate,
    )


class SimulatedOracle(Evaluator):
    """Learning curves of the form A - (A - start) * exp(-rate * steps)."""

    def __init__(self, config: Optional[OracleConfig] = None, seed: Optional[int] = None):
        self.config = config or OracleConfig()
        self.seed = self.config.seed if seed is None else seed
        self.monotone = self.config.monotone and self.config.noise_scale == 0.0

    def curve_for(self, genome: Genome) -> CurveParams:
        return curve_for(genome, self.seed, self.config)

    def evaluate(self, genome: Genome, cumulative_steps: int, replica: int = 0) -> float:
        curve = self.curve_for(genome)
        fitness = curve.value(cumulative_steps)
        if curve.noise_scale > 0:
            noise = _stream(self.seed, int(genome_id(genome), 16), replica, cumulative_steps).standard_normal()
            fitness += curve.noise_scale * float(noise)
        return fitness

    def true_fitness(self, genome: Genome) -> float:
        """The latent long-run fitness: the curve's asymptote."""
        return self.curve_for(genome).asymptote

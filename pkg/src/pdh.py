"""
Progressive dynamic hurdles: hurdle-gated training and train-step accounting.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, NamedTuple, Optional, Protocol, Sequence, Tuple

from .config import FitnessMode, FitnessModeKind
from .errors import EvaluationFailed
from .fitness import EvaluationSession, Evaluator
from .search_space import Genome

logger = logging.getLogger(__name__)


class Evaluated(Protocol):
    fitness: float
    steps_trained: int


@dataclass(frozen=True)
class HurdleSchedule:
    """Step increments s, models per hurdle m and the append-only hurdle queue h."""

    step_increments: Tuple[int, ...]
    models_per_hurdle: int
    hurdles: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.step_increments or any(step <= 0 for step in self.step_increments):
            raise ValueError("step_increments must be a non-empty vector of positive counts")
        if self.models_per_hurdle <= 0:
            raise ValueError("models_per_hurdle must be positive")
        if len(self.hurdles) >= len(self.step_increments):
            raise ValueError(
                f"{len(self.hurdles)} hurdles need more than {len(self.step_increments)} step increments"
            )

    @classmethod
    def fixed(cls, steps: int) -> "HurdleSchedule":
        """Fixed-step training: a single increment and no room for hurdles."""
        return cls(step_increments=(steps,), models_per_hurdle=1)

    @classmethod
    def from_mode(cls, mode: FitnessMode) -> "HurdleSchedule":
        if mode.kind == FitnessModeKind.FIXED_STEPS:
            return cls.fixed(int(mode.fixed_steps or 0))
        return cls(step_increments=tuple(mode.step_increments), models_per_hurdle=mode.models_per_hurdle)

    @property
    def max_steps(self) -> int:
        return sum(self.step_increments)

    @property
    def full(self) -> bool:
        """All hurdles the schedule can hold exist; the terminal phase has begun."""
        return len(self.hurdles) >= len(self.step_increments) - 1

    def with_hurdle(self, value: float) -> "HurdleSchedule":
        return HurdleSchedule(self.step_increments, self.models_per_hurdle, self.hurdles + (float(value),))


class HurdleGate(NamedTuple):
    cumulative_steps: int
    fitness: float
    hurdle: float
    passed: bool


class HurdleResult(NamedTuple):
    fitness: float
    steps_used: int
    gates: Tuple[HurdleGate, ...]


@dataclass
class BudgetLedger:
    """Train steps consumed; ``total_steps_consumed`` equals the sum over models."""

    total_steps_consumed: int = 0
    per_model_steps: Dict[str, int] = field(default_factory=lambda: defaultdict(int))
    models_evaluated: int = 0

    def charge(self, model_key: str, steps: int) -> None:
        if steps < 0:
            raise ValueError(f"cannot charge negative steps ({steps})")
        self.per_model_steps[model_key] += steps
        self.total_steps_consumed += steps

    def record_model(self) -> None:
        self.models_evaluated += 1

    def merge(self, other: "BudgetLedger") -> None:
        for key, steps in other.per_model_steps.items():
            self.charge(key, steps)
        self.models_evaluated += other.models_evaluated

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total_steps_consumed": self.total_steps_consumed,
            "models_evaluated": self.models_evaluated,
        }


def fitness_with_hurdles(
    genome: Genome,
    schedule: HurdleSchedule,
    evaluator: Evaluator,
    ledger: Optional[BudgetLedger] = None,
    model_key: Optional[str] = None,
    replica: int = 0,
) -> HurdleResult:
    """Train in increments while fitness stays strictly above the next hurdle.

    An infinite hurdle closes the queue, so a model clearing every real
    hurdle trains the first ``len(hurdles) + 1`` increments.

    Raises:
        EvaluationFailed: the evaluator failed; steps trained so far are
            already charged to ``ledger`` and the model is counted.
    """
    if len(schedule.hurdles) >= len(schedule.step_increments):
        raise ValueError("hurdle queue must be shorter than the step increment vector")
    ledger = ledger if ledger is not None else BudgetLedger()
    queue = list(schedule.hurdles) + [math.inf]
    session = evaluator.open_session(genome, replica)
    key = model_key or session.genome_id

    def train(current: EvaluationSession, steps: int) -> EvaluationSession:
        try:
            advanced = evaluator.train_and_evaluate(current, steps)
        except EvaluationFailed as e:
            ledger.charge(key, max(0, min(e.steps_used, current.steps_trained + steps) - current.steps_trained))
            ledger.record_model()
            raise EvaluationFailed(str(e), steps_used=max(e.steps_used, current.steps_trained)) from e
        ledger.charge(key, steps)
        return advanced

    gates = []
    i = 0
    session = train(session, schedule.step_increments[0])
    fitness, hurdle = session.fitness, queue[0]
    while fitness > hurdle:
        gates.append(HurdleGate(session.steps_trained, fitness, hurdle, True))
        i += 1
        session = train(session, schedule.step_increments[i])
        fitness, hurdle = session.fitness, queue[i]
    if not math.isinf(hurdle):
        gates.append(HurdleGate(session.steps_trained, fitness, hurdle, False))
    ledger.record_model()
    return HurdleResult(float(fitness), session.steps_trained, tuple(gates))


def mean_fitness_of_max(population: Iterable[Evaluated]) -> float:
    """Mean fitness of the members trained for the most steps."""
    members: Sequence[Evaluated] = list(population)
    if not members:
        raise ValueError("mean_fitness_of_max needs a non-empty population")
    top = max(member.steps_trained for member in members)
    values = [member.fitness for member in members if member.steps_trained == top]
    return math.fsum(values) / len(values)


def maybe_create_hurdle(
    schedule: HurdleSchedule,
    population: Iterable[Evaluated],
    models_since_last_hurdle: int,
) -> HurdleSchedule:
    """Append a hurdle once ``m`` models were evaluated and the queue has room.

    The caller resets its model counter when the returned schedule has more
    hurdles than the one passed in.
    """
    if models_since_last_hurdle < schedule.models_per_hurdle or schedule.full:
        return schedule
    value = mean_fitness_of_max(population)
    logger.debug(f"Hurdle {len(schedule.hurdles)} set to {value:.6f} after {models_since_last_hurdle} models")
    return schedule.with_hurdle(value)

"""
Tournament-selection evolution with warm starting and hurdle-gated fitness.

One search-state owner issues evaluation tasks and folds their outcomes into
the population as events. The state is a fold over the event log, so replaying
a log (or resuming from a checkpoint) rebuilds it exactly.
"""

import asyncio
import logging
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from .config import ExperimentConfig, FitnessModeKind, SeedMode, parse_config
from .errors import EvaluationFailed, SearchAborted
from .fitness import Evaluator, SimulatedOracle
from .pdh import BudgetLedger, HurdleResult, HurdleSchedule, fitness_with_hurdles, maybe_create_hurdle
from .search_space import (
    Genome,
    genome_from_dict,
    genome_to_dict,
    mutate_with_mask,
    random_genome,
    transformer_seed,
)
from .utils.event_log import EventLog, read_checkpoint, truncate_events, write_checkpoint

logger = logging.getLogger(__name__)

EVENTS_FILE = "events.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
CHECKPOINT_VERSION = 1


class EventType(str, Enum):
    INIT = "INIT"
    EVAL_START = "EVAL_START"
    HURDLE_GATE = "HURDLE_GATE"
    EVAL_DONE = "EVAL_DONE"
    EVAL_FAILED = "EVAL_FAILED"
    HURDLE_CREATED = "HURDLE_CREATED"
    KILL = "KILL"
    INSERT = "INSERT"
    CONFIG_SWITCH = "CONFIG_SWITCH"


@dataclass(frozen=True)
class Individual:
    genome: Genome
    fitness: float
    steps_trained: int
    parent_id: Optional[int]
    created_index: int
    true_fitness: Optional[float] = None

    @property
    def model_id(self) -> int:
        return self.created_index


class Population:
    """Fixed-capacity multiset of evaluated individuals, in insertion order."""

    def __init__(self, capacity: int, members: Optional[Iterable[Individual]] = None):
        self.capacity = capacity
        self.members: List[Individual] = list(members or [])

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def full(self) -> bool:
        return len(self.members) >= self.capacity

    def add(self, individual: Individual) -> None:
        if self.full:
            raise ValueError(f"population already holds {self.capacity} members")
        self.members.append(individual)

    def remove(self, model_id: int) -> Individual:
        for position, member in enumerate(self.members):
            if member.model_id == model_id:
                return self.members.pop(position)
        raise KeyError(f"model {model_id} is not in the population")

    def sample(self, rng: np.random.Generator, size: int) -> List[Individual]:
        """Uniform subpopulation without replacement."""
        size = min(size, len(self.members))
        picks = rng.choice(len(self.members), size=size, replace=False)
        return [self.members[int(position)] for position in picks]


def select_parent(population: Population, rng: np.random.Generator, subpop_size: int) -> Individual:
    """Fittest member of a random subpopulation; ties go to the earlier model."""
    candidates = population.sample(rng, subpop_size)
    return max(candidates, key=lambda member: (member.fitness, -member.created_index))


def select_victim(population: Population, rng: np.random.Generator, subpop_size: int) -> Individual:
    """Least fit member of a random subpopulation; ties go to the later model."""
    candidates = population.sample(rng, subpop_size)
    return min(candidates, key=lambda member: (member.fitness, -member.created_index))


def kill_and_insert(
    population: Population,
    child: Individual,
    rng: np.random.Generator,
    subpop_size: int,
) -> Individual:
    """Remove a tournament loser, then insert ``child``. Returns the removed member."""
    victim = select_victim(population, rng, subpop_size)
    population.remove(victim.model_id)
    population.add(child)
    return victim


# --- evaluation tasks --------------------------------------------------------------


@dataclass(frozen=True)
class EvalTask:
    model_id: int
    parent_id: Optional[int]
    genome: Genome
    hurdles: Tuple[float, ...]

    @property
    def initial(self) -> bool:
        return self.parent_id is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model_id": self.model_id,
            "parent_id": self.parent_id,
            "genome": genome_to_dict(self.genome),
            "hurdles": list(self.hurdles),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalTask":
        return cls(
            model_id=data["model_id"],
            parent_id=data["parent_id"],
            genome=genome_from_dict(data["genome"]),
            hurdles=tuple(data["hurdles"]),
        )


@dataclass(frozen=True)
class TaskOutcome:
    result: Optional[HurdleResult]
    steps_used: int
    true_fitness: Optional[float] = None
    error: Optional[str] = None


def evaluate_task(task: EvalTask, base: HurdleSchedule, evaluator: Evaluator) -> TaskOutcome:
    """Worker body: hurdle-gated training of one model. Runs in a pool process."""
    schedule = HurdleSchedule(base.step_increments, base.models_per_hurdle, task.hurdles)
    ledger = BudgetLedger()
    try:
        result = fitness_with_hurdles(
            task.genome, schedule, evaluator, ledger, model_key=str(task.model_id), replica=task.model_id
        )
    except EvaluationFailed as e:
        return TaskOutcome(result=None, steps_used=ledger.total_steps_consumed, error=str(e))
    return TaskOutcome(
        result=result,
        steps_used=result.steps_used,
        true_fitness=evaluator.true_fitness(task.genome),
    )


# --- search state -------------------------------------------------------------------


class SearchState:
    """Population, hurdles, ledger and counters as a fold over events."""

    def __init__(self, config: ExperimentConfig):
        search = config.search
        self.config = config
        self.population = Population(search.population_capacity)
        self.schedule = HurdleSchedule.from_mode(search.fitness_mode)
        self.ledger = BudgetLedger()
        self.genomes: Dict[int, Genome] = {}
        self.parents: Dict[int, Optional[int]] = {}
        self.next_index = 0
        self.initial_in_flight = 0
        self.children_issued = 0
        self.children_completed = 0
        self.models_since_hurdle = 0
        self.consecutive_failures = 0
        self.mutation_rate = search.mutation_rate
        self.normalization_none = config.constraints.normalization_none
        self.switches_applied = 0
        self._evaluated: Dict[int, Individual] = {}

    @classmethod
    def replay(cls, config: ExperimentConfig, events: Iterable[Dict[str, Any]]) -> "SearchState":
        state = cls(config)
        for event in events:
            state.apply(event)
        return state

    def apply(self, event: Dict[str, Any]) -> None:
        kind = EventType(event["event_type"])
        if kind in (EventType.INIT, EventType.EVAL_START):
            model_id = event["model_id"]
            self.genomes[model_id] = genome_from_dict(event["genome"])
            self.parents[model_id] = event.get("parent_id")
            self.next_index = max(self.next_index, model_id + 1)
            if kind is EventType.INIT:
                self.initial_in_flight += 1
            else:
                self.children_issued += 1
        elif kind is EventType.EVAL_DONE:
            model_id = event["model_id"]
            initial = self.parents.get(model_id) is None
            self.ledger.charge(str(model_id), event["steps"])
            self.ledger.record_model()
            self._evaluated[model_id] = Individual(
                genome=self.genomes[model_id],
                fitness=event["fitness"],
                steps_trained=event["steps"],
                parent_id=self.parents.get(model_id),
                created_index=model_id,
                true_fitness=event.get("true_fitness"),
            )
            self.consecutive_failures = 0
            self._finish(initial)
            if not initial or self.config.search.initial_counts_toward_first_hurdle:
                self.models_since_hurdle += 1
        elif kind is EventType.EVAL_FAILED:
            model_id = event["model_id"]
            self.ledger.charge(str(model_id), event["steps"])
            self.ledger.record_model()
            self.consecutive_failures += 1
            self._finish(self.parents.get(model_id) is None)
        elif kind is EventType.KILL:
            self.population.remove(event["model_id"])
        elif kind is EventType.INSERT:
            self.population.add(self._evaluated.pop(event["model_id"]))
        elif kind is EventType.HURDLE_CREATED:
            self.schedule = self.schedule.with_hurdle(event["value"])
            self.models_since_hurdle = 0
        elif kind is EventType.CONFIG_SWITCH:
            if event.get("mutation_rate") is not None:
                self.mutation_rate = event["mutation_rate"]
            if event.get("normalization_none") is not None:
                self.normalization_none = event["normalization_none"]
            self.switches_applied += 1

    def _finish(self, initial: bool) -> None:
        if initial:
            self.initial_in_flight -= 1
        else:
            self.children_completed += 1

    def counters(self) -> Dict[str, Any]:
        return {
            "next_index": self.next_index,
            "children_issued": self.children_issued,
            "children_completed": self.children_completed,
            "models_since_hurdle": self.models_since_hurdle,
            "consecutive_failures": self.consecutive_failures,
            "mutation_rate": self.mutation_rate,
            "normalization_none": self.normalization_none,
            "switches_applied": self.switches_applied,
            "total_steps_consumed": self.ledger.total_steps_consumed,
            "models_evaluated": self.ledger.models_evaluated,
        }


@dataclass
class SearchResult:
    population: Population
    events: List[Dict[str, Any]]
    ledger: BudgetLedger
    schedule: HurdleSchedule
    completed: bool = True
    checkpoint_path: Optional[Path] = None
    output_dir: Optional[Path] = field(default=None)


class EvolutionSearch:
    """Owner of one search: issues tasks, folds outcomes, writes the event log."""

    def __init__(
        self,
        config: ExperimentConfig,
        evaluator: Optional[Evaluator] = None,
        output_dir: Optional[Union[str, Path]] = None,
        stop_after: Optional[int] = None,
    ):
        self.config = config
        self.evaluator = evaluator or SimulatedOracle(config.oracle)
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.stop_after = stop_after
        self.rng = np.random.default_rng(config.search.seed)
        self.state = SearchState(config)
        self.base_schedule = HurdleSchedule.from_mode(config.search.fitness_mode)
        self.queued: List[EvalTask] = []
        self.in_flight: Dict[int, EvalTask] = {}
        self.log = EventLog(self._path(EVENTS_FILE))

    @classmethod
    def resume(
        cls,
        checkpoint_path: Union[str, Path],
        evaluator: Optional[Evaluator] = None,
        stop_after: Optional[int] = None,
        workers: Optional[int] = None,
    ) -> "EvolutionSearch":
        """Rebuild a search from a checkpoint and the events written before it."""
        checkpoint_path = Path(checkpoint_path)
        checkpoint = read_checkpoint(checkpoint_path)
        if checkpoint.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {checkpoint.get('version')}")
        config = parse_config(checkpoint["config"], source=str(checkpoint_path))
        if workers is not None:
            config = config.with_overrides(workers=workers)
        output_dir = checkpoint_path.parent
        events = truncate_events(output_dir / EVENTS_FILE, checkpoint["event_count"])
        search = cls.__new__(cls)
        search.config = config
        search.evaluator = evaluator or SimulatedOracle(config.oracle)
        search.output_dir = output_dir
        search.stop_after = stop_after
        search.rng = np.random.default_rng()
        search.rng.bit_generator.state = checkpoint["rng_state"]
        search.state = SearchState.replay(config, events)
        search.base_schedule = HurdleSchedule.from_mode(config.search.fitness_mode)
        search.queued = [EvalTask.from_dict(task) for task in checkpoint["in_flight"]]
        search.in_flight = {}
        search.log = EventLog(output_dir / EVENTS_FILE, events, resume=True)
        logger.info(
            f"Resuming from {checkpoint_path}: {len(events)} events, "
            f"{search.state.children_completed} children completed"
        )
        return search

    def _path(self, name: str) -> Optional[Path]:
        return self.output_dir / name if self.output_dir is not None else None

    def _emit(self, event_type: EventType, **fields: Any) -> Dict[str, Any]:
        event = self.log.append(event_type.value, **fields)
        self.state.apply(event)
        return event

    # --- issuing ---------------------------------------------------------------

    def _budget_left(self) -> bool:
        search = self.config.search
        if search.total_models is not None:
            return self.state.children_issued < search.total_models
        # the last child is the one whose first increment lands nearest the budget
        half_child = self.base_schedule.step_increments[0] / 2
        return self.state.ledger.total_steps_consumed + half_child < int(search.total_steps or 0)

    def _next_task(self) -> Optional[EvalTask]:
        if self.queued:
            return self.queued.pop(0)
        state = self.state
        capacity = state.population.capacity
        if len(state.population) + state.initial_in_flight < capacity:
            return self._issue_initial()
        if state.initial_in_flight or not state.population.full or not self._budget_left():
            return None
        if self.stop_after is not None and state.children_issued >= self.stop_after:
            return None
        return self._issue_child()

    def _issue_initial(self) -> EvalTask:
        search = self.config.search
        if search.seed_mode == SeedMode.TRANSFORMER_SEED:
            genome = transformer_seed()
        else:
            genome = random_genome(self.rng, self.config.validation_config(self.state.normalization_none))
        model_id = self.state.next_index
        self._emit(EventType.INIT, model_id=model_id, parent_id=None, genome=genome_to_dict(genome))
        return EvalTask(model_id, None, genome, self.state.schedule.hurdles)

    def _apply_switches(self) -> None:
        switches = sorted(self.config.search.switches, key=lambda switch: switch.at_models)
        while self.state.switches_applied < len(switches):
            switch = switches[self.state.switches_applied]
            if switch.at_models > self.state.children_issued:
                break
            self._emit(
                EventType.CONFIG_SWITCH,
                at_models=switch.at_models,
                mutation_rate=switch.mutation_rate,
                normalization_none=switch.normalization_none,
            )
            logger.info(
                f"Config switch after {switch.at_models} models: mutation_rate={self.state.mutation_rate}, "
                f"normalization_none={self.state.normalization_none}"
            )

    def _issue_child(self) -> EvalTask:
        self._apply_switches()
        search = self.config.search
        parent = select_parent(self.state.population, self.rng, search.parent_subpop_size)
        child, mask = mutate_with_mask(
            parent.genome,
            self.state.mutation_rate,
            self.rng,
            self.config.validation_config(self.state.normalization_none),
        )
        model_id = self.state.next_index
        hurdles = self.state.schedule.hurdles
        self._emit(
            EventType.EVAL_START,
            model_id=model_id,
            parent_id=parent.model_id,
            genome=genome_to_dict(child),
            mutation_mask=sorted(mask),
            hurdles=list(hurdles),
        )
        return EvalTask(model_id, parent.model_id, child, hurdles)

    # --- completion ---------------------------------------------------------------

    def _complete(self, task: EvalTask, outcome: TaskOutcome) -> None:
        self.in_flight.pop(task.model_id, None)
        if outcome.result is None:
            self._emit(
                EventType.EVAL_FAILED,
                model_id=task.model_id,
                parent_id=task.parent_id,
                steps=outcome.steps_used,
                error=outcome.error,
            )
            logger.warning(f"Evaluation of model {task.model_id} failed: {outcome.error}")
            if self.state.consecutive_failures >= self.config.search.max_consecutive_failures:
                path = self.write_checkpoint()
                raise SearchAborted(
                    f"{self.state.consecutive_failures} consecutive evaluation failures",
                    checkpoint_path=str(path) if path else None,
                )
            return

        result = outcome.result
        for gate in result.gates:
            self._emit(
                EventType.HURDLE_GATE,
                model_id=task.model_id,
                steps=gate.cumulative_steps,
                fitness=gate.fitness,
                hurdle=gate.hurdle,
                passed=gate.passed,
            )
        self._emit(
            EventType.EVAL_DONE,
            model_id=task.model_id,
            parent_id=task.parent_id,
            steps=result.steps_used,
            fitness=result.fitness,
            true_fitness=outcome.true_fitness,
        )
        logger.debug(f"Model {task.model_id}: fitness {result.fitness:.6f} after {result.steps_used} steps")
        if self.state.population.full:
            victim = select_victim(self.state.population, self.rng, self.config.search.kill_subpop_size)
            self._emit(EventType.KILL, model_id=victim.model_id)
        self._emit(EventType.INSERT, model_id=task.model_id)
        self._maybe_create_hurdle()

    def _maybe_create_hurdle(self) -> None:
        state = self.state
        if self.config.search.fitness_mode.kind != FitnessModeKind.PDH or not state.population.members:
            return
        counted = state.models_since_hurdle
        extended = maybe_create_hurdle(state.schedule, state.population.members, counted)
        if len(extended.hurdles) == len(state.schedule.hurdles):
            return
        value = extended.hurdles[-1]
        counts_initial = self.config.search.initial_counts_toward_first_hurdle
        self._emit(
            EventType.HURDLE_CREATED,
            hurdle_index=len(extended.hurdles) - 1,
            value=value,
            models_counted=counted,
            counts_initial=counts_initial,
        )
        logger.info(
            f"Hurdle {len(extended.hurdles) - 1} created at {value:.6f} after {counted} models "
            f"(initial population {'counted' if counts_initial else 'not counted'})"
        )

    # --- checkpoints ------------------------------------------------------------------

    def checkpoint_state(self) -> Dict[str, Any]:
        pending = list(self.in_flight.values()) + self.queued
        return {
            "version": CHECKPOINT_VERSION,
            "config": self.config.model_dump(mode="json"),
            "rng_state": self.rng.bit_generator.state,
            "event_count": len(self.log),
            "in_flight": [task.to_dict() for task in sorted(pending, key=lambda task: task.model_id)],
            "hurdles": list(self.state.schedule.hurdles),
            "counters": self.state.counters(),
        }

    def write_checkpoint(self) -> Optional[Path]:
        path = self._path(CHECKPOINT_FILE)
        if path is None:
            return None
        return write_checkpoint(path, self.checkpoint_state())

    # --- main loop ------------------------------------------------------------------------

    def _paused(self) -> bool:
        return self.stop_after is not None and self.state.children_completed >= self.stop_after

    def _after_completion(self) -> None:
        completed = self.state.children_completed
        if completed and completed % self.config.search.checkpoint_every == 0:
            self.write_checkpoint()

    def _run_inline(self) -> None:
        while not self._paused():
            task = self._next_task()
            if task is None:
                break
            self.in_flight[task.model_id] = task
            self._complete(task, evaluate_task(task, self.base_schedule, self.evaluator))
            self._after_completion()

    async def _run_pool(self, executor: Executor) -> None:
        loop = asyncio.get_running_loop()
        pending: Dict[asyncio.Future, EvalTask] = {}
        workers = self.config.search.worker_count
        while True:
            while len(pending) < workers and not self._paused():
                task = self._next_task()
                if task is None:
                    break
                self.in_flight[task.model_id] = task
                future = loop.run_in_executor(executor, evaluate_task, task, self.base_schedule, self.evaluator)
                pending[future] = task
            if not pending or self._paused():
                break
            done, _ = await asyncio.wait(pending, return_when=asyncio.FIRST_COMPLETED)
            for future in sorted(done, key=lambda f: pending[f].model_id):
                task = pending.pop(future)
                self._complete(task, future.result())
                self._after_completion()
        for future in pending:
            future.cancel()

    async def run_async(self) -> SearchResult:
        search = self.config.search
        logger.info(
            f"Starting search '{self.config.name}': capacity {search.population_capacity}, "
            f"{search.fitness_mode.kind.value} fitness, {search.worker_count} worker(s), seed {search.seed}"
        )
        try:
            if search.worker_count == 1:
                self._run_inline()
            else:
                with ProcessPoolExecutor(max_workers=search.worker_count) as executor:
                    await self._run_pool(executor)
            completed = not self._paused() or not self._budget_left()
            checkpoint = self.write_checkpoint()
        finally:
            self.log.close()
        logger.info(
            f"Search {'finished' if completed else 'paused'}: {self.state.ledger.models_evaluated} models, "
            f"{self.state.ledger.total_steps_consumed} steps"
        )
        return SearchResult(
            population=self.state.population,
            events=list(self.log.events),
            ledger=self.state.ledger,
            schedule=self.state.schedule,
            completed=completed,
            checkpoint_path=checkpoint,
            output_dir=self.output_dir,
        )


async def run_search_async(
    config: ExperimentConfig,
    evaluator: Optional[Evaluator] = None,
    output_dir: Optional[Union[str, Path]] = None,
    stop_after: Optional[int] = None,
) -> SearchResult:
    return await EvolutionSearch(config, evaluator, output_dir, stop_after).run_async()


def run_search(
    config: ExperimentConfig,
    evaluator: Optional[Evaluator] = None,
    output_dir: Optional[Union[str, Path]] = None,
    stop_after: Optional[int] = None,
) -> SearchResult:
    """Run a search to its budget (or ``stop_after`` children) and return its result."""
    return asyncio.run(run_search_async(config, evaluator, output_dir, stop_after))


def resume_search(
    checkpoint_path: Union[str, Path],
    evaluator: Optional[Evaluator] = None,
    stop_after: Optional[int] = None,
    workers: Optional[int] = None,
) -> SearchResult:
    search = EvolutionSearch.resume(checkpoint_path, evaluator, stop_after, workers)
    return asyncio.run(search.run_async())


def init_population(
    config: ExperimentConfig,
    evaluator: Optional[Evaluator] = None,
) -> Population:
    """The evaluated initial population: the search run with a zero child budget."""
    search = config.search.model_copy(update={"total_models": 0, "total_steps": None})
    return run_search(config.model_copy(update={"search": search}), evaluator).population


def evaluated_individuals(events: Iterable[Dict[str, Any]]) -> List[Individual]:
    """Every successfully evaluated model in the log, in completion order."""
    genomes: Dict[int, Genome] = {}
    individuals = []
    for event in events:
        kind = event["event_type"]
        if kind in (EventType.INIT.value, EventType.EVAL_START.value):
            genomes[event["model_id"]] = genome_from_dict(event["genome"])
        elif kind == EventType.EVAL_DONE.value:
            individuals.append(
                Individual(
                    genome=genomes[event["model_id"]],
                    fitness=event["fitness"],
                    steps_trained=event["steps"],
                    parent_id=event["parent_id"],
                    created_index=event["model_id"],
                    true_fitness=event.get("true_fitness"),
                )
            )
    return individuals


def top_k(result: Union[SearchResult, Iterable[Dict[str, Any]]], k: int) -> List[Individual]:
    """The k fittest models ever evaluated; ties go to the earlier model."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    events = result.events if isinstance(result, SearchResult) else result
    ranked = sorted(evaluated_individuals(events), key=lambda ind: (-ind.fitness, ind.created_index))
    return ranked[:k]

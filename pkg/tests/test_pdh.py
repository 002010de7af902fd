"""
Unit tests for hurdle-gated training, hurdle creation and step accounting.
"""

import math
from typing import Callable, NamedTuple

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.config import FitnessMode, FitnessModeKind
from src.errors import EvaluationFailed
from src.fitness import Evaluator
from src.pdh import (
    BudgetLedger,
    HurdleSchedule,
    fitness_with_hurdles,
    maybe_create_hurdle,
    mean_fitness_of_max,
)


class Member(NamedTuple):
    fitness: float
    steps_trained: int


class CurveEvaluator(Evaluator):
    """Fitness from a closed-form curve of cumulative steps."""

    def __init__(self, curve: Callable[[int], float]):
        self.curve = curve
        self.calls = []

    def evaluate(self, genome, cumulative_steps, replica=0):
        self.calls.append(cumulative_steps)
        return self.curve(cumulative_steps)


class ReplicaEvaluator(Evaluator):
    """Each replica draws one standard normal fitness that stays flat over steps."""

    def evaluate(self, genome, cumulative_steps, replica=0):
        return float(np.random.default_rng(replica).standard_normal())


def literal_hurdle_training(curve, increments, hurdles):
    """Straight transcription of the hurdle loop with an infinite sentinel."""
    h = list(hurdles) + [math.inf]
    i = 0
    t = increments[0]
    f = curve(t)
    while f > h[i]:
        i += 1
        t += increments[i]
        f = curve(t)
    return f, t


def saturating(asymptote, start, rate):
    return lambda steps: asymptote - (asymptote - start) * math.exp(-rate * steps)


class TestHurdleSchedule:
    """Test suite for the hurdle schedule value type."""

    def test_fixed(self):
        """Test a fixed schedule is one increment with no room for hurdles."""
        schedule = HurdleSchedule.fixed(30)
        assert schedule.max_steps == 30
        assert schedule.full

    def test_from_mode(self):
        """Test schedules follow the configured fitness mode."""
        pdh = HurdleSchedule.from_mode(FitnessMode(step_increments=[60, 60, 120], models_per_hurdle=5000))
        assert pdh.step_increments == (60, 60, 120)
        assert pdh.models_per_hurdle == 5000
        fixed = HurdleSchedule.from_mode(FitnessMode(kind=FitnessModeKind.FIXED_STEPS, fixed_steps=45))
        assert fixed.step_increments == (45,)

    def test_queue_must_be_shorter_than_increments(self):
        """Test a schedule cannot hold as many hurdles as increments."""
        with pytest.raises(ValueError):
            HurdleSchedule((10, 10), 5, (0.1, 0.2))
        with pytest.raises(ValueError):
            HurdleSchedule((10, 0), 5)


class TestFitnessWithHurdles:
    """Test suite for hurdle-gated training."""

    def test_no_hurdles_trains_first_increment(self, transformer):
        """Test an empty queue trains exactly the first increment."""
        ledger = BudgetLedger()
        result = fitness_with_hurdles(
            transformer, HurdleSchedule((10, 20, 30), 5), CurveEvaluator(lambda t: 1.0), ledger, "m0"
        )
        assert result.steps_used == 10
        assert result.gates == ()
        assert ledger.total_steps_consumed == 10

    def test_fails_first_hurdle(self, transformer):
        """Test a model below the first hurdle stops with its first fitness."""
        evaluator = CurveEvaluator(lambda t: 0.4 if t == 10 else 0.9)
        result = fitness_with_hurdles(transformer, HurdleSchedule((10, 10, 10), 5, (0.5,)), evaluator)
        assert (result.fitness, result.steps_used) == (0.4, 10)
        assert [gate.passed for gate in result.gates] == [False]

    def test_passes_every_hurdle(self, transformer):
        """Test a model clearing both hurdles trains all three increments."""
        ledger = BudgetLedger()
        curve = saturating(1.0, 0.0, 0.1)
        result = fitness_with_hurdles(
            transformer, HurdleSchedule((10, 10, 10), 5, (0.5, 0.7)), CurveEvaluator(curve), ledger, "m1"
        )
        assert result.steps_used == 30
        assert result.fitness == curve(30)
        assert [(gate.cumulative_steps, gate.passed) for gate in result.gates] == [(10, True), (20, True)]
        assert ledger.per_model_steps["m1"] == 30

    def test_equal_fitness_does_not_pass(self, transformer):
        """Test a hurdle must be exceeded strictly."""
        result = fitness_with_hurdles(
            transformer, HurdleSchedule((10, 10), 5, (0.5,)), CurveEvaluator(lambda t: 0.5)
        )
        assert result.steps_used == 10

    def test_matches_literal_transcription(self, transformer):
        """Test 50 random curves and hurdle queues against the literal loop."""
        rng = np.random.default_rng(50)
        for _ in range(50):
            curve = saturating(rng.uniform(-2.0, -1.0), -3.0, rng.uniform(0.01, 0.5))
            increments = tuple(int(s) for s in rng.integers(1, 40, size=rng.integers(1, 6)))
            hurdles = tuple(float(h) for h in rng.uniform(-3.0, -1.0, size=rng.integers(0, len(increments))))
            expected = literal_hurdle_training(curve, increments, hurdles)
            ledger = BudgetLedger()
            result = fitness_with_hurdles(
                transformer, HurdleSchedule(increments, 3, hurdles), CurveEvaluator(curve), ledger
            )
            assert (result.fitness, result.steps_used) == expected
            assert ledger.total_steps_consumed == result.steps_used

    def test_failure_charges_steps(self, transformer):
        """Test a failed evaluation still charges the steps trained and counts the model."""

        def curve(steps):
            if steps > 10:
                raise RuntimeError("out of memory")
            return 1.0

        ledger = BudgetLedger()
        with pytest.raises(EvaluationFailed) as info:
            fitness_with_hurdles(transformer, HurdleSchedule((10, 10), 5, (0.5,)), CurveEvaluator(curve), ledger, "m2")
        assert info.value.steps_used == 20
        assert ledger.per_model_steps["m2"] == 20
        assert ledger.models_evaluated == 1

    def test_evaluator_failure_charges_cumulative_steps(self, transformer):
        """Test an evaluator raising its own EVALUATION_FAILED after a passed hurdle is charged both increments."""

        def curve(steps):
            if steps >= 20:
                raise EvaluationFailed("diverged")
            return 1.0

        ledger = BudgetLedger()
        with pytest.raises(EvaluationFailed) as info:
            fitness_with_hurdles(transformer, HurdleSchedule((10, 10), 5, (0.5,)), CurveEvaluator(curve), ledger, "m3")
        assert info.value.steps_used == 20
        assert ledger.total_steps_consumed == 20
        assert ledger.per_model_steps["m3"] == 20

    def test_more_steps_means_beaten_hurdle(self, transformer):
        """Test a model trained longer than another beat, at the shorter count, the hurdle the other failed."""
        rng = np.random.default_rng(7)
        increments = (10, 10, 20, 20)
        hurdles = (-2.4, -2.0, -1.7)
        curves = [saturating(rng.uniform(-2.2, -1.4), -3.0, rng.uniform(0.02, 0.3)) for _ in range(60)]
        results = [
            fitness_with_hurdles(transformer, HurdleSchedule(increments, 5, hurdles), CurveEvaluator(curve))
            for curve in curves
        ]
        assert len({result.steps_used for result in results}) > 1
        for longer, longer_result in zip(curves, results):
            for shorter_result in results:
                if longer_result.steps_used <= shorter_result.steps_used:
                    continue
                failed = shorter_result.gates[-1]
                assert not failed.passed
                assert failed.cumulative_steps == shorter_result.steps_used
                assert longer(failed.cumulative_steps) > failed.hurdle

    def test_hurdles_save_steps(self, transformer):
        """Test hurdles at the mean of a symmetric distribution stop about half the models early."""
        schedule = HurdleSchedule((10, 10, 10), 5, (0.0,))
        ledger = BudgetLedger()
        evaluator = ReplicaEvaluator()
        models = 400
        stopped = 0
        for replica in range(models):
            result = fitness_with_hurdles(transformer, schedule, evaluator, ledger, str(replica), replica)
            stopped += result.steps_used == 10
        band = 2.576 * math.sqrt(0.25 / models)
        assert stopped / models >= 0.5 - band
        assert ledger.total_steps_consumed < models * schedule.max_steps
        assert ledger.models_evaluated == models


class TestMeanFitnessOfMax:
    """Test suite for the hurdle value."""

    def test_plain_mean(self):
        """Test members trained equally give a plain mean."""
        assert mean_fitness_of_max([Member(1, 10), Member(2, 10), Member(3, 10)]) == 2

    def test_only_max_steps_counted(self):
        """Test only the most-trained members contribute."""
        members = [Member(0, 10), Member(0, 10), Member(4, 20), Member(6, 20)]
        assert mean_fitness_of_max(members) == 5

    def test_empty_population(self):
        """Test an empty population is rejected."""
        with pytest.raises(ValueError):
            mean_fitness_of_max([])

    @given(st.lists(st.tuples(st.floats(-10, 10), st.integers(1, 4)), min_size=1, max_size=30))
    def test_matches_filter_then_mean(self, pairs):
        """Test against filtering the most-trained members and averaging."""
        members = [Member(f, s) for f, s in pairs]
        top = max(m.steps_trained for m in members)
        values = [m.fitness for m in members if m.steps_trained == top]
        assert mean_fitness_of_max(members) == pytest.approx(sum(values) / len(values))


class TestMaybeCreateHurdle:
    """Test suite for hurdle creation."""

    @pytest.fixture
    def population(self):
        return [Member(float(f), 10) for f in (1, 2, 3, 4, 5)]

    def test_counter_below_m(self, population):
        """Test nothing happens before m models were evaluated."""
        schedule = HurdleSchedule((10, 10, 10), 5)
        assert maybe_create_hurdle(schedule, population, 4) is schedule

    def test_terminal_phase(self, population):
        """Test a full queue is left alone."""
        schedule = HurdleSchedule((10, 10, 10), 5, (1.0, 2.0))
        assert maybe_create_hurdle(schedule, population, 5) is schedule

    def test_appends_population_mean(self, population):
        """Test the new hurdle is the mean fitness of the population."""
        extended = maybe_create_hurdle(HurdleSchedule((10, 10, 10), 5), population, 5)
        assert extended.hurdles == (3.0,)


class TestBudgetLedger:
    """Test suite for step accounting."""

    def test_total_is_sum(self):
        """Test the total always equals the per-model sum."""
        ledger = BudgetLedger()
        for key, steps in (("a", 10), ("b", 5), ("a", 20)):
            ledger.charge(key, steps)
        assert ledger.total_steps_consumed == sum(ledger.per_model_steps.values()) == 35

    def test_negative_charge(self):
        """Test negative charges are rejected."""
        with pytest.raises(ValueError):
            BudgetLedger().charge("a", -1)

    def test_merge(self):
        """Test merging folds both steps and model counts."""
        owner, worker = BudgetLedger(), BudgetLedger()
        owner.charge("a", 10)
        owner.record_model()
        worker.charge("b", 7)
        worker.record_model()
        owner.merge(worker)
        assert owner.to_dict() == {"total_steps_consumed": 17, "models_evaluated": 2}

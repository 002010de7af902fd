"""
Command-line front end: searches, the budget-equalised ablation, and genome tooling.

Exit codes: 0 success, 1 domain failure, 2 usage or configuration error.
"""

import argparse
import csv
import logging
import math
import os
import statistics
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml
from dotenv import load_dotenv

from .arch_composer import (
    graph_report,
    param_counts_for_scales,
    reference_architecture,
    reference_scale,
    scale_dimensions,
)
from .config import (
    PRESETS,
    ExperimentConfig,
    FitnessMode,
    FitnessModeKind,
    ModelConfig,
    SeedMode,
    ValidationConfig,
    load_config,
    load_preset,
    save_config,
)
from .errors import ConfigError, SearchError
from .evolution import SearchResult, resume_search, run_search, top_k
from .pdh import BudgetLedger
from .search_space import (
    EVOLVED_TRANSFORMER_SEED_PATH,
    TRANSFORMER_SEED_PATH,
    diff,
    load_genome,
    serialize,
    validate,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

CSV_HEADER = ["model_id", "parent_id", "created_index", "steps", "fitness", "true_asymptote", "arm", "replication"]


def configure_logging() -> None:
    logging.basicConfig(
        level=logging.DEBUG if os.getenv("DEBUG", "false").lower() == "true" else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def default_workers() -> int:
    value = os.getenv("ET_SEARCH_WORKERS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """--config wins over --preset; DEFAULT_PRESET applies when neither is given."""
    if getattr(args, "config", None):
        config = load_config(args.config)
    else:
        config = load_preset(getattr(args, "preset", None) or os.getenv("DEFAULT_PRESET", "desk"))
    workers = getattr(args, "workers", None)
    return config.with_overrides(
        seed=getattr(args, "seed", None),
        workers=workers if workers is not None else default_workers(),
        output_dir=getattr(args, "out", None),
    )


# --- reports ---------------------------------------------------------------------


def report_rows(events: Sequence[Dict[str, Any]], arm: str = "search", replication: int = 0) -> List[Dict[str, Any]]:
    """One row per evaluation event; failed evaluations have an empty fitness."""
    rows = []
    for event in events:
        if event["event_type"] not in ("EVAL_DONE", "EVAL_FAILED"):
            continue
        done = event["event_type"] == "EVAL_DONE"
        rows.append(
            {
                "model_id": event["model_id"],
                "parent_id": "" if event.get("parent_id") is None else event["parent_id"],
                "created_index": event["model_id"],
                "steps": event["steps"],
                "fitness": event["fitness"] if done else "",
                "true_asymptote": "" if not done or event.get("true_fitness") is None else event["true_fitness"],
                "arm": arm,
                "replication": replication,
            }
        )
    return rows


def write_csv(path: Path, rows: Sequence[Dict[str, Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def write_yaml(path: Path, document: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(document, sort_keys=False))


def search_summary(config: ExperimentConfig, result: SearchResult) -> Dict[str, Any]:
    best = top_k(result, 1)
    summary: Dict[str, Any] = {
        "name": config.name,
        "completed": result.completed,
        "models_evaluated": result.ledger.models_evaluated,
        "total_steps_consumed": result.ledger.total_steps_consumed,
        "hurdles": list(result.schedule.hurdles),
        "population_size": len(result.population),
    }
    if best:
        summary["top_model"] = {
            "model_id": best[0].model_id,
            "parent_id": best[0].parent_id,
            "fitness": best[0].fitness,
            "steps": best[0].steps_trained,
            "true_asymptote": best[0].true_fitness,
            "genome": yaml.safe_load(serialize(best[0].genome)),
        }
    return summary


# --- ablation --------------------------------------------------------------------------


@dataclass
class ArmStats:
    values: List[float] = field(default_factory=list)
    models: List[int] = field(default_factory=list)
    steps: List[int] = field(default_factory=list)
    ledger: BudgetLedger = field(default_factory=BudgetLedger)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_best_true_asymptote": statistics.fmean(self.values),
            "stdev_best_true_asymptote": statistics.stdev(self.values) if len(self.values) > 1 else 0.0,
            "mean_models_evaluated": statistics.fmean(self.models),
            "mean_steps_consumed": statistics.fmean(self.steps),
            "best_true_asymptote": list(self.values),
            "steps_consumed": list(self.steps),
        }


@dataclass
class AblationReport:
    arms: Dict[str, ArmStats]
    step_budgets: List[int]
    win_rates: Dict[str, float]
    random_worst_rate: float

    def mean(self, arm: str) -> float:
        return statistics.fmean(self.arms[arm].values)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step_budgets": list(self.step_budgets),
            "arms": {name: stats.to_dict() for name, stats in self.arms.items()},
            "pdh_seed_win_rates": dict(self.win_rates),
            "random_worst_rate": self.random_worst_rate,
        }


def arm_config(config: ExperimentConfig, arm: str, replication: int, step_budget: Optional[int] = None) -> ExperimentConfig:
    """Search config of one ablation arm; all arms of a replication share the oracle seed.

    PDH+seed runs its model budget; every other arm runs under ``step_budget``.
    """
    search = config.search
    increments = list(search.fitness_mode.step_increments)
    fixed_steps = {
        "fixed_half": max(1, increments[0] // 2),
        "fixed_increment": increments[0],
        "fixed_max": sum(increments),
        "fixed_full": config.ablation.full_train_steps,
    }
    update: Dict[str, Any] = {"seed": search.seed + replication, "worker_count": 1}
    if arm in ("pdh_seed", "pdh_random"):
        update["seed_mode"] = SeedMode.TRANSFORMER_SEED if arm == "pdh_seed" else SeedMode.RANDOM
        update["fitness_mode"] = FitnessMode(
            kind=FitnessModeKind.PDH,
            step_increments=increments,
            models_per_hurdle=search.fitness_mode.models_per_hurdle,
        )
    elif arm in fixed_steps:
        update["seed_mode"] = SeedMode.TRANSFORMER_SEED
        update["fitness_mode"] = FitnessMode(kind=FitnessModeKind.FIXED_STEPS, fixed_steps=fixed_steps[arm])
    else:
        raise ConfigError(f"unknown ablation arm {arm!r}")
    if arm != "pdh_seed":
        if step_budget is None:
            raise ConfigError(f"arm {arm} needs the equalised step budget")
        update["total_models"] = None
        update["total_steps"] = step_budget
    oracle = config.oracle.model_copy(update={"seed": config.oracle.seed + replication})
    return config.model_copy(update={"search": search.model_copy(update=update), "oracle": oracle})


def run_ablation(config: ExperimentConfig, output_dir: Optional[Path] = None) -> AblationReport:
    """Each replication runs PDH+seed first; its consumption is that replication's step budget."""
    arms = list(config.ablation.arms)
    stats = {arm: ArmStats() for arm in arms}
    rows: List[Dict[str, Any]] = []
    budgets: List[int] = []

    def record(arm: str, replication: int, result: SearchResult) -> None:
        best = top_k(result, 1)[0]
        stats[arm].values.append(float(best.true_fitness))
        stats[arm].models.append(result.ledger.models_evaluated)
        stats[arm].steps.append(result.ledger.total_steps_consumed)
        stats[arm].ledger.merge(result.ledger)
        rows.extend(report_rows(result.events, arm, replication))

    for replication in range(config.replications):
        reference = run_search(arm_config(config, "pdh_seed", replication))
        record("pdh_seed", replication, reference)
        budget = reference.ledger.total_steps_consumed
        budgets.append(budget)
        logger.info(f"Replication {replication}: step budget {budget}")
        for arm in arms:
            if arm != "pdh_seed":
                record(arm, replication, run_search(arm_config(config, arm, replication, budget)))

    for arm in arms:
        logger.info(
            f"Arm {arm}: mean best true asymptote {statistics.fmean(stats[arm].values):.5f}, "
            f"mean models {statistics.fmean(stats[arm].models):.1f}, "
            f"mean steps {statistics.fmean(stats[arm].steps):.1f}"
        )

    reference_values = stats["pdh_seed"].values
    win_rates = {}
    for arm in arms:
        if arm == "pdh_seed":
            continue
        wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in zip(reference_values, stats[arm].values))
        win_rates[arm] = wins / len(reference_values)
    random_worst = 0.0
    if "pdh_random" in stats:
        worst = sum(
            1
            for replication in range(config.replications)
            if stats["pdh_random"].values[replication]
            == min(stats[arm].values[replication] for arm in arms)
        )
        random_worst = worst / config.replications

    report = AblationReport(stats, budgets, win_rates, random_worst)
    if output_dir is not None:
        write_csv(output_dir / "report.csv", rows)
        write_yaml(output_dir / "report.yaml", report.to_dict())
    return report


# --- subcommands -----------------------------------------------------------------------


def cmd_search(args: argparse.Namespace) -> int:
    if args.resume:
        result = resume_search(args.resume, stop_after=args.stop_after, workers=args.workers)
        config = load_config(Path(args.resume).parent / "resolved_config.yaml")
        out = Path(args.resume).parent
    else:
        config = resolve_config(args)
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for stale in ("events.jsonl", "checkpoint.json"):
            (out / stale).unlink(missing_ok=True)
        save_config(config, out / "resolved_config.yaml")
        result = run_search(config, output_dir=out, stop_after=args.stop_after)
    summary = search_summary(config, result)
    write_yaml(out / "summary.yaml", summary)
    write_csv(out / "report.csv", report_rows(result.events))
    top = summary.get("top_model")
    if top:
        print(
            f"top model {top['model_id']}: fitness {top['fitness']:.6f} "
            f"(perplexity {math.exp(-top['fitness']):.4f}) after {top['steps']} steps"
        )
    print(f"{'completed' if result.completed else 'paused'}: {summary['models_evaluated']} models, "
          f"{summary['total_steps_consumed']} steps, outputs in {out}")
    return EXIT_OK


def cmd_ablation(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.replications is not None:
        config = config.model_copy(update={"replications": args.replications})
    if config.replications < 2:
        print("error: ablation needs at least 2 replications", file=sys.stderr)
        return EXIT_USAGE
    out = Path(config.output_dir)
    save_config(config, out / "resolved_config.yaml")
    report = run_ablation(config, out)
    print(f"{'arm':<16} {'mean':>10} {'stdev':>10} {'models':>8} {'steps':>10}")
    for arm, stats in report.arms.items():
        doc = stats.to_dict()
        print(
            f"{arm:<16} {doc['mean_best_true_asymptote']:>10.5f} {doc['stdev_best_true_asymptote']:>10.5f} "
            f"{doc['mean_models_evaluated']:>8.1f} {doc['mean_steps_consumed']:>10.1f}"
        )
    print(
        f"mean step budget {statistics.fmean(report.step_budgets):.1f}; "
        f"random arm worst in {report.random_worst_rate:.0%} of replications"
    )
    return EXIT_OK


def _model_config(args: argparse.Namespace) -> ModelConfig:
    values: Dict[str, Any] = {"input_embedding_dim": args.embedding, "vocab_size": args.vocab}
    if args.min_params is not None or args.max_params is not None:
        default = ModelConfig()
        values["param_range"] = (
            args.min_params if args.min_params is not None else default.min_params,
            args.max_params if args.max_params is not None else default.max_params,
        )
    return ModelConfig(**values)


def cmd_genome(args: argparse.Namespace) -> int:
    action = args.genome_command
    if action == "show":
        print(serialize(load_genome(args.genome)), end="")
        return EXIT_OK
    if action == "diff":
        rows = diff(load_genome(args.genome_a), load_genome(args.genome_b))
        print(f"{'section':<8} {'block':>5} {'branch':<11} {'field':<14} {'value_a':<22} value_b")
        for row in rows:
            block = "-" if row.block_index is None else str(row.block_index)
            value_a = getattr(row.value_a, "value", row.value_a)
            value_b = getattr(row.value_b, "value", row.value_b)
            print(f"{row.section.value:<8} {block:>5} {row.branch.value:<11} {row.field_name:<14} {value_a!s:<22} {value_b}")
        return EXIT_OK

    genome = load_genome(args.genome)
    model = _model_config(args)
    if action == "validate":
        report = validate(genome, ValidationConfig(model=model))
        if report.valid:
            print("valid")
            return EXIT_OK
        for failure in report.failures:
            print(failure.value)
        return EXIT_FAILURE
    if action == "params":
        reference = reference_architecture(genome, model)
        document: Dict[str, Any] = {
            "reference_scale": reference_scale(model),
            "reference_params": reference.total_params,
        }
        try:
            scaled = scale_dimensions(genome, model)
            document.update(scale_factor=scaled.scale_factor, total_params=scaled.total_params, in_range=True)
            status = EXIT_OK
        except SearchError as e:
            document.update(in_range=False, error=e.code)
            status = EXIT_FAILURE
        if args.curve:
            scales = [model.scale_max * step / args.curve for step in range(1, args.curve + 1)]
            counts = param_counts_for_scales(genome, model, scales)
            document["curve"] = [[float(scale), int(count)] for scale, count in zip(scales, counts)]
        print(yaml.safe_dump(document, sort_keys=False), end="")
        return status
    if action == "compose":
        arch = reference_architecture(genome, model) if args.reference else scale_dimensions(genome, model)
        text = yaml.safe_dump(graph_report(arch), sort_keys=False)
        if args.report:
            Path(args.report).write_text(text)
            print(f"graph report written to {args.report}")
        else:
            print(text, end="")
        return EXIT_OK
    raise ValueError(f"unknown genome command {action}")


def cmd_seeds(args: argparse.Namespace) -> int:
    print(f"transformer: {TRANSFORMER_SEED_PATH}")
    print(f"evolved_transformer: {EVOLVED_TRANSFORMER_SEED_PATH}")
    print(f"presets: {', '.join(PRESETS)}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------------------


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config YAML")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named preset")
    parser.add_argument("--seed", type=int, help="search seed override")
    parser.add_argument("--workers", type=int, help="evaluation workers (default: $ET_SEARCH_WORKERS or CPU count)")
    parser.add_argument("--out", help="output directory")


def _add_model_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embedding", type=int, default=512, help="input embedding width")
    parser.add_argument("--vocab", type=int, default=32768, help="vocabulary size")
    parser.add_argument("--min-params", type=int, dest="min_params")
    parser.add_argument("--max-params", type=int, dest="max_params")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="et-search", description="Evolutionary transformer architecture search")
    commands = parser.add_subparsers(dest="command", required=True)

    search = commands.add_parser("search", help="run a tournament-selection search")
    _add_run_options(search)
    search.add_argument("--resume", help="checkpoint.json of an interrupted run")
    search.add_argument("--stop-after", type=int, dest="stop_after", help="pause after N child models")
    search.set_defaults(handler=cmd_search)

    ablation = commands.add_parser("ablation", help="budget-equalised comparison of search setups")
    _add_run_options(ablation)
    ablation.add_argument("--replications", type=int)
    ablation.set_defaults(handler=cmd_ablation)

    genome = commands.add_parser("genome", help="genome file tooling")
    genome_commands = genome.add_subparsers(dest="genome_command", required=True)
    show = genome_commands.add_parser("show")
    show.add_argument("genome")
    check = genome_commands.add_parser("validate")
    check.add_argument("genome")
    _add_model_options(check)
    compare = genome_commands.add_parser("diff")
    compare.add_argument("genome_a")
    compare.add_argument("genome_b")
    params = genome_commands.add_parser("params")
    params.add_argument("genome")
    params.add_argument("--curve", type=int, default=0, help="also report counts at N evenly spaced scales")
    _add_model_options(params)
    compose = genome_commands.add_parser("compose")
    compose.add_argument("genome")
    compose.add_argument("--report", help="write the graph document here instead of stdout")
    compose.add_argument("--reference", action="store_true", help="use the reference scale, not the searched one")
    _add_model_options(compose)
    genome.set_defaults(handler=cmd_genome)

    seeds = commands.add_parser("seeds", help="list shipped seed genomes and presets")
    seeds.set_defaults(handler=cmd_seeds)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SearchError as e:
        logger.error(f"{e.code}: {e}")
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

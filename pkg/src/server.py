"""
Architecture search MCP server - genome tooling exposed as FastMCP tools.

Tools take genomes as YAML text and return the usual envelope:
``{"success": bool, ...}`` on success, ``error`` and ``error_type`` on failure.
"""

import os
import logging
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from fastmcp import FastMCP
from pydantic import ValidationError

from .arch_composer import graph_report, reference_architecture, reference_scale, scale_dimensions
from .config import PRESETS, ModelConfig, ValidationConfig
from .errors import ConfigError, SearchError
from .search_space import (
    EVOLVED_TRANSFORMER_SEED_PATH,
    TRANSFORMER_SEED_PATH,
    deserialize,
    diff,
    et_seed,
    genome_id,
    serialize,
    transformer_seed,
    validate,
)

logger = logging.getLogger(__name__)

SEEDS = {
    "transformer": (transformer_seed, TRANSFORMER_SEED_PATH),
    "evolved_transformer": (et_seed, EVOLVED_TRANSFORMER_SEED_PATH),
}

mcp = FastMCP(
    "Architecture Search MCP Server",
    instructions="Inspect, validate, diff and size Transformer-style genomes.",
)


def _failure(error: Exception) -> Dict[str, Any]:
    if isinstance(error, SearchError):
        logger.error(f"{error.code}: {error}")
        return {"success": False, "error": str(error), "error_type": error.code.lower()}
    logger.error(f"Unexpected error: {str(error)}")
    return {
        "success": False,
        "error": f"Unexpected error: {str(error)}",
        "error_type": "unexpected_error",
    }


def _model(
    embedding: int,
    vocab: int,
    min_params: Optional[int] = None,
    max_params: Optional[int] = None,
) -> ModelConfig:
    values: Dict[str, Any] = {"input_embedding_dim": embedding, "vocab_size": vocab}
    if min_params is not None or max_params is not None:
        default = ModelConfig()
        values["param_range"] = (
            min_params if min_params is not None else default.min_params,
            max_params if max_params is not None else default.max_params,
        )
    try:
        return ModelConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid model settings: {e.errors()[0]['msg']}") from e


def _value(field: Any) -> Any:
    return getattr(field, "value", field)


async def seed_genome(name: str = "transformer") -> Dict[str, Any]:
    """
    Return one of the shipped seed genomes.

    Args:
        name: 'transformer' or 'evolved_transformer'

    Returns:
        The seed as YAML text plus its content id
    """
    if name not in SEEDS:
        return {
            "success": False,
            "error": f"Unknown seed '{name}'. Available: {', '.join(SEEDS)}",
            "error_type": "input_error",
        }
    try:
        genome = SEEDS[name][0]()
        return {"success": True, "name": name, "genome_id": genome_id(genome), "genome_yaml": serialize(genome)}
    except Exception as e:
        return _failure(e)


async def validate_genome(
    genome_yaml: str,
    embedding: int = 512,
    vocab: int = 32768,
    check_param_range: bool = True,
) -> Dict[str, Any]:
    """
    Check a genome against the search-space constraints.

    Args:
        genome_yaml: Genome document as YAML text
        embedding: Input embedding width used for the parameter-range check
        vocab: Vocabulary size used for the parameter-range check
        check_param_range: Set to False to check structure only

    Returns:
        ``valid`` and the list of failed constraints
    """
    try:
        genome = deserialize(genome_yaml)
        constraints = ValidationConfig(model=_model(embedding, vocab), check_param_range=check_param_range)
        report = validate(genome, constraints)
        logger.info(f"Validated genome {genome_id(genome)}: {'valid' if report.valid else 'invalid'}")
        return {
            "success": True,
            "genome_id": genome_id(genome),
            "valid": report.valid,
            "failures": [failure.value for failure in report.failures],
        }
    except Exception as e:
        return _failure(e)


async def diff_genomes(genome_a: str, genome_b: str) -> Dict[str, Any]:
    """
    List the fields where two genomes differ, in canonical field order.

    Args:
        genome_a: First genome as YAML text
        genome_b: Second genome as YAML text
    """
    try:
        rows = diff(deserialize(genome_a), deserialize(genome_b))
        differences = [
            {
                "section": row.section.value,
                "block": row.block_index,
                "branch": row.branch.value,
                "field": row.field_name,
                "value_a": _value(row.value_a),
                "value_b": _value(row.value_b),
            }
            for row in rows
        ]
        return {"success": True, "differences": differences, "count": len(differences)}
    except Exception as e:
        return _failure(e)


async def count_parameters(
    genome_yaml: str,
    embedding: int = 512,
    vocab: int = 32768,
    min_params: Optional[int] = None,
    max_params: Optional[int] = None,
) -> Dict[str, Any]:
    """
    Count parameters at the reference scale and search the in-range scale factor.

    Returns:
        ``reference_params`` always; ``scale_factor`` and ``total_params`` when a
        scale inside the parameter range exists, otherwise ``in_range: False``.
    """
    try:
        genome = deserialize(genome_yaml)
        model = _model(embedding, vocab, min_params, max_params)
        result: Dict[str, Any] = {
            "success": True,
            "reference_scale": reference_scale(model),
            "reference_params": reference_architecture(genome, model).total_params,
            "param_range": list(model.param_range),
        }
        try:
            scaled = scale_dimensions(genome, model)
        except SearchError as e:
            logger.info(f"Genome {genome_id(genome)} has no in-range scale: {e}")
            result.update(in_range=False, reason=e.code.lower())
            return result
        result.update(in_range=True, scale_factor=scaled.scale_factor, total_params=scaled.total_params)
        return result
    except Exception as e:
        return _failure(e)


async def compose_genome(
    genome_yaml: str,
    embedding: int = 512,
    vocab: int = 32768,
    reference: bool = False,
) -> Dict[str, Any]:
    """
    Build the scaled computation graph of a genome.

    Args:
        genome_yaml: Genome document as YAML text
        reference: Use the reference scale instead of searching the parameter range

    Returns:
        Nodes, edges, widths and parameter counts of both cells
    """
    try:
        genome = deserialize(genome_yaml)
        model = _model(embedding, vocab)
        arch = reference_architecture(genome, model) if reference else scale_dimensions(genome, model)
        return {"success": True, "genome_id": genome_id(genome), "graph": graph_report(arch)}
    except Exception as e:
        return _failure(e)


async def get_available_seeds() -> str:
    """Describe the shipped seed genomes and experiment presets."""
    lines = []
    for name, (loader, path) in SEEDS.items():
        genome = loader()
        lines.append(f"## {name} ({genome_id(genome)})")
        lines.append(f"- File: {path}")
        lines.append(f"- Encoder cells: {genome.encoder_cells}, decoder cells: {genome.decoder_cells}")
        lines.append("")
    lines.append(f"Presets: {', '.join(PRESETS)}")
    return "\n".join(lines)


for _tool in (seed_genome, validate_genome, diff_genomes, count_parameters, compose_genome):
    mcp.tool()(_tool)
mcp.resource("seeds://available")(get_available_seeds)


def main():
    """Run the architecture search MCP server."""
    load_dotenv()
    logging.basicConfig(
        level=logging.DEBUG if os.getenv("DEBUG", "false").lower() == "true" else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    logger.info("Starting Architecture Search MCP Server...")
    logger.info(f"Available seeds: {', '.join(SEEDS)}")
    mcp.run()


if __name__ == "__main__":
    main()

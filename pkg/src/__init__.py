"""
Evolved Transformer architecture search package
"""

from .config import ExperimentConfig, ModelConfig, ValidationConfig, load_config, load_preset
from .errors import SearchError
from .evolution import run_search, top_k
from .search_space import Genome, et_seed, transformer_seed

__version__ = "1.0.0"
__all__ = [
    "ExperimentConfig",
    "ModelConfig",
    "ValidationConfig",
    "load_config",
    "load_preset",
    "SearchError",
    "run_search",
    "top_k",
    "Genome",
    "et_seed",
    "transformer_seed",
]

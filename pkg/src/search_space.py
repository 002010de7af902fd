"""
Gene encoding of the seq2seq search space.

A genome is 14 blocks (6 encoder, 8 decoder) of 11 fields each plus the two
cell counts: 156 mutable fields. Genomes are frozen values; every randomised
operation takes an explicit ``numpy.random.Generator``.
"""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, List, NamedTuple, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import yaml
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from .config import SEED_DIR, ValidationConfig
from .errors import (
    GenomeParseError,
    MalformedGenome,
    ParamRangeUnsatisfiable,
    ResampleLimitExceeded,
    VocabularyError,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

ENCODER_BLOCKS = 6
DECODER_BLOCKS = 8
FIELDS_PER_BLOCK = 11
MAX_CELLS = 6
MAX_RELATIVE_DIM = 10


class Normalization(str, Enum):
    LAYER_NORM = "layer_norm"
    NONE = "none"


class Activation(str, Enum):
    SWISH = "swish"
    RELU = "relu"
    LEAKY_RELU = "leaky_relu"
    NONE = "none"


class Combiner(str, Enum):
    ADDITION = "addition"
    CONCATENATION = "concatenation"
    MULTIPLICATION = "multiplication"


class LayerFamily(str, Enum):
    STANDARD_CONV = "standard_conv"
    SEPARABLE_CONV = "separable_conv"
    LIGHTWEIGHT_CONV = "lightweight_conv"
    ATTENTION = "attention"
    GATED_LINEAR_UNIT = "gated_linear_unit"
    ATTEND_TO_ENCODER = "attend_to_encoder"
    IDENTITY = "identity"
    DEAD_BRANCH = "dead_branch"


class LayerKind(str, Enum):
    """Every representable layer; (w, r, h) tuples outside these do not exist."""

    STANDARD_CONV_1X1 = "standard_conv_1x1"
    STANDARD_CONV_3X1 = "standard_conv_3x1"
    SEPARABLE_CONV_3X1 = "separable_conv_3x1"
    SEPARABLE_CONV_5X1 = "separable_conv_5x1"
    SEPARABLE_CONV_7X1 = "separable_conv_7x1"
    SEPARABLE_CONV_9X1 = "separable_conv_9x1"
    SEPARABLE_CONV_11X1 = "separable_conv_11x1"
    LIGHTWEIGHT_CONV_3X1_R1 = "lightweight_conv_3x1_r1"
    LIGHTWEIGHT_CONV_3X1_R4 = "lightweight_conv_3x1_r4"
    LIGHTWEIGHT_CONV_3X1_R16 = "lightweight_conv_3x1_r16"
    LIGHTWEIGHT_CONV_5X1_R1 = "lightweight_conv_5x1_r1"
    LIGHTWEIGHT_CONV_5X1_R4 = "lightweight_conv_5x1_r4"
    LIGHTWEIGHT_CONV_5X1_R16 = "lightweight_conv_5x1_r16"
    LIGHTWEIGHT_CONV_7X1_R1 = "lightweight_conv_7x1_r1"
    LIGHTWEIGHT_CONV_7X1_R4 = "lightweight_conv_7x1_r4"
    LIGHTWEIGHT_CONV_7X1_R16 = "lightweight_conv_7x1_r16"
    LIGHTWEIGHT_CONV_15X1_R1 = "lightweight_conv_15x1_r1"
    LIGHTWEIGHT_CONV_15X1_R4 = "lightweight_conv_15x1_r4"
    LIGHTWEIGHT_CONV_15X1_R16 = "lightweight_conv_15x1_r16"
    ATTENTION_4 = "attention_4"
    ATTENTION_8 = "attention_8"
    ATTENTION_16 = "attention_16"
    GATED_LINEAR_UNIT = "gated_linear_unit"
    ATTEND_TO_ENCODER = "attend_to_encoder"
    IDENTITY = "identity"
    DEAD_BRANCH = "dead_branch"

    @property
    def family(self) -> LayerFamily:
        return _LAYER_TRAITS[self][0]

    @property
    def kernel_width(self) -> Optional[int]:
        return _LAYER_TRAITS[self][1]

    @property
    def reduction(self) -> Optional[int]:
        return _LAYER_TRAITS[self][2]

    @property
    def heads(self) -> Optional[int]:
        return _LAYER_TRAITS[self][3]

    @property
    def is_convolution(self) -> bool:
        return self.family in _CONV_FAMILIES

    @property
    def uses_relative_dim(self) -> bool:
        """IDENTITY, DEAD_BRANCH and LIGHTWEIGHT_CONV keep their input width."""
        return self.family not in _WIDTH_PRESERVING


_CONV_FAMILIES = frozenset(
    {LayerFamily.STANDARD_CONV, LayerFamily.SEPARABLE_CONV, LayerFamily.LIGHTWEIGHT_CONV}
)
_WIDTH_PRESERVING = frozenset(
    {LayerFamily.IDENTITY, LayerFamily.DEAD_BRANCH, LayerFamily.LIGHTWEIGHT_CONV}
)


def _parse_traits(kind: LayerKind) -> Tuple[LayerFamily, Optional[int], Optional[int], Optional[int]]:
    value = kind.value
    for family in (LayerFamily.STANDARD_CONV, LayerFamily.SEPARABLE_CONV, LayerFamily.LIGHTWEIGHT_CONV):
        prefix = family.value + "_"
        if value.startswith(prefix):
            shape, _, reduction = value[len(prefix):].partition("_r")
            width = int(shape.split("x")[0])
            return family, width, int(reduction) if reduction else None, None
    if value.startswith("attention_"):
        return LayerFamily.ATTENTION, None, None, int(value[len("attention_"):])
    return LayerFamily(value), None, None, None


_LAYER_TRAITS = {kind: _parse_traits(kind) for kind in LayerKind}

ENCODER_LAYERS: Tuple[LayerKind, ...] = tuple(k for k in LayerKind if k is not LayerKind.ATTEND_TO_ENCODER)
DECODER_LAYERS: Tuple[LayerKind, ...] = tuple(LayerKind)


class Section(str, Enum):
    ENCODER = "encoder"
    DECODER = "decoder"
    CELLS = "cells"


class BranchSide(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    BLOCK_LEVEL = "block-level"
    CELL_LEVEL = "cell-level"


class Failure(str, Enum):
    NO_ATTEND_TO_ENCODER = "NO_ATTEND_TO_ENCODER"
    NO_RESIDUAL_PATH = "NO_RESIDUAL_PATH"
    PARAM_RANGE_UNSATISFIABLE = "PARAM_RANGE_UNSATISFIABLE"
    BAD_INPUT_INDEX = "BAD_INPUT_INDEX"


@dataclass(frozen=True)
class BranchGene:
    input: int
    norm: Normalization
    layer: LayerKind
    rel_dim: int
    activation: Activation

    def __post_init__(self) -> None:
        if self.input < 0:
            raise MalformedGenome(f"branch input must be non-negative, got {self.input}")
        if not 1 <= self.rel_dim <= MAX_RELATIVE_DIM:
            raise MalformedGenome(f"relative output dimension {self.rel_dim} outside [1, {MAX_RELATIVE_DIM}]")


@dataclass(frozen=True)
class BlockGene:
    left: BranchGene
    right: BranchGene
    combiner: Combiner

    @property
    def branches(self) -> Tuple[BranchGene, BranchGene]:
        return self.left, self.right


@dataclass(frozen=True)
class Genome:
    encoder_blocks: Tuple[BlockGene, ...]
    decoder_blocks: Tuple[BlockGene, ...]
    encoder_cells: int
    decoder_cells: int

    def __post_init__(self) -> None:
        if len(self.encoder_blocks) != ENCODER_BLOCKS or len(self.decoder_blocks) != DECODER_BLOCKS:
            raise MalformedGenome(
                f"expected {ENCODER_BLOCKS} encoder and {DECODER_BLOCKS} decoder blocks, "
                f"got {len(self.encoder_blocks)} and {len(self.decoder_blocks)}"
            )
        for cells in (self.encoder_cells, self.decoder_cells):
            if not 1 <= cells <= MAX_CELLS:
                raise MalformedGenome(f"cell count {cells} outside [1, {MAX_CELLS}]")
        for block in self.encoder_blocks:
            if any(branch.layer is LayerKind.ATTEND_TO_ENCODER for branch in block.branches):
                raise MalformedGenome("attend_to_encoder is only available to decoder blocks")

    def blocks(self, section: Section) -> Tuple[BlockGene, ...]:
        return self.encoder_blocks if section is Section.ENCODER else self.decoder_blocks

    def cells(self, section: Section) -> int:
        return self.encoder_cells if section is Section.ENCODER else self.decoder_cells


@dataclass(frozen=True)
class ValidityReport:
    failures: Tuple[Failure, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.failures


@dataclass(frozen=True)
class FieldDiff:
    section: Section
    block_index: Optional[int]
    branch: BranchSide
    field_name: str
    value_a: Any
    value_b: Any


class FieldRef(NamedTuple):
    section: Section
    block_index: Optional[int]
    branch: BranchSide
    field_name: str

    @property
    def key(self) -> str:
        if self.section is Section.CELLS:
            return f"cells.{self.field_name}"
        if self.branch is BranchSide.BLOCK_LEVEL:
            return f"{self.section.value}.{self.block_index}.{self.field_name}"
        return f"{self.section.value}.{self.block_index}.{self.branch.value}.{self.field_name}"


BRANCH_FIELDS = ("input", "norm", "layer", "rel_dim", "activation")


def _build_field_refs() -> Tuple[FieldRef, ...]:
    refs: List[FieldRef] = []
    for section, count in ((Section.ENCODER, ENCODER_BLOCKS), (Section.DECODER, DECODER_BLOCKS)):
        for index in range(count):
            for side in (BranchSide.LEFT, BranchSide.RIGHT):
                refs.extend(FieldRef(section, index, side, name) for name in BRANCH_FIELDS)
            refs.append(FieldRef(section, index, BranchSide.BLOCK_LEVEL, "combiner"))
    refs.append(FieldRef(Section.CELLS, None, BranchSide.CELL_LEVEL, "encoder_cells"))
    refs.append(FieldRef(Section.CELLS, None, BranchSide.CELL_LEVEL, "decoder_cells"))
    return tuple(refs)


FIELD_REFS = _build_field_refs()
FIELD_COUNT = len(FIELD_REFS)
_ENCODER_SPAN = range(0, ENCODER_BLOCKS * FIELDS_PER_BLOCK)
_DECODER_SPAN = range(_ENCODER_SPAN.stop, _ENCODER_SPAN.stop + DECODER_BLOCKS * FIELDS_PER_BLOCK)
_CELLS_SPAN = range(_DECODER_SPAN.stop, FIELD_COUNT)


def field_names() -> List[str]:
    """Flattened field keys in canonical order."""
    return [ref.key for ref in FIELD_REFS]


def input_vocabulary(block_index: int) -> List[int]:
    """Zero-based block b reads hidden states [0, b]; state 0 is the cell input."""
    return list(range(block_index + 1))


def normalization_vocabulary(config: ValidationConfig) -> List[Normalization]:
    if config.normalization_none:
        return [Normalization.LAYER_NORM, Normalization.NONE]
    return [Normalization.LAYER_NORM]


def layer_vocabulary(decoder: bool) -> Tuple[LayerKind, ...]:
    return DECODER_LAYERS if decoder else ENCODER_LAYERS


def field_vocabulary(ref: FieldRef, config: ValidationConfig) -> Sequence[Any]:
    name = ref.field_name
    if name == "input":
        return input_vocabulary(ref.block_index or 0)
    if name == "norm":
        return normalization_vocabulary(config)
    if name == "layer":
        return layer_vocabulary(ref.section is Section.DECODER)
    if name == "rel_dim":
        return list(range(1, MAX_RELATIVE_DIM + 1))
    if name == "activation":
        return list(Activation)
    if name == "combiner":
        return list(Combiner)
    return list(range(1, MAX_CELLS + 1))


def _branch_values(branch: BranchGene) -> List[Any]:
    return [branch.input, branch.norm, branch.layer, branch.rel_dim, branch.activation]


def flatten(genome: Genome) -> List[Any]:
    """The 156 field values in FIELD_REFS order."""
    values: List[Any] = []
    for block in genome.encoder_blocks + genome.decoder_blocks:
        values.extend(_branch_values(block.left))
        values.extend(_branch_values(block.right))
        values.append(block.combiner)
    values.extend([genome.encoder_cells, genome.decoder_cells])
    return values


def _branch_from(values: Sequence[Any], offset: int) -> BranchGene:
    return BranchGene(
        input=values[offset],
        norm=values[offset + 1],
        layer=values[offset + 2],
        rel_dim=values[offset + 3],
        activation=values[offset + 4],
    )


def _blocks_from(values: Sequence[Any], span: range) -> Tuple[BlockGene, ...]:
    return tuple(
        BlockGene(
            left=_branch_from(values, offset),
            right=_branch_from(values, offset + 5),
            combiner=values[offset + 10],
        )
        for offset in range(span.start, span.stop, FIELDS_PER_BLOCK)
    )


def unflatten(values: Sequence[Any]) -> Genome:
    if len(values) != FIELD_COUNT:
        raise MalformedGenome(f"expected {FIELD_COUNT} field values, got {len(values)}")
    return Genome(
        encoder_blocks=_blocks_from(values, _ENCODER_SPAN),
        decoder_blocks=_blocks_from(values, _DECODER_SPAN),
        encoder_cells=values[_CELLS_SPAN.start],
        decoder_cells=values[_CELLS_SPAN.start + 1],
    )


# --- structural checks -------------------------------------------------------


def consumed_states(blocks: Sequence[BlockGene]) -> FrozenSet[int]:
    """Hidden states read by some branch; dead branches read nothing."""
    return frozenset(
        branch.input
        for block in blocks
        for branch in block.branches
        if branch.layer is not LayerKind.DEAD_BRANCH
    )


def output_addends(blocks: Sequence[BlockGene]) -> Tuple[int, ...]:
    """Hidden states summed into the cell output: the last block plus every unused state."""
    final = len(blocks)
    used = consumed_states(blocks)
    return tuple(j for j in range(final) if j not in used) + (final,)


def has_residual_path(blocks: Sequence[BlockGene]) -> bool:
    """An IDENTITY/ADDITION chain from state 0 to the cell output."""
    reachable = [True] + [False] * len(blocks)
    for index, block in enumerate(blocks):
        if block.combiner is not Combiner.ADDITION:
            continue
        for branch in block.branches:
            if (
                branch.layer is LayerKind.IDENTITY
                and branch.input <= index
                and reachable[branch.input]
            ):
                reachable[index + 1] = True
    return any(reachable[state] for state in output_addends(blocks))


def has_bad_inputs(blocks: Sequence[BlockGene]) -> bool:
    return any(branch.input > index for index, block in enumerate(blocks) for branch in block.branches)


def cell_failures(blocks: Sequence[BlockGene], decoder: bool, config: ValidationConfig) -> List[Failure]:
    failures: List[Failure] = []
    if decoder and config.require_attend_to_encoder:
        if not any(b.layer is LayerKind.ATTEND_TO_ENCODER for block in blocks for b in block.branches):
            failures.append(Failure.NO_ATTEND_TO_ENCODER)
    if config.require_residual_path and not has_residual_path(blocks):
        failures.append(Failure.NO_RESIDUAL_PATH)
    if has_bad_inputs(blocks):
        failures.append(Failure.BAD_INPUT_INDEX)
    return failures


def _param_range_ok(genome: Genome, config: ValidationConfig) -> bool:
    from .arch_composer import scale_dimensions

    try:
        scale_dimensions(genome, config.model)
    except ParamRangeUnsatisfiable:
        return False
    return True


def validate(genome: Genome, constraints: Optional[ValidationConfig] = None) -> ValidityReport:
    """Check a genome against the search-space constraints."""
    config = constraints or ValidationConfig()
    failures = cell_failures(genome.encoder_blocks, False, config)
    for failure in cell_failures(genome.decoder_blocks, True, config):
        if failure not in failures:
            failures.append(failure)
    if (
        config.check_param_range
        and Failure.BAD_INPUT_INDEX not in failures
        and not _param_range_ok(genome, config)
    ):
        failures.append(Failure.PARAM_RANGE_UNSATISFIABLE)
    return ValidityReport(tuple(failures))


# --- sampling and mutation ----------------------------------------------------


class _Rejected(Exception):
    """A draw violated a constraint and is retried."""


def _bounded(draw: Callable[[], T], limit: int, what: str) -> T:
    retrying = Retrying(
        stop=stop_after_attempt(limit),
        retry=retry_if_exception_type(_Rejected),
        reraise=False,
    )
    try:
        return retrying(draw)
    except RetryError as exc:
        raise ResampleLimitExceeded(f"{what}: no valid draw after {limit} attempts") from exc


def _draw_section(
    span: range,
    pick: Callable[[int], Any],
    decoder: Optional[bool],
    config: ValidationConfig,
) -> Dict[int, Any]:
    """Draw one section's fields until its structural constraints hold.

    Encoder, decoder and cell-count constraints are independent, so redrawing
    each section separately samples the same conditional distribution as
    redrawing the whole genome.
    """

    def attempt() -> Dict[int, Any]:
        drawn = {index: pick(index) for index in span}
        if decoder is not None:
            values = [drawn[index] for index in span]
            blocks = _blocks_from(values, range(0, len(values)))
            if cell_failures(blocks, decoder, config):
                raise _Rejected()
        return drawn

    if decoder is None:
        section = Section.CELLS
    else:
        section = Section.DECODER if decoder else Section.ENCODER
    return _bounded(attempt, config.max_resamples, f"{section.value} section")


def _sample_genome(
    pick: Callable[[int], Any],
    config: ValidationConfig,
    what: str,
) -> Genome:
    def attempt() -> Genome:
        drawn: Dict[int, Any] = {}
        drawn.update(_draw_section(_ENCODER_SPAN, pick, False, config))
        drawn.update(_draw_section(_DECODER_SPAN, pick, True, config))
        drawn.update(_draw_section(_CELLS_SPAN, pick, None, config))
        genome = unflatten([drawn[index] for index in range(FIELD_COUNT)])
        if config.check_param_range and not _param_range_ok(genome, config):
            raise _Rejected()
        return genome

    return _bounded(attempt, config.max_resamples, what)


def random_genome(rng: np.random.Generator, constraints: Optional[ValidationConfig] = None) -> Genome:
    """Draw every field uniformly from its vocabulary, resampling until valid."""
    config = constraints or ValidationConfig()
    vocabularies = [field_vocabulary(ref, config) for ref in FIELD_REFS]

    def pick(index: int) -> Any:
        vocabulary = vocabularies[index]
        return vocabulary[int(rng.integers(len(vocabulary)))]

    return _sample_genome(pick, config, "random_genome")


def mutate_with_mask(
    parent: Genome,
    rate: float,
    rng: np.random.Generator,
    constraints: Optional[ValidationConfig] = None,
) -> Tuple[Genome, FrozenSet[str]]:
    """Mutate each field independently with probability ``rate``.

    A selected field takes a uniformly chosen value from its vocabulary other
    than the current one; a field with no alternative keeps its value. Invalid
    children are redrawn from the same parent.

    Returns:
        The child and the keys of the fields selected by the Bernoulli mask.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mutation rate must be in [0, 1], got {rate}")
    config = constraints or ValidationConfig()
    if rate == 0.0:
        return parent, frozenset()

    current = flatten(parent)
    alternatives = [
        [value for value in field_vocabulary(ref, config) if value != current[index]]
        for index, ref in enumerate(FIELD_REFS)
    ]
    selected: Dict[int, bool] = {}

    def pick(index: int) -> Any:
        hit = bool(rng.random() < rate)
        selected[index] = hit
        options = alternatives[index]
        if not hit or not options:
            return current[index]
        return options[int(rng.integers(len(options)))]

    child = _sample_genome(pick, config, "mutate")
    mask = frozenset(FIELD_REFS[index].key for index, hit in selected.items() if hit)
    return child, mask


def mutate(
    parent: Genome,
    rate: float,
    rng: np.random.Generator,
    constraints: Optional[ValidationConfig] = None,
) -> Genome:
    return mutate_with_mask(parent, rate, rng, constraints)[0]


# --- diffing ---------------------------------------------------------------------


def diff(a: Genome, b: Genome) -> List[FieldDiff]:
    """One entry per flattened field where ``a`` and ``b`` differ."""
    return [
        FieldDiff(ref.section, ref.block_index, ref.branch, ref.field_name, value_a, value_b)
        for ref, value_a, value_b in zip(FIELD_REFS, flatten(a), flatten(b))
        if value_a != value_b
    ]


# --- serialization ----------------------------------------------------------------


def _plain(value: Any) -> Any:
    return value.value if isinstance(value, Enum) else value


def _branch_document(branch: BranchGene) -> Dict[str, Any]:
    return {name: _plain(getattr(branch, name)) for name in BRANCH_FIELDS}


def genome_to_dict(genome: Genome) -> Dict[str, Any]:
    def block_document(block: BlockGene) -> Dict[str, Any]:
        return {
            "left": _branch_document(block.left),
            "right": _branch_document(block.right),
            "combiner": block.combiner.value,
        }

    return {
        "encoder_blocks": [block_document(block) for block in genome.encoder_blocks],
        "decoder_blocks": [block_document(block) for block in genome.decoder_blocks],
        "encoder_cells": genome.encoder_cells,
        "decoder_cells": genome.decoder_cells,
    }


def serialize(genome: Genome) -> str:
    return yaml.safe_dump(genome_to_dict(genome), sort_keys=False)


def _expect(mapping: Any, key: str, location: str) -> Any:
    if not isinstance(mapping, dict):
        raise GenomeParseError("expected a mapping", location)
    if key not in mapping:
        raise GenomeParseError(f"missing key {key!r}", location)
    return mapping[key]


def _integer(value: Any, low: int, high: Optional[int], location: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise GenomeParseError(f"expected an integer, got {value!r}", location)
    if value < low or (high is not None and value > high):
        bound = f"[{low}, {high}]" if high is not None else f">= {low}"
        raise VocabularyError(f"value {value} outside {bound}", location)
    return value


def _member(enum_type: Any, value: Any, location: str, allowed: Optional[Sequence[Any]] = None) -> Any:
    try:
        member = enum_type(value)
    except ValueError:
        raise VocabularyError(f"{value!r} is not a valid {enum_type.__name__}", location) from None
    if allowed is not None and member not in allowed:
        raise VocabularyError(f"{value!r} is not allowed here", location)
    return member


def genome_from_dict(document: Any) -> Genome:
    blocks: Dict[Section, List[BlockGene]] = {}
    for section, key, count in (
        (Section.ENCODER, "encoder_blocks", ENCODER_BLOCKS),
        (Section.DECODER, "decoder_blocks", DECODER_BLOCKS),
    ):
        entries = _expect(document, key, "<root>")
        if not isinstance(entries, list) or len(entries) != count:
            raise GenomeParseError(f"expected a list of {count} blocks", key)
        parsed = []
        for index, entry in enumerate(entries):
            where = f"{key}[{index}]"
            sides = []
            for side in ("left", "right"):
                branch = _expect(entry, side, where)
                at = f"{where}.{side}"
                sides.append(
                    BranchGene(
                        input=_integer(_expect(branch, "input", at), 0, None, f"{at}.input"),
                        norm=_member(Normalization, _expect(branch, "norm", at), f"{at}.norm"),
                        layer=_member(
                            LayerKind,
                            _expect(branch, "layer", at),
                            f"{at}.layer",
                            layer_vocabulary(section is Section.DECODER),
                        ),
                        rel_dim=_integer(_expect(branch, "rel_dim", at), 1, MAX_RELATIVE_DIM, f"{at}.rel_dim"),
                        activation=_member(Activation, _expect(branch, "activation", at), f"{at}.activation"),
                    )
                )
            combiner = _member(Combiner, _expect(entry, "combiner", where), f"{where}.combiner")
            parsed.append(BlockGene(left=sides[0], right=sides[1], combiner=combiner))
        blocks[section] = parsed
    return Genome(
        encoder_blocks=tuple(blocks[Section.ENCODER]),
        decoder_blocks=tuple(blocks[Section.DECODER]),
        encoder_cells=_integer(_expect(document, "encoder_cells", "<root>"), 1, MAX_CELLS, "encoder_cells"),
        decoder_cells=_integer(_expect(document, "decoder_cells", "<root>"), 1, MAX_CELLS, "decoder_cells"),
    )


def deserialize(text: str) -> Genome:
    """Parse a genome document.

    Raises:
        GenomeParseError: malformed YAML or structure, with a location.
        VocabularyError: a value outside its field's vocabulary.
    """
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        location = f"line {mark.line + 1}, column {mark.column + 1}" if mark else None
        raise GenomeParseError(f"invalid YAML: {getattr(exc, 'problem', exc)}", location) from exc
    return genome_from_dict(document)


def load_genome(path: Union[str, Path]) -> Genome:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise GenomeParseError("file not found", str(path)) from exc
    return deserialize(text)


def save_genome(genome: Genome, path: Union[str, Path]) -> None:
    Path(path).write_text(serialize(genome))


@lru_cache(maxsize=4096)
def genome_id(genome: Genome) -> str:
    """Stable content hash; unchanged by a serialize/deserialize round trip."""
    return hashlib.sha256(serialize(genome).encode("utf-8")).hexdigest()[:16]


# --- canonical seeds ----------------------------------------------------------------


TRANSFORMER_SEED_PATH = SEED_DIR / "transformer.yaml"
EVOLVED_TRANSFORMER_SEED_PATH = SEED_DIR / "evolved_transformer.yaml"


@lru_cache(maxsize=None)
def transformer_seed() -> Genome:
    """The Transformer: two attention + feed-forward layers per cell, 3 + 3 cells."""
    return load_genome(TRANSFORMER_SEED_PATH)


@lru_cache(maxsize=None)
def et_seed() -> Genome:
    """The Evolved Transformer: the Transformer seed with the 16 ablation mutations applied."""
    return load_genome(EVOLVED_TRANSFORMER_SEED_PATH)

"""
Genome to computation graph: shape inference, parameter counting, width scaling
and a small numpy forward pass used to check the graph structurally.

Widths are resolved over a vector of scale factors at once, so the same code
serves the binary search (one scale at a time) and the dense linear scan.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import ModelConfig
from .errors import MalformedGenome, ParamRangeUnsatisfiable, ShapeError
from .search_space import (
    Activation,
    BlockGene,
    BranchSide,
    Combiner,
    Genome,
    LayerFamily,
    LayerKind,
    Normalization,
    Section,
    output_addends,
)

logger = logging.getLogger(__name__)

LEAKY_RELU_SLOPE = 0.2
LAYER_NORM_EPSILON = 1e-6
INIT_RANGE = 0.1
ATTEND_TO_ENCODER_HEADS = 8


@dataclass(frozen=True)
class BranchNode:
    """One branch of one block: normalization, layer, activation."""

    name: str
    block_index: int
    side: BranchSide
    input_state: int
    norm: Normalization
    layer: LayerKind
    rel_dim: int
    activation: Activation
    causal: bool

    @property
    def dead(self) -> bool:
        return self.layer is LayerKind.DEAD_BRANCH

    @property
    def shift(self) -> int:
        """Left shift of a causal convolution window."""
        if self.causal and self.layer.kernel_width:
            return (self.layer.kernel_width - 1) // 2
        return 0


@dataclass(frozen=True)
class CellGraph:
    section: Section
    repetitions: int
    nodes: Tuple[BranchNode, ...]
    combiners: Tuple[Combiner, ...]
    output_addends: Tuple[int, ...]

    @property
    def block_count(self) -> int:
        return len(self.combiners)

    def block_nodes(self, index: int) -> Tuple[BranchNode, BranchNode]:
        return self.nodes[2 * index], self.nodes[2 * index + 1]

    def edges(self) -> List[Tuple[str, str]]:
        """Directed edges between hidden states (``h<j>``) and live branch nodes."""
        result: List[Tuple[str, str]] = []
        for node in self.nodes:
            if node.dead:
                continue
            result.append((f"h{node.input_state}", node.name))
            result.append((node.name, f"h{node.block_index + 1}"))
        result.extend((f"h{state}", "output") for state in self.output_addends)
        return result


class NodeDims(NamedTuple):
    in_width: int
    out_width: Optional[int]
    params: int


@dataclass(frozen=True)
class ScaledArchitecture:
    encoder_graph: CellGraph
    decoder_graph: CellGraph
    scale_factor: float
    model: ModelConfig
    node_dims: Dict[str, NodeDims]
    state_widths: Dict[str, Tuple[int, ...]]
    total_params: int = field(default=0)

    @property
    def absolute_dims(self) -> Dict[str, int]:
        return {name: dims.out_width for name, dims in self.node_dims.items() if dims.out_width is not None}

    def graphs(self) -> Tuple[CellGraph, CellGraph]:
        return self.encoder_graph, self.decoder_graph


# --- composition --------------------------------------------------------------


def _compose_cell(section: Section, blocks: Sequence[BlockGene], repetitions: int) -> CellGraph:
    decoder = section is Section.DECODER
    nodes: List[BranchNode] = []
    for index, block in enumerate(blocks):
        for side, branch in ((BranchSide.LEFT, block.left), (BranchSide.RIGHT, block.right)):
            if branch.input > index:
                raise MalformedGenome(
                    f"{section.value} block {index} {side.value} reads hidden state {branch.input}; "
                    f"only [0, {index}] exist"
                )
            nodes.append(
                BranchNode(
                    name=f"{section.value}.b{index}.{side.value}",
                    block_index=index,
                    side=side,
                    input_state=branch.input,
                    norm=branch.norm,
                    layer=branch.layer,
                    rel_dim=branch.rel_dim,
                    activation=branch.activation,
                    causal=decoder,
                )
            )
    return CellGraph(
        section=section,
        repetitions=repetitions,
        nodes=tuple(nodes),
        combiners=tuple(block.combiner for block in blocks),
        output_addends=output_addends(blocks),
    )


def compose(genome: Genome, config: Optional[ModelConfig] = None) -> Tuple[CellGraph, CellGraph]:
    """Build the encoder and decoder cell graphs.

    Raises:
        MalformedGenome: a branch reads a hidden state that does not exist yet.
    """
    return (
        _compose_cell(Section.ENCODER, genome.encoder_blocks, genome.encoder_cells),
        _compose_cell(Section.DECODER, genome.decoder_blocks, genome.decoder_cells),
    )


# --- width resolution and parameter counting -----------------------------------


def scaled_width(rel_dim: int, scales: np.ndarray, config: ModelConfig) -> np.ndarray:
    """a = quantum * max(1, round(d * scale)), rounding half to even."""
    units = np.maximum(1, np.rint(rel_dim * scales)).astype(np.int64)
    return config.width_quantum * units


def _layer_dims(
    layer: LayerKind,
    rel_dim: int,
    in_width: np.ndarray,
    scales: np.ndarray,
    config: ModelConfig,
) -> Tuple[np.ndarray, np.ndarray]:
    family = layer.family
    if family is LayerFamily.IDENTITY:
        return in_width, np.zeros_like(in_width)
    if family is LayerFamily.LIGHTWEIGHT_CONV:
        groups = -(-in_width // layer.reduction)
        return in_width, groups * layer.kernel_width

    out = scaled_width(rel_dim, scales, config)
    memory = config.input_embedding_dim
    if family is LayerFamily.STANDARD_CONV:
        params = layer.kernel_width * in_width * out + out
    elif family is LayerFamily.SEPARABLE_CONV:
        params = in_width * layer.kernel_width + in_width * out + out
    elif family is LayerFamily.ATTENTION:
        params = 3 * in_width * out + out * out + 4 * out
    elif family is LayerFamily.ATTEND_TO_ENCODER:
        params = in_width * out + 2 * memory * out + out * out + 4 * out
    elif family is LayerFamily.GATED_LINEAR_UNIT:
        params = 2 * (in_width * out + out)
    else:
        raise MalformedGenome(f"layer {layer.value} has no parameter formula")
    return out, params


class _CellDims(NamedTuple):
    nodes: Dict[str, Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]]
    states: List[np.ndarray]
    cell_params: np.ndarray


def combined_width(combiner: Combiner, left: Optional[np.ndarray], right: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if left is None:
        return right
    if right is None:
        return left
    if combiner is Combiner.CONCATENATION:
        return left + right
    return np.maximum(left, right)


def _resolve_cell(graph: CellGraph, scales: np.ndarray, config: ModelConfig) -> _CellDims:
    model_width = np.full(scales.shape, config.input_embedding_dim, dtype=np.int64)
    states = [model_width]
    nodes: Dict[str, Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]] = {}
    cell_params = np.zeros(scales.shape, dtype=np.int64)
    for index, combiner in enumerate(graph.combiners):
        outputs: List[Optional[np.ndarray]] = []
        for node in graph.block_nodes(index):
            in_width = states[node.input_state]
            if node.dead:
                nodes[node.name] = (in_width, None, np.zeros_like(in_width))
                outputs.append(None)
                continue
            out_width, params = _layer_dims(node.layer, node.rel_dim, in_width, scales, config)
            if node.norm is Normalization.LAYER_NORM:
                params = params + 2 * in_width
            nodes[node.name] = (in_width, out_width, params)
            cell_params = cell_params + params
            outputs.append(out_width)
        width = combined_width(combiner, outputs[0], outputs[1])
        if width is None:
            width = states[graph.block_nodes(index)[0].input_state]
        states.append(width)
    return _CellDims(nodes, states, cell_params)


def _total_params(
    graphs: Tuple[CellGraph, CellGraph],
    scales: np.ndarray,
    config: ModelConfig,
) -> np.ndarray:
    total = np.full(scales.shape, config.vocab_size * config.input_embedding_dim, dtype=np.int64)
    for graph in graphs:
        total = total + graph.repetitions * _resolve_cell(graph, scales, config).cell_params
    return total


def param_counts_for_scales(genome: Genome, config: ModelConfig, scales: Sequence[float]) -> np.ndarray:
    """Total parameter count at every scale factor in ``scales``."""
    return _total_params(compose(genome, config), np.asarray(scales, dtype=np.float64), config)


def resolve(genome: Genome, config: ModelConfig, scale: float) -> ScaledArchitecture:
    """Resolve absolute widths at an explicit scale factor, without a range check."""
    if scale <= 0:
        raise ValueError(f"scale factor must be positive, got {scale}")
    graphs = compose(genome, config)
    scales = np.array([scale], dtype=np.float64)
    node_dims: Dict[str, NodeDims] = {}
    state_widths: Dict[str, Tuple[int, ...]] = {}
    for graph in graphs:
        dims = _resolve_cell(graph, scales, config)
        for name, (in_width, out_width, params) in dims.nodes.items():
            node_dims[name] = NodeDims(
                int(in_width[0]), None if out_width is None else int(out_width[0]), int(params[0])
            )
        state_widths[graph.section.value] = tuple(int(width[0]) for width in dims.states)
    return ScaledArchitecture(
        encoder_graph=graphs[0],
        decoder_graph=graphs[1],
        scale_factor=float(scale),
        model=config,
        node_dims=node_dims,
        state_widths=state_widths,
        total_params=int(_total_params(graphs, scales, config)[0]),
    )


def reference_scale(config: ModelConfig) -> float:
    """The scale at which the reference relative dimension maps to the model width."""
    return config.input_embedding_dim / (config.width_quantum * config.reference_relative_dim)


def reference_architecture(genome: Genome, config: ModelConfig) -> ScaledArchitecture:
    return resolve(genome, config, reference_scale(config))


def param_count(arch: ScaledArchitecture, config: Optional[ModelConfig] = None) -> int:
    """Sum of node parameters times cell repetitions plus the shared embedding."""
    config = config or arch.model
    total = config.vocab_size * config.input_embedding_dim
    for graph in arch.graphs():
        cell = sum(arch.node_dims[node.name].params for node in graph.nodes)
        total += graph.repetitions * cell
    return total


def scale_dimensions(genome: Genome, config: ModelConfig) -> ScaledArchitecture:
    """Binary search over (0, scale_max] for the first scale whose count is in range.

    Raises:
        ParamRangeUnsatisfiable: no scale tried lands in ``config.param_range``.
    """
    graphs = compose(genome, config)
    low, high = 0.0, config.scale_max
    for _ in range(config.scale_iterations):
        mid = (low + high) / 2.0
        count = int(_total_params(graphs, np.array([mid]), config)[0])
        if config.min_params <= count <= config.max_params:
            return resolve(genome, config, mid)
        if count < config.min_params:
            low = mid
        else:
            high = mid
    raise ParamRangeUnsatisfiable(
        f"no scale in (0, {config.scale_max}] puts the parameter count in "
        f"[{config.min_params}, {config.max_params}]"
    )


def graph_report(arch: ScaledArchitecture) -> Dict[str, Any]:
    """Nodes, edges, widths and parameter counts as a plain document."""

    def cell_document(graph: CellGraph) -> Dict[str, Any]:
        nodes = []
        for node in graph.nodes:
            dims = arch.node_dims[node.name]
            nodes.append(
                {
                    "name": node.name,
                    "input": node.input_state,
                    "norm": node.norm.value,
                    "layer": node.layer.value,
                    "activation": node.activation.value,
                    "in_width": dims.in_width,
                    "out_width": dims.out_width,
                    "params": dims.params,
                    "causal": node.causal,
                    "shift": node.shift,
                }
            )
        return {
            "repetitions": graph.repetitions,
            "combiners": [combiner.value for combiner in graph.combiners],
            "nodes": nodes,
            "edges": [list(edge) for edge in graph.edges()],
            "output_addends": list(graph.output_addends),
            "state_widths": list(arch.state_widths[graph.section.value]),
            "cell_params": sum(arch.node_dims[node.name].params for node in graph.nodes),
        }

    return {
        "scale_factor": arch.scale_factor,
        "total_params": arch.total_params,
        "embedding_params": arch.model.vocab_size * arch.model.input_embedding_dim,
        "encoder": cell_document(arch.encoder_graph),
        "decoder": cell_document(arch.decoder_graph),
    }


# --- numeric forward pass -----------------------------------------------------------


def combine(combiner: Combiner, left: Optional[np.ndarray], right: Optional[np.ndarray]) -> Optional[np.ndarray]:
    """Join two (sequence, channels) operands.

    The narrower operand is padded with zeros for ADDITION and ones for
    MULTIPLICATION; a missing operand (dead branch) yields the other one.

    Raises:
        ShapeError: the operands have different sequence lengths.
    """
    if left is None:
        return right
    if right is None:
        return left
    if left.shape[0] != right.shape[0]:
        raise ShapeError(f"combiner received sequence lengths {left.shape[0]} and {right.shape[0]}")
    if combiner is Combiner.CONCATENATION:
        return np.concatenate([left, right], axis=1)
    width = max(left.shape[1], right.shape[1])
    fill = 1.0 if combiner is Combiner.MULTIPLICATION else 0.0
    left = _pad_channels(left, width, fill)
    right = _pad_channels(right, width, fill)
    if combiner is Combiner.MULTIPLICATION:
        return left * right
    return left + right


def _pad_channels(x: np.ndarray, width: int, fill: float = 0.0) -> np.ndarray:
    missing = width - x.shape[1]
    if missing <= 0:
        return x
    return np.pad(x, ((0, 0), (0, missing)), constant_values=fill)


def fit_width(x: np.ndarray, width: int) -> np.ndarray:
    """Zero-pad or truncate channels to ``width``."""
    return _pad_channels(x, width)[:, :width]


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _activate(x: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(x, 0.0)
    if activation is Activation.LEAKY_RELU:
        return np.where(x > 0, x, LEAKY_RELU_SLOPE * x)
    if activation is Activation.SWISH:
        return x * _sigmoid(x)
    return x


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + LAYER_NORM_EPSILON)


def _windows(x: np.ndarray, width: int, causal: bool) -> np.ndarray:
    """(sequence, channels, width) sliding windows; causal windows end at t."""
    left = width - 1 if causal else (width - 1) // 2
    padded = np.pad(x, ((left, width - 1 - left), (0, 0)))
    return np.lib.stride_tricks.sliding_window_view(padded, width, axis=0)


def _attention(
    queries: np.ndarray,
    keys: np.ndarray,
    weights: Dict[str, np.ndarray],
    heads: int,
    causal: bool,
) -> np.ndarray:
    q = queries @ weights["wq"] + weights["bq"]
    k = keys @ weights["wk"] + weights["bk"]
    v = keys @ weights["wv"] + weights["bv"]
    length, width = q.shape
    if width % heads:
        raise ShapeError(f"attention width {width} is not divisible by {heads} heads")
    depth = width // heads
    qh = q.reshape(length, heads, depth).transpose(1, 0, 2)
    kh = k.reshape(k.shape[0], heads, depth).transpose(1, 0, 2)
    vh = v.reshape(v.shape[0], heads, depth).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1) / math.sqrt(depth)
    if causal:
        future = np.triu(np.ones((length, k.shape[0]), dtype=bool), k=1)
        scores = np.where(future, -np.inf, scores)
    context = (_softmax(scores) @ vh).transpose(1, 0, 2).reshape(length, width)
    return context @ weights["wo"] + weights["bo"]


def _uniform(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)


def _init_node(node: BranchNode, dims: NodeDims, memory: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    layer, family = node.layer, node.layer.family
    n_in, n_out = dims.in_width, dims.out_width or dims.in_width
    if family is LayerFamily.STANDARD_CONV:
        return {"w": _uniform(rng, layer.kernel_width, n_in, n_out), "b": _uniform(rng, n_out)}
    if family is LayerFamily.SEPARABLE_CONV:
        return {
            "depthwise": _uniform(rng, n_in, layer.kernel_width),
            "pointwise": _uniform(rng, n_in, n_out),
            "b": _uniform(rng, n_out),
        }
    if family is LayerFamily.LIGHTWEIGHT_CONV:
        return {"w": _uniform(rng, -(-n_in // layer.reduction), layer.kernel_width)}
    if family in (LayerFamily.ATTENTION, LayerFamily.ATTEND_TO_ENCODER):
        kv_in = memory if family is LayerFamily.ATTEND_TO_ENCODER else n_in
        return {
            "wq": _uniform(rng, n_in, n_out),
            "bq": _uniform(rng, n_out),
            "wk": _uniform(rng, kv_in, n_out),
            "bk": _uniform(rng, n_out),
            "wv": _uniform(rng, kv_in, n_out),
            "bv": _uniform(rng, n_out),
            "wo": _uniform(rng, n_out, n_out),
            "bo": _uniform(rng, n_out),
        }
    if family is LayerFamily.GATED_LINEAR_UNIT:
        return {
            "w": _uniform(rng, n_in, n_out),
            "b": _uniform(rng, n_out),
            "w_gate": _uniform(rng, n_in, n_out),
            "b_gate": _uniform(rng, n_out),
        }
    return {}


def _apply_layer(
    node: BranchNode,
    x: np.ndarray,
    weights: Dict[str, np.ndarray],
    memory: Optional[np.ndarray],
) -> np.ndarray:
    layer, family = node.layer, node.layer.family
    if family is LayerFamily.STANDARD_CONV:
        windows = _windows(x, layer.kernel_width, node.causal)
        return np.einsum("tcw,wco->to", windows, weights["w"]) + weights["b"]
    if family is LayerFamily.SEPARABLE_CONV:
        windows = _windows(x, layer.kernel_width, node.causal)
        depthwise = np.einsum("tcw,cw->tc", windows, weights["depthwise"])
        return depthwise @ weights["pointwise"] + weights["b"]
    if family is LayerFamily.LIGHTWEIGHT_CONV:
        kernels = _softmax(weights["w"], axis=1)
        groups = np.arange(x.shape[1]) // layer.reduction
        windows = _windows(x, layer.kernel_width, node.causal)
        return np.einsum("tcw,cw->tc", windows, kernels[groups])
    if family is LayerFamily.ATTENTION:
        return _attention(x, x, weights, layer.heads, node.causal)
    if family is LayerFamily.ATTEND_TO_ENCODER:
        if memory is None:
            raise ShapeError("attend_to_encoder needs encoder output")
        return _attention(x, memory, weights, ATTEND_TO_ENCODER_HEADS, causal=False)
    if family is LayerFamily.GATED_LINEAR_UNIT:
        return (x @ weights["w"] + weights["b"]) * _sigmoid(x @ weights["w_gate"] + weights["b_gate"])
    return x


def _run_cell(
    graph: CellGraph,
    x: np.ndarray,
    arch: ScaledArchitecture,
    weights: List[Dict[str, Dict[str, np.ndarray]]],
    memory: Optional[np.ndarray],
) -> np.ndarray:
    model_width = arch.model.input_embedding_dim
    for repetition in range(graph.repetitions):
        states = [x]
        for index, combiner in enumerate(graph.combiners):
            outputs: List[Optional[np.ndarray]] = []
            for node in graph.block_nodes(index):
                if node.dead:
                    outputs.append(None)
                    continue
                h = states[node.input_state]
                if node.norm is Normalization.LAYER_NORM:
                    h = _layer_norm(h)
                h = _apply_layer(node, h, weights[repetition][node.name], memory)
                outputs.append(_activate(h, node.activation))
            joined = combine(combiner, outputs[0], outputs[1])
            if joined is None:
                joined = np.zeros_like(states[graph.block_nodes(index)[0].input_state])
            states.append(joined)
        addends = [states[state] for state in graph.output_addends]
        width = max(addend.shape[1] for addend in addends)
        x = fit_width(sum(_pad_channels(addend, width) for addend in addends), model_width)
    return x


def init_weights(arch: ScaledArchitecture, rng: np.random.Generator) -> Dict[str, Any]:
    """Deterministic uniform(-0.1, 0.1) weights: embedding, then encoder and decoder repetitions."""
    model = arch.model
    weights: Dict[str, Any] = {"embedding": _uniform(rng, model.vocab_size, model.input_embedding_dim)}
    for graph in arch.graphs():
        weights[graph.section.value] = [
            {
                node.name: _init_node(node, arch.node_dims[node.name], model.input_embedding_dim, rng)
                for node in graph.nodes
                if not node.dead
            }
            for _ in range(graph.repetitions)
        ]
    return weights


def _embed(tokens: Sequence[int], embedding: np.ndarray, config: ModelConfig) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or not 0 < len(ids) <= config.sequence_length:
        raise ShapeError(f"token sequence must have length in [1, {config.sequence_length}]")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ShapeError(f"token ids must lie in [0, {config.vocab_size})")
    return embedding[ids]


def forward(
    arch: ScaledArchitecture,
    encoder_input: Sequence[int],
    decoder_input: Sequence[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Run the toy model and return the decoder output (sequence, model width)."""
    weights = init_weights(arch, rng)
    encoded = _run_cell(
        arch.encoder_graph,
        _embed(encoder_input, weights["embedding"], arch.model),
        arch,
        weights[Section.ENCODER.value],
        None,
    )
    return _run_cell(
        arch.decoder_graph,
        _embed(decoder_input, weights["embedding"], arch.model),
        arch,
        weights[Section.DECODER.value],
        encoded,
    )

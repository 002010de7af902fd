"""
Unit tests for graph composition, parameter counting, width scaling and the forward pass.
"""

from dataclasses import replace

import numpy as np
import pytest

from src.arch_composer import (
    combine,
    compose,
    fit_width,
    forward,
    graph_report,
    init_weights,
    param_count,
    param_counts_for_scales,
    reference_architecture,
    reference_scale,
    resolve,
    scale_dimensions,
)
from src.config import ModelConfig, ValidationConfig
from src.errors import MalformedGenome, ParamRangeUnsatisfiable, ShapeError
from src.search_space import (
    Activation,
    BlockGene,
    BranchGene,
    Combiner,
    LayerFamily,
    LayerKind,
    Normalization,
    et_seed,
    random_genome,
)

from .conftest import identity_genome, replace_branch

BASE = ModelConfig()
SMALL = ModelConfig(input_embedding_dim=128, param_range=(6_000_000, 8_000_000))
TOY = ModelConfig(input_embedding_dim=32, vocab_size=64, sequence_length=8, param_range=(1, 2))


class TestCompose:
    """Test suite for cell graph construction."""

    def test_decoder_has_attend_to_encoder(self, transformer):
        """Test the Transformer decoder cell attends to the encoder."""
        _, decoder = compose(transformer)
        assert any(node.layer is LayerKind.ATTEND_TO_ENCODER for node in decoder.nodes)
        assert decoder.repetitions == 3

    def test_decoder_convolutions_are_causal(self):
        """Test decoder convolutions are causal with a left shift of (w - 1) // 2."""
        encoder, decoder = compose(et_seed())
        assert not any(node.causal for node in encoder.nodes)
        node = decoder.block_nodes(2)[0]
        assert node.layer is LayerKind.SEPARABLE_CONV_11X1
        assert node.causal and node.shift == 5

    def test_unused_state_is_output_addend(self, transformer):
        """Test a hidden state no later branch reads is added to the cell output."""
        genome = replace_branch(transformer, "encoder", 4, "left", input=3)
        genome = replace_branch(genome, "encoder", 5, "right", input=3)
        encoder, _ = compose(genome)
        assert encoder.output_addends == (4, 6)
        assert ("h4", "output") in encoder.edges()

    def test_bad_input_raises(self, transformer):
        """Test composing a branch that reads a future state raises."""
        genome = replace_branch(transformer, "decoder", 0, "left", input=3)
        with pytest.raises(MalformedGenome):
            compose(genome)


class TestParameterCounts:
    """Test suite for parameter counting at the reference scale."""

    def test_transformer_base_size(self, transformer):
        """Test the Transformer at width 512 matches the hand count and is near 61.1M."""
        total = reference_architecture(transformer, BASE).total_params
        assert total == 60_915_712
        assert abs(total - 61.1e6) <= 0.05 * 61.1e6

    def test_evolved_base_size(self):
        """Test the evolved seed at width 512 is within 5% of 64.1M."""
        total = reference_architecture(et_seed(), BASE).total_params
        assert abs(total - 64.1e6) <= 0.05 * 64.1e6

    def test_small_sizes(self, transformer):
        """Test both seeds at width 128 are within 10% of 7.0M and 7.2M."""
        assert abs(reference_architecture(transformer, SMALL).total_params - 7.0e6) <= 0.1 * 7.0e6
        assert abs(reference_architecture(et_seed(), SMALL).total_params - 7.2e6) <= 0.1 * 7.2e6

    def test_reference_scale(self):
        """Test relative dimension 2 maps to the model width at the reference scale."""
        assert reference_scale(BASE) == 16.0
        arch = reference_architecture(identity_genome(), BASE)
        assert arch.state_widths["encoder"] == (512,) * 7

    def test_identity_cells_are_free(self):
        """Test identity-only cells contribute no parameters."""
        arch = reference_architecture(identity_genome(cells=6), BASE)
        assert arch.total_params == BASE.vocab_size * BASE.input_embedding_dim

    def test_param_count_matches_total(self, transformer):
        """Test summing node parameters reproduces the vectorised total."""
        arch = reference_architecture(et_seed(), BASE)
        assert param_count(arch) == arch.total_params
        assert param_counts_for_scales(transformer, BASE, [16.0])[0] == 60_915_712

    def test_layer_norm_and_lightweight_conv(self, transformer):
        """Test layer norm counts 2 * in and lightweight conv counts ceil(in / r) * w."""
        genome = replace_branch(transformer, "encoder", 1, "right", layer=LayerKind.LIGHTWEIGHT_CONV_5X1_R16)
        arch = reference_architecture(genome, BASE)
        dims = arch.node_dims["encoder.b1.right"]
        assert dims.out_width == dims.in_width == 512
        assert dims.params == 32 * 5 + 2 * 512

    def test_dead_blocks_permute_freely(self, transformer):
        """Test reordering the fields of blocks whose branches are both dead leaves the count unchanged."""
        first = BlockGene(
            BranchGene(2, Normalization.LAYER_NORM, LayerKind.DEAD_BRANCH, 8, Activation.SWISH),
            BranchGene(2, Normalization.NONE, LayerKind.DEAD_BRANCH, 1, Activation.RELU),
            Combiner.CONCATENATION,
        )
        second = BlockGene(
            BranchGene(4, Normalization.NONE, LayerKind.DEAD_BRANCH, 3, Activation.LEAKY_RELU),
            BranchGene(4, Normalization.LAYER_NORM, LayerKind.DEAD_BRANCH, 10, Activation.NONE),
            Combiner.MULTIPLICATION,
        )

        def with_dead_blocks(at_two, at_four):
            blocks = list(transformer.encoder_blocks)
            blocks[2] = at_two
            blocks[4] = at_four
            return replace(transformer, encoder_blocks=tuple(blocks))

        def moved(block, index):
            return replace(block, left=replace(block.left, input=index), right=replace(block.right, input=index))

        original = reference_architecture(with_dead_blocks(first, second), BASE)
        permuted = reference_architecture(with_dead_blocks(moved(second, 2), moved(first, 4)), BASE)
        assert param_count(original) == param_count(permuted) == permuted.total_params
        assert original.state_widths == permuted.state_widths

    def test_counts_monotone_in_scale(self):
        """Test the parameter count never decreases as the scale grows."""
        scales = np.arange(1, 64 * 64 + 1) / 64.0
        for genome in (et_seed(), random_genome(np.random.default_rng(2), ValidationConfig(check_param_range=False))):
            counts = param_counts_for_scales(genome, BASE, scales)
            assert np.all(np.diff(counts) >= 0)


class TestScaleDimensions:
    """Test suite for the scale-factor binary search."""

    def test_transformer_in_range(self, transformer):
        """Test the Transformer fits the 59.1M to 64.1M range."""
        arch = scale_dimensions(transformer, BASE)
        assert BASE.min_params <= arch.total_params <= BASE.max_params
        assert 0 < arch.scale_factor <= BASE.scale_max

    def test_identity_genome_unsatisfiable(self):
        """Test a parameter-free genome raises PARAM_RANGE_UNSATISFIABLE."""
        with pytest.raises(ParamRangeUnsatisfiable) as info:
            scale_dimensions(identity_genome(), BASE)
        assert info.value.code == "PARAM_RANGE_UNSATISFIABLE"

    def test_agrees_with_linear_scan(self):
        """Test binary search and a 1/64-grid scan agree on acceptance and location."""
        rng = np.random.default_rng(21)
        structural = ValidationConfig(check_param_range=False)
        scales = np.arange(1, 64 * 64 + 1) / 64.0
        step = 1 / 64.0
        for _ in range(100):
            genome = random_genome(rng, structural)
            counts = param_counts_for_scales(genome, BASE, scales)
            inside = scales[(counts >= BASE.min_params) & (counts <= BASE.max_params)]
            try:
                arch = scale_dimensions(genome, BASE)
            except ParamRangeUnsatisfiable:
                assert inside.size == 0
                continue
            assert inside.size > 0
            assert BASE.min_params <= arch.total_params <= BASE.max_params
            assert inside.min() - step <= arch.scale_factor <= inside.max() + step
            assert arch.total_params == param_counts_for_scales(genome, BASE, [arch.scale_factor])[0]

    def test_width_ratios_follow_relative_dims(self):
        """Test scaled widths keep the ratio of relative dimensions up to half a quantum of rounding."""
        rng = np.random.default_rng(5)
        scale = reference_scale(BASE)
        for _ in range(20):
            arch = resolve(random_genome(rng, ValidationConfig(check_param_range=False)), BASE, scale)
            graphs = arch.graphs()
            scaled = [
                (node.rel_dim, arch.node_dims[node.name].out_width / BASE.width_quantum)
                for graph in graphs
                for node in graph.nodes
                if not node.dead
                and node.layer.family not in (LayerFamily.IDENTITY, LayerFamily.LIGHTWEIGHT_CONV)
            ]
            for rel_dim, units in scaled:
                assert abs(units - rel_dim * scale) <= 0.5
            for (d1, a1), (d2, a2) in zip(scaled, scaled[1:]):
                low = (d1 * scale - 0.5) / (d2 * scale + 0.5)
                high = (d1 * scale + 0.5) / (d2 * scale - 0.5)
                assert low <= a1 / a2 <= high

    def test_resolve_rejects_non_positive_scale(self, transformer):
        """Test an explicit scale must be positive."""
        with pytest.raises(ValueError):
            resolve(transformer, BASE, 0.0)


class TestCombine:
    """Test suite for the combiner padding rules."""

    def test_addition_pads_with_zeros(self):
        """Test addition pads the narrower operand with zeros."""
        left = np.array([[1.0, 2.0]])
        right = np.array([[3.0]])
        np.testing.assert_array_equal(combine(Combiner.ADDITION, left, right), [[4.0, 2.0]])

    def test_multiplication_pads_with_ones(self):
        """Test multiplication pads the narrower operand with ones."""
        left = np.array([[2.0, 5.0]])
        right = np.array([[3.0]])
        np.testing.assert_array_equal(combine(Combiner.MULTIPLICATION, left, right), [[6.0, 5.0]])

    def test_multiplication_by_ones(self):
        """Test multiplying by an all-ones operand returns the other operand."""
        x = np.random.default_rng(0).normal(size=(4, 3))
        np.testing.assert_array_equal(combine(Combiner.MULTIPLICATION, x, np.ones_like(x)), x)

    def test_concatenation(self):
        """Test concatenation joins channels."""
        joined = combine(Combiner.CONCATENATION, np.ones((2, 2)), np.zeros((2, 3)))
        assert joined.shape == (2, 5)

    def test_dead_operand_passes_through(self):
        """Test a missing operand yields the other one."""
        x = np.ones((2, 2))
        assert combine(Combiner.MULTIPLICATION, None, x) is x
        assert combine(Combiner.ADDITION, None, None) is None

    def test_sequence_mismatch(self):
        """Test operands with different lengths raise SHAPE_ERROR."""
        with pytest.raises(ShapeError):
            combine(Combiner.ADDITION, np.ones((2, 2)), np.ones((3, 2)))

    def test_fit_width(self):
        """Test fitting pads with zeros or truncates."""
        x = np.ones((1, 3))
        np.testing.assert_array_equal(fit_width(x, 4), [[1, 1, 1, 0]])
        np.testing.assert_array_equal(fit_width(x, 2), [[1, 1]])


class TestForward:
    """Test suite for the numpy forward pass."""

    def test_identity_model_returns_embedding(self):
        """Test an identity-only model outputs the decoder token embeddings."""
        arch = reference_architecture(identity_genome(cells=2), TOY)
        tokens = [3, 1, 4, 1, 5]
        out = forward(arch, [2, 7, 1], tokens, np.random.default_rng(0))
        embedding = init_weights(arch, np.random.default_rng(0))["embedding"]
        np.testing.assert_allclose(out, embedding[tokens])

    def test_output_shape(self, transformer):
        """Test the decoder output has one model-width row per target token."""
        arch = reference_architecture(transformer, TOY)
        out = forward(arch, [1, 2, 3], [4, 5, 6, 7], np.random.default_rng(1))
        assert out.shape == (4, 32)

    def test_both_dead_block_keeps_width(self):
        """Test a block with two dead branches emits zeros at its left input width."""
        genome = identity_genome()
        genome = replace_branch(genome, "encoder", 2, "left", layer=LayerKind.DEAD_BRANCH)
        arch = reference_architecture(genome, TOY)
        assert arch.state_widths["encoder"][3] == arch.state_widths["encoder"][2]
        out = forward(arch, [1, 2], [3], np.random.default_rng(0))
        assert out.shape == (1, 32)

    def test_token_validation(self, transformer):
        """Test out-of-vocabulary and over-long inputs raise SHAPE_ERROR."""
        arch = reference_architecture(transformer, TOY)
        with pytest.raises(ShapeError):
            forward(arch, [1], [64], np.random.default_rng(0))
        with pytest.raises(ShapeError):
            forward(arch, [1] * 9, [1], np.random.default_rng(0))

    def test_decoder_is_causal(self, transformer):
        """Test decoder outputs at position t ignore target tokens after t."""
        rng = np.random.default_rng(33)
        genomes = [transformer, et_seed()]
        genomes += [random_genome(rng, ValidationConfig(check_param_range=False)) for _ in range(20)]
        source = [5, 9, 2, 7]
        target = [1, 2, 3, 4, 5, 6]
        for genome in genomes:
            arch = reference_architecture(genome, TOY)
            base = forward(arch, source, target, np.random.default_rng(0))
            for t in range(len(target) - 1):
                perturbed = target[: t + 1] + [60] * (len(target) - t - 1)
                out = forward(arch, source, perturbed, np.random.default_rng(0))
                np.testing.assert_allclose(out[: t + 1], base[: t + 1], atol=1e-6)


class TestGraphReport:
    """Test suite for the compose report document."""

    def test_report_structure(self):
        """Test the report lists nodes, edges and matching totals."""
        arch = reference_architecture(et_seed(), BASE)
        report = graph_report(arch)
        assert report["total_params"] == arch.total_params
        assert report["decoder"]["repetitions"] == 4
        assert ["h0", "decoder.b0.left"] in report["decoder"]["edges"]
        node = next(n for n in report["decoder"]["nodes"] if n["name"] == "decoder.b2.left")
        assert node["shift"] == 5 and node["causal"]
        dead = next(n for n in report["encoder"]["nodes"] if n["name"] == "encoder.b4.right")
        assert dead["out_width"] is None and dead["params"] == 0


"""
Unit tests for the architecture notation and the cost model.
"""

import numpy as np
import pytest

from core.arch_dsl import (KNOWN_ARCHS, REFERENCE_MEGAMULTS, ArchSpec, LayerKind, LayerSpec, compression_ratio,
                           cost_table, count_mults, display_megamults,
                           count_params, infer_shapes, parse_arch, pool_output_size, render_arch,
                           round_megamults, rounded_compression_ratio)
from core.errors import ArchSemanticError, ArchSyntaxError, ShapeError

CIFAR_INPUT = (32, 32, 3)


class TestParseArch:
    """Tests for parse_arch."""

    def test_fully_connected_stack(self):
        spec = parse_arch("FC800-FC800-FC10")
        assert [layer.kind for layer in spec.layers] == [LayerKind.FULLY_CONNECTED] * 3
        assert [layer.out_units for layer in spec.layers] == [800, 800, 10]

    def test_brackets_are_grouping_only(self):
        spec = parse_arch("[C5(S1P2)@32-MP3(S2)]-FC10")
        assert spec.layers == (LayerSpec.conv(5, 1, 2, 32), LayerSpec.max_pool(3, 2), LayerSpec.fully_connected(10))

    def test_defaults_without_parenthesized_group(self):
        spec = parse_arch("C3@8-MP2-FC10")
        assert spec.layers[0] == LayerSpec.conv(3, 1, 0, 8)
        assert spec.layers[1] == LayerSpec.max_pool(2, 1)

    def test_whitespace_ignored(self):
        assert parse_arch(" [C5(S1P0)@20 - MP2(S2)] - FC10 ") == parse_arch("C5(S1P0)@20-MP2(S2)-FC10")

    def test_dropout_and_average_pool(self):
        spec = parse_arch("D0.5-AP8(S1)")
        assert spec.layers[0].drop_prob == 0.5
        assert spec.layers[1] == LayerSpec.avg_pool(8, 1)

    def test_stray_bracket_in_known_teacher(self):
        spec = parse_arch(KNOWN_ARCHS['nin_teacher'])
        assert len(spec.layers) == 14
        assert spec.layers[-1] == LayerSpec.avg_pool(8, 1)

    def test_empty_string(self):
        with pytest.raises(ArchSyntaxError) as info:
            parse_arch("")
        assert info.value.offset == 0
        assert "empty" in str(info.value)

    def test_unknown_token_reports_byte_offset(self):
        with pytest.raises(ArchSyntaxError) as info:
            parse_arch("FC10-XY3")
        assert info.value.offset == 5

    def test_trailing_separator(self):
        with pytest.raises(ArchSyntaxError):
            parse_arch("FC10-")

    def test_empty_token(self):
        with pytest.raises(ArchSyntaxError):
            parse_arch("FC10--FC10")

    @pytest.mark.parametrize("text", ["C0(S1P0)@4", "C3(S0P0)@4", "FC0", "C3(S1P0)@0", "MP0(S1)"])
    def test_zero_values_are_semantic_errors(self, text):
        with pytest.raises(ArchSemanticError):
            parse_arch(text)

    def test_drop_probability_out_of_range(self):
        with pytest.raises(ArchSemanticError):
            parse_arch("FC10-D1.5-FC10")

    def test_syntax_error_is_value_error(self):
        with pytest.raises(ValueError):
            parse_arch("garbage")


class TestRenderArch:
    """Tests for render_arch."""

    def test_conv_renders_explicit_stride_and_padding(self):
        assert LayerSpec.conv(5, 1, 0, 20).render() == "C5(S1P0)@20"

    def test_fully_connected(self):
        assert LayerSpec.fully_connected(10).render() == "FC10"

    def test_canonical_form_drops_brackets(self):
        assert render_arch(parse_arch("[C5@32-MP3(S2)]-FC10")) == "C5(S1P0)@32-MP3(S2)-FC10"

    @pytest.mark.parametrize("name", sorted(KNOWN_ARCHS))
    def test_known_architectures_round_trip(self, name):
        spec = parse_arch(KNOWN_ARCHS[name])
        assert parse_arch(render_arch(spec)) == spec

    def test_random_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            layers = []
            for _ in range(int(rng.integers(1, 8))):
                kind = rng.integers(0, 5)
                if kind == 0:
                    layers.append(LayerSpec.conv(int(rng.integers(1, 8)), int(rng.integers(1, 4)),
                                                 int(rng.integers(0, 4)), int(rng.integers(1, 300))))
                elif kind == 1:
                    layers.append(LayerSpec.max_pool(int(rng.integers(1, 5)), int(rng.integers(1, 4))))
                elif kind == 2:
                    layers.append(LayerSpec.avg_pool(int(rng.integers(1, 9)), int(rng.integers(1, 4))))
                elif kind == 3:
                    layers.append(LayerSpec.fully_connected(int(rng.integers(1, 5000))))
                else:
                    layers.append(LayerSpec.dropout(float(rng.uniform(0, 1))))
            spec = ArchSpec(tuple(layers))
            assert parse_arch(render_arch(spec)) == spec


class TestInferShapes:
    """Tests for infer_shapes."""

    def test_ceil_mode_pooling(self):
        assert infer_shapes(parse_arch("MP3(S2)"), (32, 32, 3)) == [(16, 16, 3)]

    def test_same_convolution(self):
        assert infer_shapes(parse_arch("C5(S1P2)@8"), (32, 32, 3)) == [(32, 32, 8)]

    def test_student2_trace(self):
        trace = infer_shapes(parse_arch(KNOWN_ARCHS['student2']), CIFAR_INPUT)
        assert trace == [(32, 32, 32), (16, 16, 32), (16, 16, 32), (8, 8, 32),
                         (8, 8, 64), (4, 4, 64), (1024,), (10,)]

    def test_dropout_preserves_shape(self):
        assert infer_shapes(parse_arch("D0.5"), (4, 4, 2)) == [(4, 4, 2)]

    def test_window_starting_past_input_is_dropped(self):
        assert pool_output_size(5, 1, 3) == 2
        assert pool_output_size(4, 2, 3) == 2

    def test_empty_output_is_error(self):
        with pytest.raises(ShapeError):
            infer_shapes(parse_arch("C5@4"), (3, 3, 1))

    def test_spatial_layer_after_fully_connected(self):
        with pytest.raises(ShapeError):
            infer_shapes(parse_arch("FC10-MP2(S2)"), (8, 8, 1))

    def test_non_positive_input(self):
        with pytest.raises(ShapeError):
            infer_shapes(parse_arch("FC10"), (0, 4, 1))


class TestCostModel:
    """Multiplication counts of the shallow students and the Network-in-Network teacher."""

    def test_teacher_total(self):
        report = count_mults(parse_arch(KNOWN_ARCHS['nin_teacher']), CIFAR_INPUT)
        assert report.total_mults == 222486528
        assert abs(report.total_mults / 1e6 - 223) / 223 <= 0.01

    @pytest.mark.parametrize("name,exact,shown", [
        ('student1', 61155328, 61.0),
        ('student2', 11249664, 11.2),
        ('student3', 6744064, 6.7),
    ])
    def test_student_totals(self, name, exact, shown):
        report = count_mults(parse_arch(KNOWN_ARCHS[name]), CIFAR_INPUT)
        assert report.total_mults == exact
        decimals = 0 if name == 'student1' else 1
        assert round_megamults(report.total_mults, decimals) == shown

    def test_student2_per_layer(self):
        report = count_mults(parse_arch(KNOWN_ARCHS['student2']), CIFAR_INPUT)
        assert report.per_layer_mults == [2457600, 0, 6553600, 0, 1179648, 0, 1048576, 10240]
        shown = [2.5, 6.5, 1.2, 1.0]
        parametric = [m / 1e6 for m in report.per_layer_mults if m > 0][:4]
        for computed, expected in zip(parametric, shown):
            assert abs(computed - expected) <= 0.06

    @pytest.mark.parametrize("student,ratio", [(61, 3.66), (11.2, 19.91), (6.7, 33.28)])
    def test_rounded_compression_ratios(self, student, ratio):
        assert rounded_compression_ratio(223, student) == ratio

    def test_totals_are_sums(self):
        report = count_mults(parse_arch(KNOWN_ARCHS['nin_teacher']), CIFAR_INPUT)
        assert report.total_mults == sum(report.per_layer_mults)
        assert report.total_params == sum(report.per_layer_params)

    def test_fully_connected_counts(self):
        report = count_mults(parse_arch("FC800-FC800-FC10"), 784)
        assert report.per_layer_mults == [784 * 800, 800 * 800, 8000]
        assert report.per_layer_params == [784 * 800 + 800, 800 * 800 + 800, 8010]

    def test_count_params(self):
        per_layer, total = count_params(parse_arch("C5(S1P2)@32-MP2(S2)-FC10"), CIFAR_INPUT)
        assert per_layer == [5 * 5 * 3 * 32 + 32, 0, 16 * 16 * 32 * 10 + 10]
        assert total == sum(per_layer)

    def test_pool_and_dropout_are_free(self):
        report = count_mults(parse_arch("MP2(S2)-D0.5-AP2(S2)"), (8, 8, 3))
        assert report.total_mults == 0

    def test_more_channels_cost_more(self):
        smaller = count_mults(parse_arch("C3(S1P1)@16-FC10"), CIFAR_INPUT).total_mults
        larger = count_mults(parse_arch("C3(S1P1)@32-FC10"), CIFAR_INPUT).total_mults
        assert larger > smaller

    def test_compression_ratio_exact(self):
        assert compression_ratio(200, 50) == 4.0

    def test_compression_ratio_rejects_zero(self):
        with pytest.raises(ValueError):
            compression_ratio(100, 0)

    def test_cost_table_rows(self):
        spec = parse_arch("C5(S1P2)@32-FC10")
        rows = cost_table(spec, count_mults(spec, CIFAR_INPUT))
        assert rows[0] == {'layer': "C5(S1P2)@32", 'output_shape': "32x32x32",
                           'params': 2432, 'mults': 2457600}
        assert rows[1]['output_shape'] == "10"


class TestClassifierTail:
    """Tests for ArchSpec.logit_layer_index."""

    def test_fully_connected_tail(self):
        assert parse_arch("C3@4-MP2(S2)-FC10").logit_layer_index() == 2

    def test_one_by_one_conv_followed_by_pooling(self):
        spec = parse_arch(KNOWN_ARCHS['nin_teacher'])
        assert spec.logit_layer_index() == len(spec.layers) - 2

    def test_wide_conv_classifier_rejected(self):
        with pytest.raises(ArchSemanticError):
            parse_arch("C3@10-AP8(S1)").logit_layer_index()

    def test_dropout_after_classifier_rejected(self):
        with pytest.raises(ArchSemanticError):
            parse_arch("FC10-D0.5").logit_layer_index()

    def test_no_parametric_layer(self):
        with pytest.raises(ArchSemanticError):
            parse_arch("MP2(S2)").logit_layer_index()


class TestDisplayFigures:
    """Tests for display_megamults and the rounded compression ratio built from exact counts."""

    @pytest.mark.parametrize("name,shown", [('student1', 61.0), ('student2', 11.2), ('student3', 6.7)])
    def test_students_round_to_display_precision(self, name, shown):
        report = count_mults(parse_arch(KNOWN_ARCHS[name]), CIFAR_INPUT)
        assert display_megamults(report.total_mults) == shown

    def test_teacher_keeps_reference_figure_within_one_percent(self):
        report = count_mults(parse_arch(KNOWN_ARCHS['nin_teacher']), CIFAR_INPUT)
        assert display_megamults(report.total_mults) == 222.0
        assert display_megamults(report.total_mults, REFERENCE_MEGAMULTS['nin_teacher']) == 223.0

    def test_distant_reference_is_ignored(self):
        assert display_megamults(11249664, 13.0) == 11.2

    @pytest.mark.parametrize("name,ratio", [('student1', 3.66), ('student2', 19.91), ('student3', 33.28)])
    def test_rounded_ratio_from_exact_counts(self, name, ratio):
        teacher = count_mults(parse_arch(KNOWN_ARCHS['nin_teacher']), CIFAR_INPUT).total_mults
        student = count_mults(parse_arch(KNOWN_ARCHS[name]), CIFAR_INPUT).total_mults
        shown_teacher = display_megamults(teacher, REFERENCE_MEGAMULTS['nin_teacher'])
        shown_student = display_megamults(student, REFERENCE_MEGAMULTS[name])
        assert rounded_compression_ratio(shown_teacher, shown_student) == ratio

    def test_non_positive_count(self):
        with pytest.raises(ValueError):
            display_megamults(0)


def random_prefix(rng):
    """Random spatial layers on a 16x16x3 input, optionally closed by fully connected layers."""
    layers = [LayerSpec.conv(3, 1, 1, int(rng.integers(1, 9)))]
    for _ in range(int(rng.integers(0, 4))):
        choice = rng.integers(0, 3)
        if choice == 0:
            kernel = int(rng.choice([1, 3]))
            layers.append(LayerSpec.conv(kernel, 1, kernel // 2, int(rng.integers(1, 9))))
        elif choice == 1:
            layers.append(LayerSpec.max_pool(2, 1))
        else:
            layers.append(LayerSpec.dropout(0.5))
    if rng.random() < 0.5:
        layers.append(LayerSpec.fully_connected(int(rng.integers(1, 50))))
    return layers


class TestCostMonotonicity:
    """Appending layers never lowers the cost; parametric layers always raise it."""

    INPUT = (16, 16, 3)

    def total(self, layers):
        return count_mults(ArchSpec(tuple(layers)), self.INPUT).total_mults

    def test_appending_parametric_layer_increases_cost(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            layers = random_prefix(rng)
            base = self.total(layers)
            assert self.total(layers + [LayerSpec.fully_connected(int(rng.integers(1, 50)))]) > base
            if layers[-1].kind != LayerKind.FULLY_CONNECTED:
                assert self.total(layers + [LayerSpec.conv(1, 1, 0, int(rng.integers(1, 9)))]) > base

    def test_appending_pool_or_dropout_never_increases_cost(self):
        rng = np.random.default_rng(22)
        for _ in range(100):
            layers = random_prefix(rng)
            base = self.total(layers)
            assert self.total(layers + [LayerSpec.dropout(float(rng.uniform(0, 1)))]) <= base
            if layers[-1].kind != LayerKind.FULLY_CONNECTED:
                assert self.total(layers + [LayerSpec.max_pool(2, 2)]) <= base
                assert self.total(layers + [LayerSpec.avg_pool(2, 1)]) <= base

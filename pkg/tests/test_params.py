from dataclasses import replace

import pandas as pd
import pytest

from gncformer.config import ModelConfig
from gncformer.exceptions import ConfigError
from gncformer.gnconv import gnconv_param_count
from gncformer.layers import Affine, ParamFactory
from gncformer.model import build_model
from gncformer.params import (
    CSV_COLUMNS,
    count_config_parameters,
    count_parameters,
    overhead_table,
    per_layer_overhead,
    report_from_shapes,
    write_table_csv,
)


@pytest.fixture(scope='module')
def reference():
    return ModelConfig.preset('reference')


@pytest.fixture(scope='module')
def reference_report(reference):
    return count_config_parameters(reference)


def test_affine_count():
    assert sum(t.size for t in Affine.init(ParamFactory(0), 4, 3).parameters()) == 15


def test_reference_overhead_per_layer(reference_report):
    assert len(reference_report.esa_overhead) == 6
    assert set(reference_report.esa_overhead.values()) == {257_744}
    assert per_layer_overhead(reference_report) == [257_744]
    assert all(block.startswith('encoder.') for block in reference_report.esa_overhead)


def test_reference_total_delta(reference_report):
    assert reference_report.delta == 1_546_464
    assert abs(reference_report.delta - 1.46e6) <= 0.1 * 1.46e6


def test_total_is_sum_of_groups(reference_report):
    assert reference_report.total == sum(reference_report.groups.values())
    assert reference_report.total == reference_report.baseline_total + reference_report.delta


def test_order_table(reference):
    table = overhead_table(reference, [1, 3, 5, 7, 9])
    assert list(table.columns[:4]) == CSV_COLUMNS
    assert table.schedule.tolist()[2] == '16 16 32 64 128 256'
    assert table.schedule.tolist()[4] == '1 1 2 4 8 16 32 64 128 256'
    assert table.first_width.tolist() == [256, 64, 16, 4, 1]
    deltas = dict(zip(table.order, table.delta_params))
    assert deltas[1] == 6 * gnconv_param_count(256, 1, 32)
    assert deltas[3] == 6 * 253_504
    assert deltas[9] - deltas[3] < 30_000
    assert table.delta_params.is_monotonic_increasing
    assert (table.total_params - table.delta_params).nunique() == 1


def test_order_table_rejects_invalid_order(reference):
    with pytest.raises(ConfigError, match="order 10"):
        overhead_table(reference, [10])


def test_csv_columns(reference, tmp_path):
    path = write_table_csv(overhead_table(reference, [3, 5]), tmp_path / 'out' / 'orders.csv')
    table = pd.read_csv(path)
    assert list(table.columns) == CSV_COLUMNS
    assert table.order.tolist() == [3, 5]
    assert table.delta_params.tolist() == [6 * 253_504, 6 * 257_744]


def test_built_model_agrees_with_config_count(tiny_config):
    built = count_parameters(build_model(tiny_config))
    planned = count_config_parameters(tiny_config)
    assert built.groups == planned.groups
    assert built.delta == planned.delta
    assert set(built.esa_overhead.values()) == {gnconv_param_count(8, 2, 3)}
    assert len(built.esa_overhead) == 2


def test_report_groups_and_format():
    report = report_from_shapes({'a.weight': (2, 3), 'a.bias': (3,), 'b.gnconv.x.weight': (4,)}, 5)
    assert dict(report.groups) == {'a': 9, 'b.gnconv.x': 4}
    assert dict(report.esa_overhead) == {'b': 4}
    assert report.delta == 8
    text = report.format()
    assert 'total' in text and '13' in text


@pytest.mark.parametrize("dim", [16, 64, 256])
def test_overhead_non_decreasing_in_kernel_and_order(dim):
    orders = [n for n in range(1, 6) if dim % 2 ** (n - 1) == 0]
    for n in orders:
        counts = [gnconv_param_count(dim, n, k) for k in (1, 7, 32)]
        assert counts == sorted(counts), (dim, n)
    for k in (1, 7, 32):
        counts = [gnconv_param_count(dim, n, k) for n in orders]
        assert counts == sorted(counts), (dim, k)


def test_order_table_delta_grows_with_kernel(reference):
    deltas = [overhead_table(replace(reference, kernel_size=k), [3, 5]).delta_params.tolist() for k in (1, 7, 32)]
    for smaller, larger in zip(deltas, deltas[1:]):
        assert all(a <= b for a, b in zip(smaller, larger))

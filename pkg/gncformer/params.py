"""
Parameter-count reports: per-module totals, ESA overhead against the plain
attention baseline, and overhead tables across interaction orders.
"""
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, Mapping, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from gncformer.config import ModelConfig
from gncformer.gnconv import dimension_schedule
from gncformer.model import GncformerModel, parameter_shapes, plain_config

CSV_COLUMNS = ['order', 'total_params', 'delta_params', 'schedule']


@dataclass
class ParamReport:
    """
    Parameter counts of one model.

    ``groups`` maps a module path (the parameter name without its last component)
    to its count; ``esa_overhead`` maps each attention block that carries a
    g^nConv to the size of that g^nConv.
    """
    groups: Dict[str, int] = field(default_factory=OrderedDict)
    esa_overhead: Dict[str, int] = field(default_factory=OrderedDict)
    baseline_total: int = 0

    @property
    def total(self) -> int:
        return sum(self.groups.values())

    @property
    def delta(self) -> int:
        return self.total - self.baseline_total

    def format(self) -> str:
        width = max([len(k) for k in self.groups] + [5])
        lines = [f'{name:<{width}}  {count:>12,}' for name, count in self.groups.items()]
        lines.append(f'{"total":<{width}}  {self.total:>12,}')
        lines.append(f'{"delta":<{width}}  {self.delta:>12,}')
        return '\n'.join(lines)


def _size(shape: Tuple[int, ...]) -> int:
    return int(np.prod(shape, dtype=np.int64))


def report_from_shapes(shapes: Mapping[str, Tuple[int, ...]], baseline_total: int = 0) -> ParamReport:
    """Group ``name -> shape`` entries by module path."""
    report = ParamReport(baseline_total=baseline_total)
    for name, shape in shapes.items():
        group = name.rsplit('.', 1)[0]
        report.groups[group] = report.groups.get(group, 0) + _size(shape)
        if '.gnconv.' in name:
            block = name.split('.gnconv.', 1)[0]
            report.esa_overhead[block] = report.esa_overhead.get(block, 0) + _size(shape)
    return report


def _baseline_total(config: ModelConfig) -> int:
    return sum(_size(s) for s in parameter_shapes(plain_config(config)).values())


def count_parameters(model: GncformerModel) -> ParamReport:
    """
    Enumerate the parameters of a built model.

    :param model: Model.
    :type model: GncformerModel
    :return: Counts grouped by module path, with the delta against the same config
        with every attention block plain.
    :rtype: ParamReport
    """
    shapes = OrderedDict((name, t.shape) for name, t in model.named_parameters())
    return report_from_shapes(shapes, _baseline_total(model.config))


def count_config_parameters(config: ModelConfig) -> ParamReport:
    """Same as ``count_parameters`` for the model ``config`` would build, without allocating it."""
    return report_from_shapes(parameter_shapes(config), _baseline_total(config))


def overhead_table(base: ModelConfig, orders: Sequence[int]) -> pd.DataFrame:
    """
    One row per interaction order: totals, delta against plain attention, split widths.

    ``schedule`` is the space-separated ``[D_0, D_0, D_1, ..., D_{n-1}]`` list;
    ``first_width`` is the width ``D_0`` the first recursion step works on.

    :param base: Config whose ``order`` is replaced row by row.
    :type base: ModelConfig
    :param orders: Orders to tabulate.
    :type orders: list
    :raises ConfigError: If an order is invalid for ``base.model_dim``.
    :rtype: pandas.DataFrame
    """
    rows = []
    for order in orders:
        config = replace(base, order=int(order)).validate()
        report = count_config_parameters(config)
        schedule = dimension_schedule(config.model_dim, config.order)
        rows.append({
            'order': config.order,
            'total_params': report.total,
            'delta_params': report.delta,
            'schedule': ' '.join(str(w) for w in schedule),
            'first_width': schedule[0],
        })
    return pd.DataFrame(rows, columns=CSV_COLUMNS + ['first_width'])


def format_table(table: pd.DataFrame) -> str:
    """Aligned plain-text rendering."""
    return table.to_string(index=False)


def write_table_csv(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write the ``order,total_params,delta_params,schedule`` columns as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table[CSV_COLUMNS].to_csv(path, index=False)
    return path


def per_layer_overhead(report: ParamReport) -> Iterable[int]:
    """Distinct per-block g^nConv sizes, in block order."""
    return list(OrderedDict.fromkeys(report.esa_overhead.values()))

"""
Ablation drivers: interaction order, ESA placement and fusion topology.

Every cell of a grid trains on the same dataset with the same seeds; only the
mechanism under test changes. Grids come from the ``ablations`` section of the
package ``config.yaml``.
"""
from dataclasses import asdict, replace
from pathlib import Path
from typing import Dict, List, Tuple, Union

import pandas as pd
from tqdm import tqdm
from tqdm.contrib.concurrent import thread_map

from gncformer.config import ModelConfig, TrainConfig
from gncformer.exceptions import GncformerError, TrainingError
from gncformer.harness.tasks import TaskData, dataset_hash, load_or_generate
from gncformer.harness.train import train
from gncformer.params import count_config_parameters, overhead_table, write_table_csv
from gncformer.utils import package_config, timeit

ABLATION_KINDS = ('order', 'placement', 'fusion')


def ablation_cells(kind: str, base: TrainConfig) -> List[Tuple[str, ModelConfig]]:
    """
    Named model configs of one ablation grid.

    :param kind: ``order``, ``placement`` or ``fusion``.
    :type kind: str
    :param base: Config the cells are derived from.
    :type base: TrainConfig
    :rtype: list
    """
    grids = package_config().ablations
    model = base.model
    if kind == 'order':
        return [(f'order_{n}', replace(model, order=int(n))) for n in grids.order]
    if kind == 'placement':
        fusion = model.fusion_mode if model.fusion_mode != 'none' else 'internal'
        return [(f'esa_{name}', replace(model, fusion_mode=fusion, **flags))
                for name, flags in grids.placement.items()]
    if kind == 'fusion':
        if not (model.esa_in_encoder or model.esa_in_decoder):
            model = replace(model, esa_in_encoder=True)
        return [(f'fusion_{mode}', replace(model, fusion_mode=mode)) for mode in grids.fusion]
    raise ValueError(f'unknown ablation kind {kind!r}; choose from {ABLATION_KINDS}')


@timeit
def _run_cell(name: str, config: TrainConfig, data: TaskData) -> Dict:
    try:
        result = train(config, data)
    except GncformerError as e:
        raise TrainingError(f'ablation cell {name}: {e}') from e
    report = count_config_parameters(config.model)
    row = {
        'cell': name,
        'order': config.model.order,
        'fusion_mode': config.model.fusion_mode,
        'esa_in_encoder': config.model.esa_in_encoder,
        'esa_in_decoder': config.model.esa_in_decoder,
        'total_params': report.total,
        'delta_params': report.delta,
    }
    row.update(asdict(result.final))
    row['best_token_acc'] = result.best.token_acc
    row['dataset_hash'] = result.dataset_hash
    return row


def schedule_check(output_dir: Union[str, Path]) -> pd.DataFrame:
    """Split widths and sizes of the untrained orders at the configured dimension, written as CSV."""
    grids = package_config().ablations
    base = ModelConfig.preset('reference', model_dim=int(grids.schedule_dim))
    table = overhead_table(base, grids.schedule_orders)
    write_table_csv(table, Path(output_dir) / 'schedules.csv')
    return table


def run_ablation(kind: str, base: TrainConfig, output_dir: Union[str, Path],
                 threads: int = 1) -> pd.DataFrame:
    """
    Train every cell of one grid and write ``ablation_<kind>.csv``.

    Cells write their metrics and checkpoints to ``output_dir/<cell>/``. Rows are
    ranked by edit-distance rate (1 is best); the ranking is reported, not
    asserted.

    :param kind: ``order``, ``placement`` or ``fusion``.
    :type kind: str
    :param base: Base training config.
    :type base: TrainConfig
    :param output_dir: Output directory.
    :type output_dir: str or Path
    :param threads: Cells trained concurrently, defaults to 1.
    :type threads: int, optional
    :raises TrainingError: Naming the failing cell.
    :rtype: pandas.DataFrame
    """
    base.validate()
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    cells = ablation_cells(kind, base)
    if kind == 'order':
        schedule_check(output_dir)

    data = load_or_generate(base.task, base.dataset_path or None)
    tqdm.write(f'{kind} ablation: {len(cells)} cells on dataset {dataset_hash(data)[:12]}')
    params = []
    for name, model in cells:
        cell_dir = output_dir / name
        config = replace(
            base, model=model,
            metrics_path=str(cell_dir / 'metrics.csv'),
            checkpoint_path=str(cell_dir / 'best.ckpt'),
            progress=base.progress and threads <= 1,
        )
        params.append({'name': name, 'config': config, 'data': data})

    if threads <= 1:
        rows = [_run_cell(**p) for p in params]
    else:
        rows = thread_map(lambda p: _run_cell(**p), params, max_workers=threads, desc=kind, leave=False)
    table = pd.DataFrame(rows)
    table['rank'] = table['edit_rate'].rank(method='min').astype(int)
    table.to_csv(output_dir / f'ablation_{kind}.csv', index=False)
    return table

"""
Training loop over shifted target sequences.

Each step draws a batch, splits it into ``workers`` shards, runs every shard
on its own gradient tape (optionally on its own thread) and sums the shard
gradients in shard order before normalising by the batch's target-token count.
Results therefore depend only on the seed and the worker count.
"""
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm
from tqdm.contrib.concurrent import thread_map

from gncformer.checkpoint import save_checkpoint
from gncformer.config import TrainConfig
from gncformer.exceptions import TrainingError
from gncformer.harness.metrics import MetricsRow, MetricsWriter, evaluate
from gncformer.harness.optim import Adam, InverseSqrtSchedule, clip_by_global_norm
from gncformer.harness.tasks import (
    Batch,
    TaskData,
    batch_indices,
    dataset_hash,
    load_or_generate,
    make_batch,
)
from gncformer.model import PAD, GncformerModel, build_model, forward
from gncformer.tensor import compute_gradients, cross_entropy


@dataclass
class TrainResult:
    model: GncformerModel
    final: MetricsRow
    best: MetricsRow
    metrics_path: Path
    checkpoint_path: Path
    dataset_hash: str


def batch_loss_sum(model: GncformerModel, batch: Batch, label_smoothing: float = 0.0,
                   rng: Optional[np.random.Generator] = None):
    """Summed (not averaged) token loss of a batch, as a tape-recorded scalar."""
    logits = forward(model, batch.source, batch.decoder_in, rng)
    return cross_entropy(logits, batch.decoder_out, ignore_index=PAD,
                         label_smoothing=label_smoothing, reduction='sum')


def _shard_gradients(model: GncformerModel, params, batch: Batch, label_smoothing: float,
                     rng: Optional[np.random.Generator]) -> Tuple[float, List[np.ndarray]]:
    loss = batch_loss_sum(model, batch, label_smoothing, rng)
    return loss.item(), compute_gradients(loss, params)


def batch_gradients(model: GncformerModel, pairs, config: TrainConfig, step: int,
                    dropout: bool = True) -> Tuple[float, List[np.ndarray]]:
    """
    Mean token loss and its gradients over ``pairs``.

    :param model: Model whose parameters are differentiated.
    :type model: GncformerModel
    :param pairs: Batch of ``(source, target)`` pairs.
    :type pairs: list
    :param config: Training config (workers, seed, label smoothing).
    :type config: TrainConfig
    :param step: Step number, part of the dropout seed.
    :type step: int
    :param dropout: Apply dropout, defaults to True.
    :type dropout: bool, optional
    :rtype: tuple
    """
    params = model.parameters()
    shards = [s for s in np.array_split(np.arange(len(pairs)), config.workers) if len(s)]
    calls = []
    for i, shard in enumerate(shards):
        rng = np.random.default_rng([config.seed, step, i]) if dropout else None
        calls.append({
            'model': model,
            'params': params,
            'batch': make_batch([pairs[j] for j in shard]),
            'label_smoothing': config.label_smoothing,
            'rng': rng,
        })
    tokens = sum(c['batch'].num_tokens for c in calls)
    if len(calls) == 1:
        results = [_shard_gradients(**calls[0])]
    else:
        results = thread_map(lambda c: _shard_gradients(**c), calls,
                             max_workers=config.workers, disable=True)

    total = 0.0
    grads = [np.zeros_like(p.data) for p in params]
    for loss, shard_grads in results:
        total += loss
        for g, sg in zip(grads, shard_grads):
            g += sg
    return total / tokens, [g / tokens for g in grads]


def _evaluate_row(model, data: TaskData, step: int, loss: float, start: float) -> MetricsRow:
    result = evaluate(model, data.valid)
    return MetricsRow(step, loss, result.token_acc, result.seq_acc, result.edit_rate,
                      time.perf_counter() - start)


def train(config: TrainConfig, data: Optional[TaskData] = None) -> TrainResult:
    """
    Train a model from scratch.

    A metrics row is written for the untrained model (step 0), every
    ``eval_interval`` steps and at the final step. The checkpoint at
    ``checkpoint_path`` always holds the model with the best validation token
    accuracy seen so far.

    :param config: Training configuration; validated first.
    :type config: TrainConfig
    :param data: Dataset; generated (or read from ``dataset_path``) when omitted.
    :type data: TaskData, optional
    :raises TrainingError: If the loss stops being finite, naming the step.
    :rtype: TrainResult
    """
    config.validate()
    data = data or load_or_generate(config.task, config.dataset_path or None)
    if not data.train or not data.valid:
        raise TrainingError('dataset needs both training and validation examples')
    start = time.perf_counter()

    model = build_model(config.model, config.seed)
    params = model.parameters()
    optimizer = Adam(params, InverseSqrtSchedule(config.learning_rate, config.warmup_steps),
                     config.beta1, config.beta2, config.eps)
    writer = MetricsWriter(config.metrics_path)
    checkpoint_path = Path(config.checkpoint_path)
    batches = batch_indices(len(data.train), config.batch_size, np.random.default_rng([config.seed, 1]))

    first = [data.train[i] for i in next(batches)]
    loss = batch_gradients(model, first, config, step=0, dropout=False)[0]
    best = final = _evaluate_row(model, data, 0, loss, start)
    writer.append(final)
    save_checkpoint(model, checkpoint_path)
    tqdm.write(f'step 0: loss {loss:.4f}, token accuracy {final.token_acc:.4f}')

    pending = first
    progress = tqdm(range(1, config.steps + 1), desc='train', disable=not config.progress, leave=False)
    for step in progress:
        pairs = pending if pending is not None else [data.train[i] for i in next(batches)]
        pending = None
        loss, grads = batch_gradients(model, pairs, config, step)
        if not np.isfinite(loss):
            raise TrainingError(f'non-finite loss {loss} at step {step}')
        grads, _ = clip_by_global_norm(grads, config.clip_norm)
        optimizer.step(grads)
        progress.set_postfix(loss=f'{loss:.4f}')

        if step % config.eval_interval == 0 or step == config.steps:
            final = _evaluate_row(model, data, step, loss, start)
            writer.append(final)
            tqdm.write(
                f'step {step}: loss {loss:.4f}, token accuracy {final.token_acc:.4f}, '
                f'sequence accuracy {final.seq_acc:.4f}, edit rate {final.edit_rate:.4f}'
            )
            if final.token_acc > best.token_acc:
                best = final
                save_checkpoint(model, checkpoint_path)
    progress.close()

    return TrainResult(model, final, best, writer.path, checkpoint_path, dataset_hash(data))

"""
Evaluation metrics and the metrics CSV.

The edit-distance rate is the token-level analogue of a character error rate:
substitutions, insertions and deletions over the total reference length.
"""
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import pandas as pd

from gncformer.harness.tasks import Pair, encoder_input
from gncformer.model import GncformerModel, greedy_decode_batch

METRICS_COLUMNS = ['step', 'loss', 'token_acc', 'seq_acc', 'edit_rate', 'seconds']


def edit_distance(reference: Sequence, hypothesis: Sequence) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    previous = list(range(len(hypothesis) + 1))
    for i, r in enumerate(reference, start=1):
        current = [i]
        for j, h in enumerate(hypothesis, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (r != h)))
        previous = current
    return previous[-1]


def edit_rate(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    total = sum(len(r) for r in references)
    errors = sum(edit_distance(r, h) for r, h in zip(references, hypotheses))
    if total == 0:
        return 0.0 if errors == 0 else float('inf')
    return errors / total


def token_accuracy(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    """Fraction of reference positions whose token the hypothesis reproduces at the same index."""
    total = sum(len(r) for r in references)
    correct = sum(sum(1 for i, t in enumerate(r) if i < len(h) and h[i] == t)
                  for r, h in zip(references, hypotheses))
    return correct / total if total else 1.0


def sequence_accuracy(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    if not references:
        return 1.0
    return sum(list(r) == list(h) for r, h in zip(references, hypotheses)) / len(references)


@dataclass
class EvalResult:
    token_acc: float
    seq_acc: float
    edit_rate: float


def score(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> EvalResult:
    return EvalResult(
        token_acc=token_accuracy(references, hypotheses),
        seq_acc=sequence_accuracy(references, hypotheses),
        edit_rate=edit_rate(references, hypotheses),
    )


def evaluate(model: GncformerModel, pairs: Sequence[Pair], batch_size: int = 64,
             max_steps: Optional[int] = None) -> EvalResult:
    """
    Greedy-decode every source and score the hypotheses against the targets.

    :param model: Model.
    :type model: GncformerModel
    :param pairs: ``(source, target)`` pairs; must be non-empty.
    :type pairs: list
    :param batch_size: Sources decoded together, defaults to 64.
    :type batch_size: int, optional
    :param max_steps: Decoding cap; defaults to one past the longest target.
    :type max_steps: int, optional
    :rtype: EvalResult
    """
    if not pairs:
        raise ValueError('cannot evaluate on an empty dataset')
    references = [list(t) for _, t in pairs]
    max_steps = max_steps or max(len(r) for r in references) + 1
    hypotheses: List[List[int]] = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        hypotheses += greedy_decode_batch(model, [encoder_input(s) for s, _ in chunk], max_steps)
    return score(references, hypotheses)


@dataclass
class MetricsRow:
    step: int
    loss: float
    token_acc: float
    seq_acc: float
    edit_rate: float
    seconds: float


class MetricsWriter:
    """
    Append-only metrics CSV.

    Creating a writer starts a fresh file with the header; rows must arrive
    with strictly increasing steps.

    :param path: CSV file.
    :type path: str or Path
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.last_step: Optional[int] = None
        pd.DataFrame(columns=METRICS_COLUMNS).to_csv(self.path, index=False)

    def append(self, row: MetricsRow):
        if self.last_step is not None and row.step <= self.last_step:
            raise ValueError(f'metrics step {row.step} does not follow step {self.last_step}')
        pd.DataFrame([asdict(row)], columns=METRICS_COLUMNS).to_csv(
            self.path, mode='a', header=False, index=False
        )
        self.last_step = row.step


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)

"""
Synthetic copy / reverse / sort tasks and their on-disk cache.

Token ids 0, 1, 2 are pad, bos and eos; task symbols are ``3..vocab_size-1``.
The cache is a directory holding ``train.txt`` and ``valid.txt`` (one example
per line: space-separated source tokens, a tab, space-separated target tokens)
and ``task.yaml`` describing the TaskSpec that produced it.
"""
import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from tqdm import tqdm

from gncformer.config import RESERVED_TOKENS, TaskSpec
from gncformer.exceptions import ConfigError
from gncformer.model import BOS, EOS, PAD

Pair = Tuple[List[int], List[int]]


@dataclass
class TaskData:
    train: List[Pair]
    valid: List[Pair]


@dataclass
class Batch:
    """Padded arrays for one supervised step with shifted targets."""
    source: np.ndarray
    decoder_in: np.ndarray
    decoder_out: np.ndarray

    @property
    def num_tokens(self) -> int:
        return int((self.decoder_out != PAD).sum())


def task_target(kind: str, source: Sequence[int]) -> List[int]:
    """Target sequence of ``source`` under a task kind."""
    if kind == 'copy':
        return list(source)
    if kind == 'reverse':
        return list(source)[::-1]
    if kind == 'sort':
        return sorted(source)
    raise ConfigError(f'unknown task kind {kind!r}')


def _capacity(spec: TaskSpec) -> int:
    symbols = spec.vocab_size - RESERVED_TOKENS
    return sum(symbols ** length for length in range(spec.min_len, spec.max_len + 1))


def generate_task(spec: TaskSpec) -> TaskData:
    """
    Draw ``num_samples`` distinct sources and their targets.

    The last tenth (at least one example) is held out for validation, so
    validation sources never occur in training.

    :param spec: Task description.
    :type spec: TaskSpec
    :raises ConfigError: If the task spec is degenerate or cannot yield enough distinct sources.
    :rtype: TaskData
    """
    spec.validate()
    if _capacity(spec) < spec.num_samples:
        raise ConfigError(
            f'only {_capacity(spec)} distinct sources exist for vocab_size {spec.vocab_size} '
            f'and lengths [{spec.min_len}, {spec.max_len}]; {spec.num_samples} requested'
        )
    rng = np.random.default_rng(spec.seed)
    seen = set()
    sources: List[List[int]] = []
    while len(sources) < spec.num_samples:
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        source = tuple(int(t) for t in rng.integers(RESERVED_TOKENS, spec.vocab_size, size=length))
        if source in seen:
            continue
        seen.add(source)
        sources.append(list(source))

    pairs = [(s, task_target(spec.kind, s)) for s in sources]
    n_valid = max(1, spec.num_samples // 10)
    return TaskData(train=pairs[:-n_valid], valid=pairs[-n_valid:])


def _format_pairs(pairs: Sequence[Pair]) -> str:
    return ''.join(f"{' '.join(map(str, s))}\t{' '.join(map(str, t))}\n" for s, t in pairs)


def _parse_pairs(text: str, path: Path) -> List[Pair]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            src, tgt = line.split('\t')
            pairs.append(([int(t) for t in src.split()], [int(t) for t in tgt.split()]))
        except ValueError as e:
            raise ConfigError(f'{path} line {lineno}: expected "source tokens<TAB>target tokens"') from e
    return pairs


def dataset_hash(data: TaskData) -> str:
    """sha256 of the canonical cache text of both splits."""
    digest = hashlib.sha256()
    digest.update(_format_pairs(data.train).encode())
    digest.update(b'\0')
    digest.update(_format_pairs(data.valid).encode())
    return digest.hexdigest()


def save_dataset(data: TaskData, directory: Union[str, Path], spec: Optional[TaskSpec] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / 'train.txt').write_text(_format_pairs(data.train))
    (directory / 'valid.txt').write_text(_format_pairs(data.valid))
    if spec is not None:
        with open(directory / 'task.yaml', 'w') as f:
            yaml.safe_dump(asdict(spec), f, sort_keys=False)
    return directory


def load_dataset(directory: Union[str, Path]) -> TaskData:
    directory = Path(directory)
    splits = {}
    for split in ('train', 'valid'):
        path = directory / f'{split}.txt'
        splits[split] = _parse_pairs(path.read_text(), path)
    return TaskData(**splits)


def load_or_generate(spec: TaskSpec, directory: Optional[Union[str, Path]] = None) -> TaskData:
    """
    Dataset for ``spec``, read from ``directory`` when it caches the same spec.

    A cache written for a different spec is regenerated and overwritten.
    """
    if not directory:
        return generate_task(spec)
    directory = Path(directory)
    meta = directory / 'task.yaml'
    if meta.exists():
        with open(meta) as f:
            cached = yaml.safe_load(f) or {}
        if cached == asdict(spec):
            tqdm.write(f'Loading cached dataset from {directory}')
            return load_dataset(directory)
    data = generate_task(spec)
    save_dataset(data, directory, spec)
    tqdm.write(f'Dataset cached in {directory}')
    return data


def encoder_input(source: Sequence[int]) -> List[int]:
    """Source tokens as fed to the encoder: terminated by ``EOS``."""
    return list(source) + [EOS]


def make_batch(pairs: Sequence[Pair]) -> Batch:
    """
    Pad a list of pairs.

    Decoder input is ``BOS`` + target, decoder output is target + ``EOS``.
    """
    sources = [encoder_input(s) for s, _ in pairs]
    decoder_in = [[BOS] + list(t) for _, t in pairs]
    decoder_out = [list(t) + [EOS] for _, t in pairs]

    def pad(rows):
        out = np.full((len(rows), max(len(r) for r in rows)), PAD, dtype=np.int64)
        for i, r in enumerate(rows):
            out[i, :len(r)] = r
        return out
    return Batch(pad(sources), pad(decoder_in), pad(decoder_out))


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Endless stream of index batches; each pass over ``n`` items uses a fresh permutation."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[start:start + batch_size]

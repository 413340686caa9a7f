"""
Typed configuration (model, task, training) and the flat ``key = value`` file format.

Option names, sections and help texts come from the package ``config.yaml``;
defaults are the dataclass defaults below.
"""
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from gncformer.exceptions import ConfigError
from gncformer.gnconv import dimension_schedule
from gncformer.utils import package_config

FUSION_MODES = ('internal', 'serial', 'parallel', 'none')
TASK_KINDS = ('copy', 'reverse', 'sort')
RESERVED_TOKENS = 3


@dataclass(frozen=True)
class ModelConfig:
    encoder_layers: int = 6
    decoder_layers: int = 6
    model_dim: int = 256
    heads: int = 4
    ffn_dim: int = 0
    order: int = 5
    kernel_size: int = 7
    alpha: float = 1.0
    fusion_mode: str = 'internal'
    esa_in_encoder: bool = True
    esa_in_decoder: bool = False
    source_vocab: int = 20
    target_vocab: int = 20
    max_len: int = 64
    dropout: float = 0.1
    attention_dropout: float = 0.0

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim or 4 * self.model_dim

    @property
    def uses_esa(self) -> bool:
        return self.fusion_mode != 'none' and (self.esa_in_encoder or self.esa_in_decoder)

    def validate(self) -> 'ModelConfig':
        """
        Check the invariants; raise ``ConfigError`` naming the failing field.

        :return: ``self``, for chaining.
        :rtype: ModelConfig
        """
        for name in ('encoder_layers', 'decoder_layers', 'model_dim', 'heads', 'order',
                     'kernel_size', 'max_len'):
            if getattr(self, name) < 1:
                raise ConfigError(f'{name} must be >= 1, got {getattr(self, name)}')
        if self.ffn_dim < 0:
            raise ConfigError(f'ffn_dim must be >= 0, got {self.ffn_dim}')
        if self.model_dim % self.heads:
            raise ConfigError(f'heads {self.heads} must divide model_dim {self.model_dim}')
        dimension_schedule(self.model_dim, self.order)
        if self.alpha <= 0:
            raise ConfigError(f'alpha must be positive, got {self.alpha}')
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f'fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}')
        for name in ('source_vocab', 'target_vocab'):
            if getattr(self, name) < RESERVED_TOKENS:
                raise ConfigError(f'{name} must be >= {RESERVED_TOKENS}, got {getattr(self, name)}')
        for name in ('dropout', 'attention_dropout'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f'{name} must be in [0, 1), got {getattr(self, name)}')
        return self

    def to_text(self) -> str:
        """Canonical ``key = value`` serialisation, one field per line in field order."""
        return ''.join(f'{f.name} = {_format_value(getattr(self, f.name))}\n' for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> 'ModelConfig':
        values = {}
        types = {f.name: f.type for f in fields(cls)}
        for lineno, key, raw in _parse_lines(text.splitlines(), source='model config'):
            if key not in types:
                raise ConfigError(f'model config line {lineno}: unknown key {key!r}')
            values[key] = _coerce(raw, types[key], f'model config line {lineno}')
        return cls(**values).validate()

    @classmethod
    def preset(cls, name: str, **overrides) -> 'ModelConfig':
        """ModelConfig built from a named preset of the package config."""
        presets = package_config().presets
        if name not in presets:
            raise ConfigError(f'unknown preset {name!r}; choose from {sorted(presets)}')
        return replace(cls(), **{**presets[name], **overrides}).validate()


@dataclass(frozen=True)
class TaskSpec:
    kind: str = 'copy'
    vocab_size: int = 20
    min_len: int = 5
    max_len: int = 12
    num_samples: int = 2000
    seed: int = 0

    def validate(self) -> 'TaskSpec':
        if self.kind not in TASK_KINDS:
            raise ConfigError(f'task must be one of {TASK_KINDS}, got {self.kind!r}')
        if self.vocab_size <= RESERVED_TOKENS:
            raise ConfigError(
                f'vocab_size {self.vocab_size} leaves no symbols after pad/bos/eos'
            )
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError(f'empty length range [{self.min_len}, {self.max_len}]')
        if self.num_samples < 2:
            raise ConfigError(f'samples must be >= 2, got {self.num_samples}')
        return self


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskSpec = field(default_factory=TaskSpec)
    steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-3
    warmup_steps: int = 200
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 5.0
    label_smoothing: float = 0.1
    seed: int = 0
    eval_interval: int = 100
    workers: int = 1
    metrics_path: str = 'runs/metrics.csv'
    checkpoint_path: str = 'runs/best.ckpt'
    dataset_path: str = ''
    progress: bool = True

    def validate(self) -> 'TrainConfig':
        self.model.validate()
        self.task.validate()
        if not self.steps >= self.warmup_steps >= 0:
            raise ConfigError(f'need steps >= warmup_steps >= 0, got {self.steps} and {self.warmup_steps}')
        for name in ('learning_rate', 'eps', 'clip_norm'):
            if getattr(self, name) <= 0:
                raise ConfigError(f'{name} must be positive, got {getattr(self, name)}')
        for name in ('beta1', 'beta2'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f'{name} must be in [0, 1), got {getattr(self, name)}')
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f'label_smoothing must be in [0, 1), got {self.label_smoothing}')
        for name in ('batch_size', 'eval_interval', 'workers'):
            if getattr(self, name) < 1:
                raise ConfigError(f'{name} must be >= 1, got {getattr(self, name)}')
        if self.model.max_len < self.task.max_len + 1:
            raise ConfigError(
                f'max_len {self.model.max_len} cannot hold task sequences of length '
                f'{self.task.max_len} plus bos/eos'
            )
        if min(self.model.source_vocab, self.model.target_vocab) < self.task.vocab_size:
            raise ConfigError('model vocabularies are smaller than the task vocab_size')
        return self


# --------------------------------------------------------------------------
# Flat key = value files
# --------------------------------------------------------------------------
def options() -> Dict[str, Any]:
    """Flat option table: key -> {section, field, help}."""
    table = {}
    for key, spec in package_config().options.items():
        table[key] = {'section': spec.section, 'field': spec.get('field', key), 'help': spec.help}
    return table


def _section_types(section: str) -> Dict[str, type]:
    cls = {'model': ModelConfig, 'task': TaskSpec, 'train': TrainConfig}[section]
    return {f.name: f.type for f in fields(cls)}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return str(value)


def _parse_lines(lines: List[str], source: str):
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f'{source} line {lineno}: expected "key = value", got {raw.strip()!r}')
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigError(f'{source} line {lineno}: missing key')
        yield lineno, key, value


def _coerce(raw: Any, target: type, where: str):
    value = raw
    if isinstance(raw, str):
        try:
            value = yaml.safe_load(raw) if raw else ''
        except yaml.YAMLError as e:
            raise ConfigError(f'{where}: cannot parse value {raw!r}') from e
    try:
        if target is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if target is int:
            if isinstance(value, bool) or not float(value).is_integer():
                raise TypeError
            return int(value)
        if target is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if target is str:
            return '' if value is None else str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f'{where}: {raw!r} is not a valid {target.__name__}') from e
    return value


def flatten(config: TrainConfig) -> Dict[str, Any]:
    """Flat key -> value view of a TrainConfig."""
    sections = {'model': asdict(config.model), 'task': asdict(config.task), 'train': asdict(config)}
    return {key: sections[spec['section']][spec['field']] for key, spec in options().items()}


def build_train_config(flat: Dict[str, Any], base: Optional[TrainConfig] = None) -> TrainConfig:
    """
    Apply flat overrides to ``base`` (defaults when omitted) and validate.

    ``vocab_size`` sets the task vocabulary and both model vocabularies.
    """
    base = base or TrainConfig()
    table = options()
    updates: Dict[str, Dict[str, Any]] = {'model': {}, 'task': {}, 'train': {}}
    for key, value in flat.items():
        if key not in table:
            raise ConfigError(f'unknown option {key!r}')
        spec = table[key]
        target = _section_types(spec['section'])[spec['field']]
        updates[spec['section']][spec['field']] = _coerce(value, target, f'option {key}')

    task = replace(base.task, **updates['task'])
    model_updates = dict(updates['model'])
    if 'vocab_size' in updates['task']:
        model_updates.update(source_vocab=task.vocab_size, target_vocab=task.vocab_size)
    model = replace(base.model, **model_updates)
    return replace(base, model=model, task=task, **updates['train']).validate()


def load_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """
    Read a training config file of ``key = value`` lines.

    ``#`` starts a comment; blank lines are ignored; values are YAML scalars.
    Explicit ``overrides`` (flat keys) win over the file.

    :param path: Config file.
    :type path: str or Path
    :param overrides: Flat key -> value pairs applied after the file.
    :type overrides: dict, optional
    :raises ConfigError: On a missing file, a malformed line, an unknown key or an invalid value.
    :rtype: TrainConfig
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as e:
        raise ConfigError(f'config file not found: {path}') from e

    table = options()
    flat: Dict[str, Any] = {}
    for lineno, key, raw in _parse_lines(lines, source=str(path)):
        if key not in table:
            raise ConfigError(f'{path} line {lineno}: unknown key {key!r}')
        spec = table[key]
        target = _section_types(spec['section'])[spec['field']]
        flat[key] = _coerce(raw, target, f'{path} line {lineno}')
    flat.update(overrides or {})
    return build_train_config(flat)


def describe_options() -> List[Tuple[str, Any, str]]:
    """(key, default, help) for every flat option, in config.yaml order."""
    defaults = flatten(TrainConfig())
    return [(key, defaults[key], spec['help']) for key, spec in options().items()]

"""
Binary checkpoint files.

Layout, little-endian throughout::

    b'GNCF'
    u32 format version
    u32 byte length, then the ModelConfig as UTF-8 ``key = value`` text
    u32 parameter count
    per parameter:
        u32 name length, name (UTF-8)
        u32 rank, rank x u32 extents
        float64 values in row-major order
"""
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from gncformer.config import ModelConfig
from gncformer.exceptions import CheckpointError, ConfigError
from gncformer.model import GncformerModel, build_model, parameter_shapes

MAGIC = b'GNCF'
VERSION = 1
_U32 = struct.Struct('<I')


def _write_u32(f: BinaryIO, value: int):
    f.write(_U32.pack(value))


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f'checkpoint truncated while reading {what}')
    return data


def _read_u32(f: BinaryIO, what: str) -> int:
    return _U32.unpack(_read_exact(f, 4, what))[0]


def save_checkpoint(model: GncformerModel, path: Union[str, Path]) -> Path:
    """
    Write ``model`` to ``path``, creating parent directories.

    :param model: Model to save.
    :type model: GncformerModel
    :param path: Destination file.
    :type path: str or Path
    :return: The written path.
    :rtype: Path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = list(model.named_parameters())
    config_text = model.config.to_text().encode('utf-8')
    with open(path, 'wb') as f:
        f.write(MAGIC)
        _write_u32(f, VERSION)
        _write_u32(f, len(config_text))
        f.write(config_text)
        _write_u32(f, len(params))
        for name, tensor in params:
            encoded = name.encode('utf-8')
            _write_u32(f, len(encoded))
            f.write(encoded)
            _write_u32(f, tensor.ndim)
            for extent in tensor.shape:
                _write_u32(f, extent)
            f.write(np.ascontiguousarray(tensor.data, dtype='<f8').tobytes())
    return path


def load_checkpoint(path: Union[str, Path]) -> GncformerModel:
    """
    Read a checkpoint and rebuild its model.

    Every stored name and shape must match what the stored ModelConfig implies.

    :param path: Checkpoint file.
    :type path: str or Path
    :raises FileNotFoundError: If ``path`` does not exist.
    :raises CheckpointError: On a bad magic string, an unknown version, a
        truncated file, or a parameter set that disagrees with the config.
    :rtype: GncformerModel
    """
    path = Path(path)
    with open(path, 'rb') as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f'{path} is not a gncformer checkpoint (bad magic)')
        version = _read_u32(f, 'version')
        if version != VERSION:
            raise CheckpointError(f'unsupported checkpoint version {version} (expected {VERSION})')
        text = _read_exact(f, _read_u32(f, 'config length'), 'config').decode('utf-8')
        try:
            config = ModelConfig.from_text(text)
        except ConfigError as e:
            raise CheckpointError(f'checkpoint config is invalid: {e}') from e

        expected = parameter_shapes(config)
        count = _read_u32(f, 'parameter count')
        if count != len(expected):
            raise CheckpointError(f'checkpoint holds {count} parameters, config implies {len(expected)}')
        values = {}
        for _ in range(count):
            name = _read_exact(f, _read_u32(f, 'name length'), 'name').decode('utf-8')
            rank = _read_u32(f, f'rank of {name}')
            shape = tuple(_read_u32(f, f'extent of {name}') for _ in range(rank))
            if name not in expected:
                raise CheckpointError(f'unexpected parameter {name!r}')
            if name in values:
                raise CheckpointError(f'duplicate parameter {name!r}')
            if shape != expected[name]:
                raise CheckpointError(f'parameter {name!r} has shape {shape}, config implies {expected[name]}')
            n = int(np.prod(shape, dtype=np.int64))
            raw = _read_exact(f, 8 * n, f'values of {name}')
            values[name] = np.frombuffer(raw, dtype='<f8').reshape(shape)
        if f.read(1):
            raise CheckpointError('trailing bytes after the last parameter')

    model = build_model(config, seed=0)
    for name, tensor in model.named_parameters():
        tensor.data[...] = values[name]
    return model

import struct
from dataclasses import replace

import pytest
from numpy.testing import assert_array_equal

from gncformer.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from gncformer.exceptions import CheckpointError
from gncformer.model import build_model, forward


@pytest.fixture
def saved(tiny_config, tmp_path):
    model = build_model(tiny_config, seed=3)
    return model, save_checkpoint(model, tmp_path / 'nested' / 'model.ckpt')


def test_round_trip_restores_every_parameter(saved):
    model, path = saved
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    original = model.state_dict()
    restored = loaded.state_dict()
    assert list(restored) == list(original)
    for name in original:
        assert_array_equal(restored[name], original[name])
    assert_array_equal(forward(loaded, [3, 4, 5], [1, 6]).data, forward(model, [3, 4, 5], [1, 6]).data)


def test_file_starts_with_magic_and_version(saved):
    raw = saved[1].read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack('<I', raw[4:8])[0] == 1


def test_bad_magic(saved, tmp_path):
    path = tmp_path / 'bad.ckpt'
    path.write_bytes(b'XXXX' + saved[1].read_bytes()[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_unsupported_version(saved, tmp_path):
    raw = saved[1].read_bytes()
    path = tmp_path / 'v9.ckpt'
    path.write_bytes(raw[:4] + struct.pack('<I', 9) + raw[8:])
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(path)


def test_truncated_file(saved, tmp_path):
    raw = saved[1].read_bytes()
    path = tmp_path / 'short.ckpt'
    path.write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_trailing_bytes(saved, tmp_path):
    path = tmp_path / 'long.ckpt'
    path.write_bytes(saved[1].read_bytes() + b'\0')
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_shape_disagreeing_with_config(tiny_config, tmp_path):
    model = build_model(tiny_config)
    # weights for ffn width 16, config text claiming 24
    model.config = replace(tiny_config, ffn_dim=24)
    path = save_checkpoint(model, tmp_path / 'mismatch.ckpt')
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / 'absent.ckpt')

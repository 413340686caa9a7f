import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gncformer.config import ModelConfig, TaskSpec, TrainConfig

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.register_profile("ci", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """D=8, h=2, n=2, one layer per side, ESA on both sides."""
    return ModelConfig(encoder_layers=1, decoder_layers=1, model_dim=8, heads=2, ffn_dim=16, order=2,
                       kernel_size=3, source_vocab=11, target_vocab=11, max_len=12,
                       esa_in_encoder=True, esa_in_decoder=True, dropout=0.0)


@pytest.fixture
def quick_train_config(tmp_path):
    """A training run that finishes in a few seconds."""
    model = ModelConfig(encoder_layers=1, decoder_layers=1, model_dim=16, heads=2, ffn_dim=32, order=2,
                        kernel_size=3, source_vocab=10, target_vocab=10, max_len=10, dropout=0.1)
    task = TaskSpec(kind="copy", vocab_size=10, min_len=3, max_len=5, num_samples=40, seed=3)
    config = TrainConfig(model=model, task=task, steps=4, batch_size=8, warmup_steps=1,
                         eval_interval=2, progress=False,
                         metrics_path=str(tmp_path / "run" / "metrics.csv"),
                         checkpoint_path=str(tmp_path / "run" / "best.ckpt"))
    return config.validate()

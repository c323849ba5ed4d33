import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jobtitles.model import ModelConfig, init_params  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
TOY = ROOT / "fixtures" / "toy"

TOY_CONFIG = ModelConfig(
    max_len=6, embedding_dim=8, gru_units=4, lstm_units=4, conv_filters=3, num_labels=3, dtype="float64", epochs=1
)


def toy_params(seed=0, vocab=20, config=TOY_CONFIG, jitter=0.3):
    """Toy-size parameters with every tensor (biases included) randomized."""
    rng = np.random.default_rng(seed)
    params = init_params(config, rng.uniform(-0.5, 0.5, (vocab, config.embedding_dim)), seed=seed)
    for name, arr in params.arrays.items():
        arr += rng.normal(0.0, jitter, arr.shape)
    params.arrays["embedding"][0] = 0.0
    return params


@pytest.fixture
def toy_dir():
    return TOY


@pytest.fixture
def toy_config():
    return TOY_CONFIG


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # expose the call-phase report so fixtures can tell pass from fail
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep

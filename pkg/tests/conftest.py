import numpy as np
import pytest

from probcert.mlp import Architecture, TrainConfig, save_model, train


def tiny_policy(path, gain, seed=0):
    """Small network steering toward phi = 0; fast and good enough for pipeline tests."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([rng.uniform(0.3, 1.2, 400), rng.uniform(-1, 1, 400), rng.uniform(-3, 3, 400),
                         rng.uniform(-10, 10, 400)])
    y = np.clip(-gain * np.sin(X[:, 2]), -10, 10)
    save_model(train(X, y, Architecture(4, 1, 1, 8), TrainConfig(epochs=30, seed=seed)), path)
    return path


@pytest.fixture(scope="session")
def policy_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("policies")
    return tiny_policy(d / "a.npz", 2.0, 0), tiny_policy(d / "b.npz", 4.0, 1)

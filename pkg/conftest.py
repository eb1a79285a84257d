import numpy as np
import pytest

from spectra_data import SpectraDataset, WavenumberGrid
from synth import SynthConfig, gen_dataset


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 交差検証を最後まで回す時間のかかるテスト")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny_dataset():
    """5点グリッド・4試料の小さなデータセット"""

    grid = WavenumberGrid(np.array([1800.0, 1600.0, 1400.0, 1200.0, 1000.0]))
    X = np.array(
        [
            [0.1, 0.2, 0.3, 0.4, 0.5],
            [0.5, 0.4, 0.3, 0.2, 0.1],
            [1.0, 1.0, 1.0, 1.0, 1.0],
            [0.0, 2.0, 0.0, 2.0, 0.0],
        ]
    )
    return SpectraDataset(grid, X, np.array([1, 0, 1, 0]), ("a", "b", "c", "d"))


@pytest.fixture(scope="session")
def default_cohort():
    """既定設定の合成コホート (112 試料, seed 0)"""

    return gen_dataset(SynthConfig())

import numpy as np
import pytest

from ebsc.config import FitConfig
from ebsc.driver import fit
from ebsc.noise_model import NoiseSpec, simulate_noise
from ebsc.simulation import make_function

SMALL_N = 150


@pytest.fixture(scope="session")
def fast_config() -> FitConfig:
    return FitConfig(q_set=[1, 2, 3], max_iter=20)


@pytest.fixture(scope="session")
def noisy_signal() -> np.ndarray:
    noise = simulate_noise(NoiseSpec(kind="iid"), SMALL_N, seed=11)
    return make_function("f3", SMALL_N) + noise


@pytest.fixture(scope="session")
def fitted(noisy_signal, fast_config):
    return fit(noisy_signal, fast_config)


@pytest.fixture
def data_file(tmp_path, noisy_signal):
    path = tmp_path / "data.csv"
    path.write_text("y\n" + "\n".join(f"{value:.10f}" for value in noisy_signal) + "\n")
    return path

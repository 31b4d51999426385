import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

# La base de datos y el límite de peticiones se fijan antes de importar la app
_DB_DIR = tempfile.mkdtemp(prefix="fl_mimo_tests_")
os.environ["DATABASE_URL"] = f"sqlite+aiosqlite:///{Path(_DB_DIR) / 'test.db'}"
os.environ["RATE_LIMIT"] = "10000/minute"

import numpy as np
import pytest

from app.channel import ChannelRealization, draw_channels, draw_topology
from app.phy import PhyConfig, SinrTargets
from app.schemas import ExperimentConfig


@dataclass(frozen=True)
class Instance:
    """Instancia de ronda aleatoria: canal, objetivos, pesos y radio."""
    channels: ChannelRealization
    targets: SinrTargets
    weights: np.ndarray
    sum_power: float
    sigma2: float


def build_instance(seed, device_count=5, antenna_count=4, target_range=(0.05, 1.0), sum_power=0.03):
    rng = np.random.default_rng(seed)
    topology = draw_topology(device_count, rng_seed=seed)
    channels = draw_channels(topology, antenna_count, rng_seed=seed + 10_000)
    gammas = rng.uniform(*target_range, size=device_count)
    targets = SinrTargets(
        targets={k: float(g) for k, g in enumerate(gammas)},
        required_rates={k: float(np.log2(1.0 + g)) for k, g in enumerate(gammas)},
    )
    weights = rng.dirichlet(np.ones(device_count))
    return Instance(channels, targets, weights, sum_power, PhyConfig().noise_power_w)


@pytest.fixture
def make_instance():
    return build_instance


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def phy():
    return PhyConfig()


@pytest.fixture
def small_config():
    """Experimento corto y barato (K=4, pocos datos)."""
    return ExperimentConfig(
        device_count=4,
        rounds=5,
        sample_count=200,
        feature_dim=5,
        num_classes=3,
        master_seed=7,
    )


@pytest.fixture
def reference_config():
    """Escala de escritorio: K=10, 2000 muestras, tau=200."""
    return ExperimentConfig(device_count=10, rounds=200, sample_count=2000, master_seed=0)


@pytest.fixture(scope="session")
def client():
    from fastapi.testclient import TestClient

    from app.main import app

    with TestClient(app) as test_client:
        yield test_client

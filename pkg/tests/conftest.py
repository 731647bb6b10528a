"""
Configuración común de pytest: raíz del proyecto en sys.path, marcador
`slow` (sólo con --runslow) y datos simulados pequeños
"""
import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from gem import FitConfig  # noqa: E402
from gibbs import EStepConfig  # noqa: E402
from simulation import SimConfig, simulated_dataset  # noqa: E402

SMALL_SIM = dict(n_genes=30, n_cells=12, n_bulk=6, n_cell_types=2,
                 cell_type_proportions=(0.5, 0.5), alpha_true=(1.0, 2.0),
                 n_marker=3, n_anti_marker=3, n_housekeeping=5, seed=7)


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help="corre también las pruebas estadísticas largas")


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: pruebas largas (Monte Carlo de muchos sorteos)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason="requiere --runslow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def small_config() -> SimConfig:
    return SimConfig(**SMALL_SIM)


@pytest.fixture
def small_data(small_config):
    return simulated_dataset(small_config)


@pytest.fixture
def quick_fit_config() -> FitConfig:
    return FitConfig(estep=EStepConfig(n_sweeps=10), max_em_iterations=2, seed=3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)

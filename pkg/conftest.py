"""
Fixtures compartidas de las pruebas
"""

import os
import sys

import numpy as np
import pytest

# Agregar la raíz del repositorio al path para imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.data.data_loader import TaskConfig
from src.models.granularity import ArchConfig
from src.models.optimizers import SsoConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def sso_cfg():
    return SsoConfig()


@pytest.fixture
def mlp_arch():
    return ArchConfig(kind='mlp', d_in=16, d_out=4, hidden=32)


@pytest.fixture
def regression_task():
    return TaskConfig(kind='synthetic_regression', batch_size=32, steps=30, seed=3)


@pytest.fixture
def write_json(tmp_path):
    """Escribe un documento JSON (texto) en tmp_path y devuelve su ruta."""
    def _write(name: str, text: str) -> str:
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return str(path)
    return _write

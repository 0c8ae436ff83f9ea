import numpy as np
import pytest

from services.grid import BoundarySpec, Dirichlet, Grid, NeumannZero
from services.objectives import MaterialModel


@pytest.fixture
def unit_grid():
    """17x17 nodes on the unit square"""
    return Grid((17, 17), (1.0, 1.0))


@pytest.fixture
def lattice():
    """Unit-spaced 5x5 lattice"""
    return Grid((5, 5), (4.0, 4.0))


@pytest.fixture
def dirichlet_box():
    return BoundarySpec.uniform(Dirichlet(0.0), 2)


@pytest.fixture
def insulated_box():
    return BoundarySpec.uniform(NeumannZero(), 2)


@pytest.fixture
def thermal_material():
    return MaterialModel(kind='thermal', properties=(1.0, 1e-6))


@pytest.fixture
def elastic_material_model():
    return MaterialModel(kind='elastic', properties=(1.0, 1e-6), poisson_ratio=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Fresh output directory with PETTO_OUT cleared"""
    monkeypatch.delenv('PETTO_OUT', raising=False)
    return tmp_path / 'out'

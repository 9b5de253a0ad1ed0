import numpy as np
import pytest

from mlffbench.oracles import random_cluster
from mlffbench.system import WorkloadSpec, generate_polyalanine


@pytest.fixture(scope="session")
def cluster30():
    return random_cluster(30, 7)


@pytest.fixture(scope="session")
def dipeptide():
    return generate_polyalanine(WorkloadSpec(residues=2, caps=2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

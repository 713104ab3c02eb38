import numpy as np
import pytest

from spinbie import geometry as geo
from spinbie import operators as op


def random_mv(rng, m=None):
    shape = (8,) if m is None else (m, 8)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sphere1():
    return geo.quadrature_from_mesh(geo.icosphere(1))


@pytest.fixture(scope="session")
def sphere2():
    return geo.quadrature_from_mesh(geo.icosphere(2))


@pytest.fixture(scope="session")
def ck1(sphere1):
    return op.assemble_Ck(sphere1, 2.0)


@pytest.fixture(scope="session")
def ck2(sphere2):
    return op.assemble_Ck(sphere2, 2.0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_cloud(rng, n=64, spread=(3.0, 2.0, 1.0)):
    """Anisotropic Gaussian blob with a random orientation and offset."""
    from cloudrain.linalg import householder

    pts = rng.normal(size=(n, 3)) * np.asarray(spread)
    rot = householder(rng.normal(size=3)) @ householder(rng.normal(size=3))
    return pts @ rot.T + rng.uniform(-5, 5, 3)


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])

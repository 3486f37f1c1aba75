import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from smglearn import model  # noqa: E402
from smglearn.sitegen import default_stream, generate_site  # noqa: E402


@pytest.fixture(scope="session")
def stream_specs():
    return default_stream(6, 0)


@pytest.fixture(scope="session")
def site1(stream_specs):
    return generate_site(stream_specs[0])


@pytest.fixture(scope="session")
def site6(stream_specs):
    return generate_site(stream_specs[5])


@pytest.fixture
def params():
    return model.init_params(0)


def random_batch(rng, n=5, width=256):
    x = rng.normal(size=(n, width))
    y = (rng.random((n, width)) < 0.3).astype(np.float64)
    return model.Batch(x, y, tuple((0, i) for i in range(n)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def model_quad(rng, d_subjects, p_subjects, k=5):
    """Quad of real subjects: ``k`` drawn from each pool, union split at random."""
    from smglearn.objectives import make_quad

    d = model.Batch.from_subjects([d_subjects[i] for i in rng.choice(len(d_subjects), k, False)])
    p = model.Batch.from_subjects([p_subjects[i] for i in rng.choice(len(p_subjects), k, False)])
    return make_quad(rng, d, p)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

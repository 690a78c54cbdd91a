import json

import numpy as np
import pytest

from zrp_diffusion.chain import build_chain


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run acceptance-scale statistical tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


COMPLETE3 = [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]
TWO_SITE = [[0.0, 2.0], [1.0, 0.0]]


@pytest.fixture
def complete3():
    return build_chain(np.array(COMPLETE3), b=1.0)


@pytest.fixture
def two_site():
    return build_chain(np.array(TWO_SITE), b=1.0)


@pytest.fixture
def cycle4():
    # one-way cycle with a single back edge: irreducible, not reversible
    r = np.zeros((4, 4))
    r[0, 1], r[1, 2], r[2, 3], r[3, 0] = 1.0, 2.0, 1.5, 0.5
    r[2, 0] = 0.7
    return build_chain(r, b=1.0)


@pytest.fixture
def chain_file(tmp_path):
    def write(rates=COMPLETE3, b=1.0, name="chain.json"):
        path = tmp_path / name
        path.write_text(json.dumps({"rates": rates, "b": b}))
        return path
    return write

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

FIXTURES = os.path.join(ROOT, 'fixtures')


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run full Monte Carlo reproductions')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope='session')
def normal20_path():
    return os.path.join(FIXTURES, 'normal20.csv')


@pytest.fixture(scope='session')
def mixture20_path():
    return os.path.join(FIXTURES, 'mixture20.csv')


@pytest.fixture(scope='session')
def normal20(normal20_path):
    from data_io import read_data
    return read_data(normal20_path)


@pytest.fixture(scope='session')
def mixture20(mixture20_path):
    from data_io import read_data
    return read_data(mixture20_path)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(129)))

import sys
from pathlib import Path

import pytest

from oobcurves.datasets import synthesize
from oobcurves.forest import train_forest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable


@pytest.fixture(scope="session")
def gauss200():
    return synthesize("two-gaussians(n=200,p=5,sep=3.0)", seed=3)


@pytest.fixture(scope="session")
def gauss200_forest(gauss200):
    return train_forest(gauss200, 120, master_seed=11)


@pytest.fixture(scope="session")
def reg150():
    return synthesize("linear-regression(n=150,p=4,noise_sd=0.8)", seed=5)


@pytest.fixture(scope="session")
def reg150_forest(reg150):
    return train_forest(reg150, 120, master_seed=13)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the shared oracles module

from ptqtune import build_cache, generate_fixture, make_dataset


@pytest.fixture(scope="session")
def ds():
    return make_dataset(seed=0)


@pytest.fixture(scope="session")
def lenet():
    return generate_fixture("lenet-ish", seed=1)


@pytest.fixture(scope="session")
def resnet():
    return generate_fixture("resnet-toy", seed=1)


@pytest.fixture(scope="session")
def mobile():
    return generate_fixture("mobile-toy", seed=1)


@pytest.fixture(scope="session")
def lenet_cache_s2(lenet, ds):
    return build_cache(lenet, ds, "S2", seed=0)


@pytest.fixture(scope="session")
def lenet_cache_s3(lenet, ds):
    return build_cache(lenet, ds, "S3", seed=0)


@pytest.fixture(scope="session")
def resnet_cache_s2(resnet, ds):
    return build_cache(resnet, ds, "S2", seed=0)


@pytest.fixture(scope="session")
def mobile_cache_s2(mobile, ds):
    return build_cache(mobile, ds, "S2", seed=0)

import numpy as np
import pytest

from voxquant.calib import calibrate_graph
from voxquant.engine import build_engine, serialize_engine
from voxquant.qdq import default_policy, insert_qdq
from voxquant.synth import gen_synthetic_dataset
from voxquant.zoo import centroid_net

from helpers import CLASSES, SMALL_SHAPE


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope='session')
def small_dataset():
    return gen_synthetic_dataset(7, 3, SMALL_SHAPE, CLASSES, 0.01)


@pytest.fixture(scope='session')
def centroid_graph():
    return centroid_net(CLASSES, SMALL_SHAPE)


@pytest.fixture(scope='session')
def centroid_table(centroid_graph, small_dataset):
    return calibrate_graph(centroid_graph, [volume for volume, _ in small_dataset], default_policy())


@pytest.fixture(scope='session')
def centroid_fake(centroid_graph, centroid_table):
    return insert_qdq(centroid_graph, centroid_table, default_policy())


@pytest.fixture(scope='session')
def centroid_plan(centroid_fake):
    return build_engine(centroid_fake)


@pytest.fixture(scope='session')
def centroid_engine(centroid_plan):
    return serialize_engine(centroid_plan)

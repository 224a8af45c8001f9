import numpy as np
import pytest

from voxquant.errors import InvalidConfig
from voxquant.executor import execute_fp32
from voxquant.graph import serialize_model
from voxquant.synth import gen_synthetic_dataset
from voxquant.zoo import centroid_net, gen_model, toy_unet


def test_centroid_net_is_exact_on_clean_data():
    samples = gen_synthetic_dataset(2, 2, (16, 16, 16), 4, 0.0)
    g = centroid_net(4, (16, 16, 16))
    for volume, labels in samples:
        pred = execute_fp32(g, volume)['labels']
        assert pred.dtype == np.uint16
        # the smoothing window only blurs voxels next to a class boundary
        interior = np.ones(labels.shape, dtype=bool)
        for axis in range(2, 5):
            for shift in (-1, 1):
                interior &= np.roll(labels, shift, axis=axis) == labels
        assert np.array_equal(pred[interior], labels[interior])


def test_toy_unet_parameters_scale():
    counts = [toy_unet(scale, 4, 0, (16, 16, 16)).parameter_count() for scale in ('S', 'M')]
    assert 50000 < counts[0] < 200000
    assert 500000 < counts[1] < 2000000


def test_toy_unet_deterministic_in_seed():
    a = serialize_model(toy_unet('S', 4, 7, (16, 16, 16)))
    b = serialize_model(toy_unet('S', 4, 7, (16, 16, 16)))
    c = serialize_model(toy_unet('S', 4, 8, (16, 16, 16)))
    assert a == b
    assert a[1] != c[1]


def test_gen_model_dispatch():
    assert gen_model('centroid-net', 'S', 3, 0, (16, 16, 16)).name == 'centroid-net'
    assert gen_model('toy-unet', 'S', 3, 0, (16, 16, 16)).name == 'toy-unet-S'


@pytest.mark.parametrize('call', [
    lambda: gen_model('resnet', 'S', 4, 0),
    lambda: toy_unet('XL', 4, 0, (16, 16, 16)),
    lambda: toy_unet('S', 4, 0, (18, 16, 16)),
    lambda: centroid_net(1, (16, 16, 16)),
])
def test_invalid_models(call):
    with pytest.raises(InvalidConfig):
        call()

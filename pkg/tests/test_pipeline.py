import json
import os

import numpy as np
import pytest

from voxquant.engine import load_engine, serialize_engine
from voxquant.errors import InputShapeMismatch, UnsupportedBits
from voxquant.graph import load_model
from voxquant.pipeline import ARTIFACTS, artifact_paths, run_pipeline
from voxquant.qdq import default_policy, parse_policy


def calib_volumes(small_dataset):
    return [volume for volume, _ in small_dataset]


def test_artifacts_written(tmp_path, centroid_graph, small_dataset):
    result = run_pipeline(centroid_graph, calib_volumes(small_dataset), 8, default_policy(), str(tmp_path))
    for name in list(ARTIFACTS.values()) + ['fp32.bin', 'fake.bin']:
        assert os.path.exists(tmp_path / name), name
    assert load_engine(result.paths['engine']).outputs == ('labels',)
    assert serialize_engine(result.plan) == result.engine
    fake = load_model(result.paths['fake'])
    assert len(fake.nodes) == len(result.fake.nodes)
    assert len(load_model(result.paths['model']).nodes) == len(centroid_graph.nodes)


def test_manifest_chains_stage_hashes(tmp_path, centroid_graph, small_dataset):
    run_pipeline(centroid_graph, calib_volumes(small_dataset), 8, default_policy(), str(tmp_path), seed=5)
    manifest = json.loads((tmp_path / 'manifest.json').read_text())
    stages = manifest['stages']
    assert set(stages) == {'calibrate', 'quantize', 'build'}
    assert stages['quantize']['inputs']['calib.json'] == stages['calibrate']['outputs']['calib.json']
    assert stages['build']['inputs'] == stages['quantize']['outputs']
    assert manifest['bits'] == 8 and manifest['seed'] == 5
    assert manifest['policy'] == {'kinds': ['Conv3D'], 'weights': True}
    assert 'failed_stage' not in manifest


def test_pipeline_is_deterministic(tmp_path, centroid_graph, small_dataset):
    volumes = calib_volumes(small_dataset)
    first = run_pipeline(centroid_graph, volumes, 8, default_policy(), str(tmp_path / 'a'))
    second = run_pipeline(centroid_graph, volumes, 8, default_policy(), str(tmp_path / 'b'), threads=2)
    assert first.engine == second.engine
    assert first.manifest['stages'] == second.manifest['stages']
    paths_a, paths_b = artifact_paths(str(tmp_path / 'a')), artifact_paths(str(tmp_path / 'b'))
    for key in ('calib', 'fake', 'fake_weights', 'engine'):
        with open(paths_a[key], 'rb') as a, open(paths_b[key], 'rb') as b:
            assert a.read() == b.read(), key


def test_four_bit_fails_at_build(tmp_path, centroid_graph, small_dataset):
    with pytest.raises(UnsupportedBits) as info:
        run_pipeline(centroid_graph, calib_volumes(small_dataset), 4, parse_policy('conv', 4), str(tmp_path))
    assert info.value.stage == 'build'
    assert str(info.value).startswith('[build] ')
    assert (tmp_path / 'fake.json').exists()
    assert not (tmp_path / 'engine.vqe').exists()
    manifest = json.loads((tmp_path / 'manifest.json').read_text())
    assert manifest['failed_stage'] == 'build'
    assert set(manifest['stages']) == {'calibrate', 'quantize'}


def test_failure_in_calibration_is_tagged(tmp_path, centroid_graph):
    bad = np.zeros((1, 1, 8, 8, 8), dtype=np.float32)
    with pytest.raises(InputShapeMismatch) as info:
        run_pipeline(centroid_graph, [bad], 8, default_policy(), str(tmp_path))
    assert info.value.stage == 'calibrate'
    assert (tmp_path / 'fp32.json').exists()
    assert not (tmp_path / 'calib.json').exists()

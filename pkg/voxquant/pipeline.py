'''
End-to-end post-training quantization: calibrate -> quantize -> build.
'''
import hashlib
import json
import logging
import os
from collections import namedtuple

from . import __version__
from .calib import calibrate_graph
from .config import DEFAULT_PERCENTILE, ENGINE_VERSION
from .engine import build_engine, serialize_engine
from .errors import VoxquantError
from .graph import save_model
from .qdq import insert_qdq

logger = logging.getLogger(__name__)

PipelineResult = namedtuple('PipelineResult', ['table', 'fake', 'plan', 'engine', 'paths', 'manifest'])

# file names inside a pipeline output directory
ARTIFACTS = {'model': 'fp32.json', 'calib': 'calib.json', 'fake': 'fake.json', 'engine': 'engine.vqe',
             'manifest': 'manifest.json'}


def sha256(data):
    return hashlib.sha256(data).hexdigest()


def _file_hash(path):
    with open(path, 'rb') as artifact:
        return sha256(artifact.read())


def _data_hash(volumes):
    digest = hashlib.sha256()
    for volume in volumes:
        digest.update(volume.tobytes())
    return digest.hexdigest()


def artifact_paths(outdir):
    paths = {key: os.path.join(outdir, name) for key, name in ARTIFACTS.items()}
    paths['model_weights'] = paths['model'][:-5] + '.bin'
    paths['fake_weights'] = paths['fake'][:-5] + '.bin'
    return paths


def _write_manifest(path, manifest):
    with open(path, 'w') as manifest_file:
        manifest_file.write(json.dumps(manifest, indent=1, sort_keys=True) + '\n')


def run_pipeline(model, calib_data, bits, policy, outdir, method='minmax', percentile=DEFAULT_PERCENTILE,
                 threads=1, seed=None, batch=1):
    '''
    Writes the FP32 model copy, calibration table, fake-quantized model and
    engine into `outdir` with a manifest of per-stage input/output hashes.
    A failing stage's error carries the stage name; artifacts of earlier
    stages stay on disk.
    '''
    os.makedirs(outdir, exist_ok=True)
    paths = artifact_paths(outdir)
    volumes = list(calib_data)
    save_model(model, paths['model'], paths['model_weights'])
    model_hashes = {'fp32.json': _file_hash(paths['model']), 'fp32.bin': _file_hash(paths['model_weights'])}
    manifest = {
        'tool': 'voxquant', 'version': __version__, 'engine_version': ENGINE_VERSION, 'bits': bits,
        'policy': {'kinds': sorted(policy.quantize_kinds), 'weights': policy.quantize_weights},
        'calib_method': method, 'percentile': percentile if method == 'percentile' else None,
        'seed': seed, 'batch': batch, 'stages': {},
    }
    stage = 'calibrate'
    table = fake = plan = engine = None
    try:
        table = calibrate_graph(model, volumes, policy, bits, method, percentile, threads)
        table.save(paths['calib'])
        manifest['stages']['calibrate'] = {
            'inputs': dict(model_hashes, data=_data_hash(volumes)),
            'outputs': {'calib.json': _file_hash(paths['calib'])}}

        stage = 'quantize'
        fake = insert_qdq(model, table, policy)
        save_model(fake, paths['fake'], paths['fake_weights'])
        manifest['stages']['quantize'] = {
            'inputs': dict(model_hashes, **manifest['stages']['calibrate']['outputs']),
            'outputs': {'fake.json': _file_hash(paths['fake']), 'fake.bin': _file_hash(paths['fake_weights'])}}

        stage = 'build'
        plan = build_engine(fake, batch)
        engine = serialize_engine(plan)
        with open(paths['engine'], 'wb') as engine_file:
            engine_file.write(engine)
        manifest['stages']['build'] = {
            'inputs': manifest['stages']['quantize']['outputs'],
            'outputs': {'engine.vqe': sha256(engine)}}
    except VoxquantError as err:
        err.stage = stage
        manifest['failed_stage'] = stage
        _write_manifest(paths['manifest'], manifest)
        logger.error('pipeline failed at %s: %s', stage, err.message)
        raise
    _write_manifest(paths['manifest'], manifest)
    logger.info('pipeline finished: engine %d bytes, fp32 weights %d bytes', len(engine), len(model.blob))
    return PipelineResult(table, fake, plan, engine, paths, manifest)


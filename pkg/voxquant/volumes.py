'''
Volume files: raw little-endian payload plus a JSON sidecar {shape, dtype}.

A dataset directory holds `vol_NNNN` (F32) and `lab_NNNN` (U16) pairs and a
`dataset.json` describing how it was generated.
'''
import json
import os

import numpy as np

from .errors import MalformedArtifact, MissingArtifact, NonFiniteValue, ShapeMismatch

VOLUME_DTYPES = {'F32': np.dtype('<f4'), 'U16': np.dtype('<u2')}


def save_volume(stem, array, dtype='F32'):
    data = np.ascontiguousarray(array, dtype=VOLUME_DTYPES[dtype])
    with open(stem + '.raw', 'wb') as raw_file:
        raw_file.write(data.tobytes())
    with open(stem + '.json', 'w') as sidecar:
        sidecar.write(json.dumps({'dtype': dtype, 'shape': list(data.shape)}, sort_keys=True) + '\n')


def _read_json(path):
    with open(path) as json_file:
        try:
            return json.load(json_file)
        except ValueError as err:
            raise MalformedArtifact('{} is not valid JSON: {}'.format(path, err)) from None


def load_volume(stem):
    if not os.path.exists(stem + '.json') or not os.path.exists(stem + '.raw'):
        raise MissingArtifact('volume {} is missing its payload or sidecar'.format(stem))
    meta = _read_json(stem + '.json')
    try:
        dtype = VOLUME_DTYPES[meta['dtype']]
        shape = tuple(int(d) for d in meta['shape'])
    except (KeyError, TypeError, ValueError) as err:
        raise MalformedArtifact('volume sidecar {}.json: {!r}'.format(stem, err)) from None
    with open(stem + '.raw', 'rb') as raw_file:
        payload = raw_file.read()
    if len(payload) != int(np.prod(shape)) * dtype.itemsize:
        raise ShapeMismatch('volume {} holds {} bytes, sidecar shape {} needs {}'.format(
            stem, len(payload), shape, int(np.prod(shape)) * dtype.itemsize))
    data = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if meta['dtype'] == 'F32' and not np.isfinite(data).all():
        raise NonFiniteValue('volume {} contains NaN or Inf'.format(stem))
    return data


def save_dataset(directory, samples, meta):
    os.makedirs(directory, exist_ok=True)
    for i, (volume, labels) in enumerate(samples):
        save_volume(os.path.join(directory, 'vol_{:04d}'.format(i)), volume, 'F32')
        save_volume(os.path.join(directory, 'lab_{:04d}'.format(i)), labels, 'U16')
    with open(os.path.join(directory, 'dataset.json'), 'w') as meta_file:
        meta_file.write(json.dumps(dict(meta, count=len(samples)), indent=1, sort_keys=True) + '\n')


def load_dataset(directory):
    '''
    Returns (meta, [(volume, labels), ...]).
    '''
    path = os.path.join(directory, 'dataset.json')
    if not os.path.exists(path):
        raise MissingArtifact('{} is not a dataset directory (no dataset.json)'.format(directory))
    meta = _read_json(path)
    count = meta.get('count') if isinstance(meta, dict) else None
    if not isinstance(count, int) or count < 0:
        raise MalformedArtifact('{} has no valid sample count'.format(path))
    samples = []
    for i in range(count):
        samples.append((load_volume(os.path.join(directory, 'vol_{:04d}'.format(i))),
                        load_volume(os.path.join(directory, 'lab_{:04d}'.format(i)))))
    return meta, samples

import numpy as np
import pytest

from voxquant.engine import FusedConvInt8
from voxquant.executor import execute_int8_engine
from voxquant.oracle import execute_integer_oracle

from helpers import PATTERNS, fake_codes, per_op_code_gaps, random_fixture, random_volume


def engine_env(plan, volume, threads=1):
    seen = {}
    out = execute_int8_engine(plan, volume, threads=threads, observer=lambda name, data: seen.setdefault(name, data))
    return out, seen


def test_engine_matches_oracle_on_random_graphs():
    rng = np.random.default_rng(99)
    patterns = set()
    fused = 0
    for _ in range(120):
        fixture = random_fixture(rng)
        patterns.add(fixture.pattern)
        fused += fixture.plan.count(FusedConvInt8)
        out, seen = engine_env(fixture.plan, fixture.volume)
        expected = execute_integer_oracle(fixture.plan, fixture.volume, keep_all=True)
        for name, data in seen.items():
            assert data.dtype == expected[name].dtype, name
            assert np.array_equal(data, expected[name]), '{} differs in {}'.format(name, fixture.pattern)
        for name in fixture.plan.outputs:
            assert np.array_equal(out[name], expected[name])
    assert patterns == set(PATTERNS)
    assert fused > 120


@pytest.mark.parametrize('pattern', PATTERNS)
def test_oracle_is_deterministic(pattern):
    fixture = random_fixture(np.random.default_rng(5), pattern)
    first = execute_integer_oracle(fixture.plan, fixture.volume, keep_all=True)
    second = execute_integer_oracle(fixture.plan, fixture.volume, keep_all=True)
    assert first.keys() == second.keys()
    for name in first:
        assert np.array_equal(first[name], second[name])


@pytest.mark.parametrize('pattern', PATTERNS)
def test_threads_do_not_change_codes(pattern):
    fixture = random_fixture(np.random.default_rng(6), pattern)
    _, single = engine_env(fixture.plan, fixture.volume)
    _, threaded = engine_env(fixture.plan, fixture.volume, threads=3)
    assert single.keys() == threaded.keys()
    for name in single:
        assert np.array_equal(single[name], threaded[name])


def end_to_end_differences(fixture, volume):
    '''
    Pairs up the codes the fake-quantized graph produces with the engine
    codes of the same name; returns (compared, differing) counts.
    '''
    fake = fake_codes(fixture.fake, volume)
    real = execute_integer_oracle(fixture.plan, volume, keep_all=True)
    compared = differing = 0
    for name in fake.keys() & real.keys():
        diff = np.abs(fake[name].astype(np.int64) - real[name].astype(np.int64))
        compared += diff.size
        differing += int(np.count_nonzero(diff))
    return compared, differing


@pytest.mark.parametrize('bias', [False, True])
def test_each_op_within_one_code_of_fake(bias):
    rng = np.random.default_rng(31 + int(bias))
    patterns = set()
    for _ in range(80):
        fixture = random_fixture(rng, bias=bias)
        patterns.add(fixture.pattern)
        for volume in (fixture.volume, random_volume(rng, fixture.graph.inputs[0].shape[1:])):
            gaps = per_op_code_gaps(fixture.plan, fixture.fake, volume)
            assert gaps, fixture.pattern
            worst = max(gaps, key=gaps.get)
            assert gaps[worst] <= 1, '{} is {} codes off in {} ({})'.format(
                worst, gaps[worst], fixture.pattern, fixture.policy.quantize_kinds)
    assert patterns == set(PATTERNS)


def test_fake_matches_engine_end_to_end():
    rng = np.random.default_rng(33)
    totals = np.zeros(2, dtype=np.int64)
    for _ in range(60):
        fixture = random_fixture(rng, bias=False)
        totals += end_to_end_differences(fixture, fixture.volume)
    compared, differing = totals
    assert compared > 3000
    assert differing / compared <= 1e-2

import random

import pytest
from hypothesis import given, settings, strategies as st

from peros.errors import EmptyMapping, KeyNotFound
from peros.storage.index import (
    build_learned_index,
    lookup,
    lookup_with_stats,
    make_key,
)


def linear_mapping(n=1000):
    return [(i, i * 8) for i in range(n)]


@pytest.fixture(scope="module")
def big_fixture():
    """100,000 uniformly random keys with a hash-map oracle."""
    rng = random.Random(0xF1C5)
    keys = sorted(rng.sample(range(1, 10**12), 100_000))
    mapping = [(k, rng.randrange(1 << 40)) for k in keys]
    oracle = dict(mapping)
    return mapping, oracle


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

def test_perfectly_linear_is_one_segment():
    for eps in (0, 4, 64):
        idx = build_learned_index(linear_mapping(), epsilon=eps)
        assert idx.segment_count == 1
        assert idx.segments[0].slope == pytest.approx(1.0)


def test_three_distinct_slopes_three_segments_at_zero_eps():
    # oracle: direct slope-change count - keys advance by 1, then 5, then 23
    keys = ([10 + i for i in range(50)]
            + [100 + 5 * i for i in range(50)]
            + [1000 + 23 * i for i in range(50)])
    mapping = [(k, k) for k in keys]
    idx = build_learned_index(mapping, epsilon=0)
    assert idx.segment_count == 3


def test_empty_mapping_rejected():
    with pytest.raises(EmptyMapping):
        build_learned_index([], epsilon=4)


def test_non_increasing_keys_rejected():
    with pytest.raises(ValueError):
        build_learned_index([(3, 0), (3, 1)], epsilon=1)
    with pytest.raises(ValueError):
        build_learned_index([(5, 0), (4, 1)], epsilon=1)


def test_negative_epsilon_rejected():
    with pytest.raises(ValueError):
        build_learned_index(linear_mapping(10), epsilon=-1)


def test_segment_fit_invariant_full_scan(big_fixture):
    mapping, _ = big_fixture
    idx = build_learned_index(mapping, epsilon=16)
    starts = [s.start_pos for s in idx.segments] + [len(idx.keys)]
    for seg, (lo, hi) in zip(idx.segments, zip(starts, starts[1:])):
        for pos in range(lo, hi):
            assert abs(seg.predict(idx.keys[pos]) - pos) <= idx.epsilon


def test_big_fixture_compression(big_fixture):
    mapping, _ = big_fixture
    idx = build_learned_index(mapping, epsilon=16)
    # thresholds frozen after first measurement on this generated fixture
    assert idx.segment_count < len(mapping) / 8
    assert idx.index_bytes() < idx.flat_bytes()


# ---------------------------------------------------------------------------
# lookup
# ---------------------------------------------------------------------------

def test_linear_lookup_single_probe():
    idx = build_learned_index(linear_mapping(), epsilon=0)
    for key in (0, 1, 499, 999):
        addr, probes, via_segment = lookup_with_stats(idx, key)
        assert addr == key * 8
        assert probes == 1
        assert via_segment


def test_all_fixture_keys_agree_with_hash_map(big_fixture):
    mapping, oracle = big_fixture
    idx = build_learned_index(mapping, epsilon=16)
    bound = 2 * idx.epsilon + 1
    for key, want in oracle.items():
        addr, probes, via_segment = lookup_with_stats(idx, key)
        assert addr == want
        if via_segment:
            assert probes <= bound
    # every present key is served by its segment, never the fallback
    assert all(lookup_with_stats(idx, k)[2] for k in list(oracle)[:100])


def test_absent_key_not_found(big_fixture):
    mapping, oracle = big_fixture
    idx = build_learned_index(mapping, epsilon=16)
    absent = 10**12 + 7
    assert absent not in oracle
    with pytest.raises(KeyNotFound):
        lookup(idx, absent)


def test_file_block_key_space():
    mapping = sorted(
        (make_key(f, b), f * 1000 + b) for f in range(3) for b in range(0, 50, 7)
    )
    idx = build_learned_index(mapping, epsilon=2)
    for key, addr in mapping:
        assert lookup(idx, key) == addr


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(min_value=0, max_value=2**53 - 1), min_size=1,
               max_size=300),
       st.integers(min_value=0, max_value=8))
def test_lookup_exactness_property(keys, eps):
    mapping = [(k, k ^ 0xABCD) for k in sorted(keys)]
    idx = build_learned_index(mapping, epsilon=eps)
    for k, addr in mapping:
        assert lookup(idx, k) == addr

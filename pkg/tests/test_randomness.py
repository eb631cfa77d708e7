import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from perfectfk import randomness as rnd
from perfectfk.errors import DomainError

keys = st.lists(st.integers(1, 2**31), min_size=1, max_size=6).map(tuple)


@given(seed=st.integers(0, 2**64 - 1), index=st.integers(0, 10**6), key=keys, sub=st.integers(0, 100))
def test_deterministic_and_open_unit_interval(seed, index, key, sub):
    a = rnd.KeyedStream(seed, index).uniform_at("V", key, sub)
    b = rnd.KeyedStream(seed, index).uniform_at("V", key, sub)
    assert a == b
    assert 0.0 < a < 1.0


def test_tags_are_separate_streams():
    s = rnd.KeyedStream(7, 3)
    collisions = 0
    for i in range(1, 20001):
        collisions += s.uniform_at("V", (1, i)) == s.uniform_at("W", (1, i))
    assert collisions == 0


def test_ks_uniformity():
    s = rnd.KeyedStream(11, 0)
    salt = s.salt("V")
    draws = [rnd.unit(salt, rnd.key_digest((i,))) for i in range(1, 200_001)]
    res = stats.kstest(draws, "uniform")
    assert res.pvalue > 1e-3


def test_different_seeds_and_indices_differ():
    vals = {rnd.KeyedStream(s, i).uniform_at("accept", 1) for s in range(30) for i in range(30)}
    assert len(vals) == 900


def test_permutation_identity_for_singleton():
    assert rnd.permutation_at(rnd.KeyedStream(0), 5, 1) == (0,)


def test_permutation_uniform_over_s3():
    s = rnd.KeyedStream(3, 1)
    counts = Counter(rnd.permutation_at(s, k, 3) for k in range(1, 60_001))
    assert set(counts) == set(itertools.permutations(range(3)))
    expected = 10_000
    se = (60_000 * (1 / 6) * (5 / 6)) ** 0.5
    for c in counts.values():
        assert abs(c - expected) < 4 * se


@given(seed=st.integers(0, 2**32), gen=st.integers(1, 1000), size=st.integers(1, 40))
def test_permutation_is_permutation_and_repeatable(seed, gen, size):
    s = rnd.KeyedStream(seed)
    p = rnd.permutation_at(s, gen, size)
    assert sorted(p) == list(range(size))
    assert p == rnd.permutation_at(rnd.KeyedStream(seed), gen, size)


def test_permutation_size_zero_rejected():
    with pytest.raises(DomainError):
        rnd.permutation_at(rnd.KeyedStream(0), 1, 0)


def test_transition_uniforms_first_element_and_prefix():
    s = rnd.KeyedStream(5, 2)
    key = (1, 3, 2)
    five = s.transition_uniforms(key, 5)
    assert five[0] == s.uniform_at("V", key, 0)
    assert s.transition_uniforms(key, 2) == five[:2]
    assert rnd.transition_uniforms(s, key, 5) == five


@given(seed=st.integers(0, 2**40), key=keys, n=st.integers(0, 30), m=st.integers(0, 30))
def test_prefix_stability(seed, key, n, m):
    s = rnd.KeyedStream(seed)
    a, b = s.transition_uniforms(key, n), s.transition_uniforms(key, m)
    k = min(n, m)
    assert a[:k] == b[:k]


def test_distinct_keys_uncorrelated():
    s = rnd.KeyedStream(9)
    x = np.array(s.transition_uniforms((1, 2), 100_000))
    y = np.array(s.transition_uniforms((1, 3), 100_000))
    r = np.corrcoef(x, y)[0, 1]
    assert abs(r) < 4 / np.sqrt(len(x))


def test_spine_digests_are_all_ones_keys():
    ds = rnd.spine_digests(5)
    for n in range(1, 6):
        assert ds[n - 1] == rnd.key_digest((1,) * n)
    assert rnd.key_digest(4) == rnd.key_digest((4,))


@pytest.mark.parametrize("bad", [(), (0,), (2**32,)])
def test_bad_keys(bad):
    with pytest.raises(DomainError):
        rnd.key_digest(bad)


def test_bad_stream_arguments():
    with pytest.raises(DomainError):
        rnd.KeyedStream(0, -1)
    with pytest.raises(DomainError):
        rnd.KeyedStream(0).salt("nope")


def test_mix64_is_injective_on_sample():
    vals = [rnd.mix64(i) for i in range(100_000)]
    assert len(set(vals)) == len(vals)

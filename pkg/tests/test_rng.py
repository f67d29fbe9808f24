import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import PHILOX_KAT, philox_scalar

from pgflow.rng import (
    box_muller,
    philox4x32,
    seed_key,
    standard_normals,
    uniform_points,
    uniforms52,
)

u32 = st.integers(0, 2**32 - 1)


@pytest.mark.parametrize("counter,key,expected", PHILOX_KAT)
def test_known_answer_vectors(counter, key, expected):
    np.testing.assert_array_equal(philox4x32(counter, key), np.array(expected, dtype=np.uint32))


def test_known_answer_vectors_batched():
    ctr = np.array([c for c, _, _ in PHILOX_KAT[:1]] * 3, dtype=np.uint32)
    out = philox4x32(ctr, PHILOX_KAT[0][1])
    assert out.shape == (3, 4)
    np.testing.assert_array_equal(out, np.tile(PHILOX_KAT[0][2], (3, 1)))


@given(st.tuples(u32, u32, u32, u32), st.tuples(u32, u32))
def test_vectorised_block_matches_the_scalar_oracle(counter, key):
    assert tuple(int(w) for w in philox4x32(counter, key)) == philox_scalar(counter, key)


@given(st.integers(0, 2**64 - 1))
def test_seed_splits_into_two_words(seed):
    k = seed_key(seed)
    assert int(k[0]) + (int(k[1]) << 32) == seed


@pytest.mark.parametrize("bad", [-1, 2**64])
def test_seed_range(bad):
    with pytest.raises(ValueError):
        seed_key(bad)


def test_uniforms_stay_in_the_open_interval():
    extremes = np.array([[0, 0, 0, 0], [2**32 - 1] * 4], dtype=np.uint32)
    u = uniforms52(extremes)
    assert np.all(u > 0) and np.all(u < 1)
    assert u[0, 0] == 2.0**-53 and u[1, 0] == 1 - 2.0**-53


@given(st.integers(0, 2**63))
def test_uniform_points_range(seed):
    x = uniform_points(seed, np.arange(64), 3)
    assert x.shape == (64, 3) and np.all((x > 0) & (x < 1))


def test_normal_moments():
    z = standard_normals(7, np.arange(2000), np.arange(25), 3).reshape(-1)
    n = z.size
    assert abs(z.mean()) < 5 / np.sqrt(n)
    assert abs(z.var() - 1) < 5 * np.sqrt(2 / n)
    assert abs(np.mean(z**3)) < 5 * np.sqrt(15 / n)
    assert abs(np.mean(z**4) - 3) < 5 * np.sqrt(96 / n)


def test_box_muller_on_a_known_pair():
    z = box_muller(np.array([np.exp(-0.5), 0.25]))
    np.testing.assert_allclose(z, [0.0, 1.0], atol=1e-15)


def test_draws_do_not_depend_on_request_order():
    paths, steps = np.arange(20), np.arange(12)
    full = standard_normals(3, paths, steps, 3)
    rev = standard_normals(3, paths[::-1], steps[::-1], 3)
    np.testing.assert_array_equal(full, rev[::-1, ::-1])
    single = standard_normals(3, [13], [5], 3)
    np.testing.assert_array_equal(single[0, 0], full[13, 5])


def test_streams_and_seeds_are_independent():
    a = standard_normals(1, np.arange(10), np.arange(4), 2)
    assert not np.array_equal(a, standard_normals(2, np.arange(10), np.arange(4), 2))
    assert not np.array_equal(a, standard_normals(1, np.arange(10), np.arange(4), 2, stream=5))

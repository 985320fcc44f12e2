import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from mcdirichlet import rng

MASK = (1 << 64) - 1


def splitmix_ref(z):
    # plain-integer reference of the mixer
    z = (z + 0x9E3779B97F4A7C15) & MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


@given(st.integers(0, MASK))
def test_splitmix_matches_integer_reference(z):
    assert int(rng.splitmix64(np.uint64(z))) == splitmix_ref(z)


def test_splitmix_known_stream():
    # first outputs of the canonical splitmix64 generator seeded with 0
    state, outs = 0, []
    for _ in range(3):
        outs.append(int(rng.splitmix64(np.uint64(state))))
        state = (state + 0x9E3779B97F4A7C15) & MASK
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


@given(st.integers(0, 2**63), st.integers(0, 10**9), st.integers(0, 10**6), st.integers(0, 15))
def test_uniform_is_pure_and_open(seed, path, counter, slot):
    k = rng.path_key(seed, path)
    a = rng.uniform(k, counter, slot)
    b = rng.uniform(k, counter, slot)
    assert a == b
    assert 0.0 < a < 1.0


def test_distinct_paths_give_distinct_keys():
    keys = rng.path_key(5, np.arange(100_000))
    assert np.unique(keys).size == keys.size


def test_normals_moments():
    keys = rng.path_key(11, np.arange(200_000))
    z = rng.normals(keys, 3, 3)
    assert z.shape == (200_000, 3)
    assert np.all(np.abs(z.mean(axis=0)) < 0.01)
    assert np.all(np.abs(z.var(axis=0) - 1.0) < 0.015)
    assert abs(np.corrcoef(z[:, 0], z[:, 1])[0, 1]) < 0.01


def test_substeps_share_the_fine_path():
    keys = rng.path_key(3, np.arange(50))
    coarse = rng.step_normals(keys, 4, 3, substeps=4)
    fine = sum(rng.normals(keys, 16 + i, 3) for i in range(4)) / 2.0
    np.testing.assert_array_equal(coarse, fine)

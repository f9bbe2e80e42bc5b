import numpy as np
import pytest

from datlab.rng import Rng, derive_seed


def test_same_seed_same_stream():
    a, b = Rng(123), Rng(123)
    assert [a.next_u64() for _ in range(64)] == [b.next_u64() for _ in range(64)]


def test_known_values_frozen():
    # Frozen splitmix64 outputs for seed 0 (stream contract; any change here
    # silently invalidates every recorded run).
    r = Rng(0)
    assert [r.next_u64() for _ in range(3)] == [
        16294208416658607535,
        7960286522194355700,
        487617019471545679,
    ]


def test_float_derivation_range_and_grid():
    r = Rng(7)
    for _ in range(1000):
        x = r.next_float()
        assert 0.0 <= x < 1.0
        # high-24-bit derivation: every value is a multiple of 2^-24
        assert (x * 2**24) == int(x * 2**24)


def test_randint_unbiased_small_range():
    r = Rng(11)
    counts = [0] * 10
    for _ in range(20000):
        counts[r.randint(10)] += 1
    for c in counts:
        assert abs(c - 2000) < 200


def test_randint_rejects_bad_n():
    with pytest.raises(ValueError):
        Rng(0).randint(0)


def test_sample_distinct():
    r = Rng(3)
    for k in (1, 5, 128):
        got = r.sample_distinct(128, k)
        assert len(got) == k
        assert len(set(got)) == k
        assert all(0 <= x < 128 for x in got)
    with pytest.raises(ValueError):
        r.sample_distinct(4, 5)


def test_fill_matches_scalar_streams():
    a, b = Rng(99), Rng(99)
    assert list(b.fill_u64(257)) == [a.next_u64() for _ in range(257)]
    assert a.state == b.state

    a, b = Rng(5), Rng(5)
    assert list(b.fill_uniform(100)) == [a.next_float() for _ in range(100)]

    a, b = Rng(17), Rng(17)
    vec = b.fill_normal(64)
    scalar = np.array([a.normal() for _ in range(64)])
    assert np.array_equal(vec, scalar)
    assert a.state == b.state


def test_derive_seed_tag_separation():
    s = derive_seed(42, "train")
    assert s != derive_seed(42, "eval")
    assert s != derive_seed(43, "train")
    assert s == derive_seed(42, "train")
    assert derive_seed(1, "eval", 10) != derive_seed(1, "eval", 11)


def test_fork_independent():
    r = Rng(8)
    c1 = r.fork("a")
    c2 = r.fork("a")
    assert c1.next_u64() == c2.next_u64()
    assert r.fork("b").next_u64() != r.fork("a").next_u64()

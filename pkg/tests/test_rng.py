import numpy as np
import pytest

from qevents.rng import RngStream


def test_same_stream_same_numbers():
    a = RngStream(42, 7).generator().random(5)
    b = RngStream(42, 7).generator().random(5)
    np.testing.assert_array_equal(a, b)


def test_streams_and_seeds_differ():
    base = RngStream(42, 0).generator().random(4)
    assert not np.array_equal(base, RngStream(42, 1).generator().random(4))
    assert not np.array_equal(base, RngStream(43, 0).generator().random(4))


def test_full_u64_range_accepted():
    RngStream(2**64 - 1).generator().random()
    with pytest.raises(ValueError):
        RngStream(2**64)
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(0, -1)


def test_streams_look_independent():
    draws = np.array([RngStream(5, i).generator().random() for i in range(4000)])
    # mean and lag-1 correlation of the first draw across streams
    assert abs(draws.mean() - 0.5) < 4 * np.sqrt(1 / 12 / draws.size)
    assert abs(np.corrcoef(draws[:-1], draws[1:])[0, 1]) < 4 / np.sqrt(draws.size)

import numpy as np
import pytest

from confauction import rng


def test_same_path_same_numbers():
    a = rng.stream(7, rng.MISREPORT, 3, 1).random(5)
    b = rng.stream(7, rng.MISREPORT, 3, 1).random(5)
    assert np.array_equal(a, b)


def test_paths_are_independent_streams():
    draws = {p: rng.stream(7, *p).random(4).tobytes()
             for p in [(0,), (1,), (3, 0, 0), (3, 0, 1), (3, 1, 0)]}
    assert len(set(draws.values())) == len(draws)
    assert not np.array_equal(rng.stream(1, 0).random(4), rng.stream(2, 0).random(4))


def test_path_validation():
    with pytest.raises(ValueError):
        rng.stream(0, 1, 2, 3, 4)
    with pytest.raises(ValueError):
        rng.stream(0, -1)

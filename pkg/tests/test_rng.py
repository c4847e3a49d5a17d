from __future__ import annotations

import numpy as np
import pytest

from pame.rng import Purpose, stream


def test_same_key_same_stream():
    a = stream(7, Purpose.BATCH, 3, 1).random(5)
    b = stream(7, Purpose.BATCH, 3, 1).random(5)
    assert np.array_equal(a, b)


@pytest.mark.parametrize(
    "other",
    [
        (8, Purpose.BATCH, 3, 1),
        (7, Purpose.NEIGHBORS, 3, 1),
        (7, Purpose.BATCH, 1, 3),
        (7, Purpose.BATCH, 3),
    ],
)
def test_different_keys_differ(other):
    a = stream(7, Purpose.BATCH, 3, 1).random(5)
    assert not np.array_equal(a, stream(*other).random(5))


def test_request_order_is_irrelevant():
    first = [stream(1, Purpose.COORDINATES, 0, i, 2).random() for i in range(4)]
    second = [stream(1, Purpose.COORDINATES, 0, i, 2).random() for i in reversed(range(4))]
    assert first == second[::-1]


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        stream(-1, Purpose.DATA)

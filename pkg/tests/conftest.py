import numpy as np
import pytest

from qkdpqc.timetag import Party, TagStream


def stream(ticks, party=Party.ALICE, det=None):
    ticks = np.asarray(ticks, dtype=np.int64)
    det = (1 if party is Party.ALICE else 5) if det is None else det
    return TagStream.from_unsorted(ticks, np.full(ticks.size, det, np.uint8), party)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

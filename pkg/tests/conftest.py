import numpy as np
import pytest

from sfdesim.segments import Segment, SegmentGrid


def make_segment(values, tau):
    """Segment from a list of per-node tuples/scalars over [-tau, 0]."""
    arr = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if arr.shape[0] == 1 and not hasattr(values[0], "__len__"):
        arr = arr.T
    n_lags = arr.shape[0] - 1
    grid = SegmentGrid(tau=tau, n_lags=n_lags, dim=arr.shape[1])
    return Segment(grid, arr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

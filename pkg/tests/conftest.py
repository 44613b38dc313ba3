import numpy as np
import pytest

from visyield import FailureSet, Testbench

Testbench.__test__ = False  # name collides with pytest's collector


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)


def make_failure_set(points, log_weights=None, reweight=False) -> FailureSet:
    """Archive from raw points; weights default to the standard-normal
    log density, matching what the estimators store."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    fs = FailureSet(points.shape[1], reweight_by_generator=reweight)
    fs.extend(points, log_weights=log_weights)
    return fs

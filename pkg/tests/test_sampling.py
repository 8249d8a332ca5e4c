import numpy as np
import pytest

from molre.rng import RngStream
from molre.sampling import expand_indices, repeat_factors


def test_common_class_gets_factor_one():
    y = np.zeros((100, 2))
    y[:50, 0] = 1.0  # f=0.5 >= t=0.01
    r = repeat_factors(y, 0.01)
    assert np.all(r == 1.0)


def test_rare_class_gets_sqrt_ratio():
    y = np.zeros((100, 1))
    y[:4, 0] = 1.0  # f=0.04
    r = repeat_factors(y, 0.16)
    # sqrt(0.16/0.04) = 2
    assert np.allclose(r[:4], 2.0)
    assert np.all(r[4:] == 1.0)


def test_sample_takes_max_over_its_classes():
    y = np.zeros((100, 2))
    y[:25, 0] = 1.0          # f=0.25 -> r=2 at t=1.0
    y[:1, 1] = 1.0           # f=0.01 -> r=10 at t=1.0
    r = repeat_factors(y, 1.0)
    assert abs(r[0] - 10.0) < 1e-12      # carries both, max wins
    assert abs(r[1] - 2.0) < 1e-12
    assert r[99] == 1.0                  # no positives


def test_unlabeled_and_absent_classes():
    y = np.zeros((10, 3))
    r = repeat_factors(y, 0.5)
    assert np.all(r == 1.0)


def test_threshold_validation():
    y = np.zeros((4, 1))
    for bad in (0.0, -1.0, 1.5):
        with pytest.raises(ValueError):
            repeat_factors(y, bad)


def test_expand_integer_factors_exact():
    idx = expand_indices(np.array([1.0, 3.0, 2.0]), RngStream(0))
    assert np.array_equal(idx, [0, 1, 1, 1, 2, 2])


def test_expand_keeps_indices_sorted_and_complete():
    r = np.array([1.7, 1.0, 2.3])
    idx = expand_indices(r, RngStream(1))
    counts = np.bincount(idx, minlength=3)
    assert counts[1] == 1
    assert counts[0] in (1, 2) and counts[2] in (2, 3)


def test_stochastic_rounding_mean_matches_factor():
    # empirical mean multiplicity within +-0.05 of r over 10k draws
    r = np.array([1.37, 2.82, 1.0, 4.5])
    total = np.zeros(4)
    root = RngStream(42)
    for e in range(10_000):
        idx = expand_indices(r, root.child("epoch", e))
        total += np.bincount(idx, minlength=4)
    mean = total / 10_000
    assert np.abs(mean - r).max() < 0.05


def test_expand_is_deterministic_per_stream():
    r = np.array([1.5, 2.5])
    a = expand_indices(r, RngStream(7, 3))
    b = expand_indices(r, RngStream(7, 3))
    assert np.array_equal(a, b)

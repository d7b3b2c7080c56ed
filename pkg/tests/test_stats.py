import math

import pytest
from hypothesis import given, strategies as st

from boundary_sim import errors
from boundary_sim.stats import SampleSet, improvement, log2_histogram, nearest_rank, summarize

import oracles


def test_p99_of_one_to_hundred():
    assert summarize(list(range(1, 101))).p99 == 99


def test_p99_small_sample_is_max():
    assert summarize([5, 1, 9]).p99 == 9


def test_constant_samples():
    s = summarize([7] * 50)
    assert (s.mean, s.stdev, s.cv) == (7.0, 0.0, 0.0)


def test_population_stdev():
    assert summarize([2, 4, 4, 4, 5, 5, 7, 9]).stdev == 2.0


def test_discard_worst_drops_largest():
    s = summarize([1, 2, 3, 1000], discard_worst=1)
    assert (s.max, s.n) == (3, 3)


def test_discard_everything():
    with pytest.raises(errors.EmptyAfterDiscard):
        summarize([1, 2], discard_worst=2)


def test_negative_discard_rejected():
    with pytest.raises(ValueError):
        summarize([1], discard_worst=-1)


def test_histogram_buckets():
    assert log2_histogram([0, 1, 2, 3, 4, 1023, 1024]) == ((-1, 1), (0, 1), (1, 2), (2, 1), (9, 1), (10, 1))


def test_sample_set_accepted():
    s = summarize(SampleSet([3, 1, 2], "trap", "micro:getppid"))
    assert (s.min, s.max, s.mean) == (1, 3, 2.0)


def test_cdf_ends_at_one():
    s = summarize([4, 4, 1, 9])
    assert s.cdf == ((1, 0.25), (4, 0.75), (9, 1.0))


def test_improvement():
    assert improvement(200.0, 50.0) == 0.75
    with pytest.raises(ZeroDivisionError):
        improvement(0.0, 1.0)


values = st.lists(st.integers(0, 10**9), min_size=1, max_size=300)


@given(values)
def test_summary_invariants(vals):
    s = summarize(vals)
    assert s.min <= s.mean + 1e-6 and s.mean <= s.max + 1e-6
    assert s.p99 in vals
    assert s.p99 == oracles.nearest_rank_p99(vals)
    assert sum(c for _, c in s.histogram) == s.n == len(vals)
    assert s.stdev >= 0
    assert math.isclose(s.cdf[-1][1], 1.0)


@given(values, st.integers(0, 20))
def test_discard_keeps_smallest(vals, k):
    if k >= len(vals):
        with pytest.raises(errors.EmptyAfterDiscard):
            summarize(vals, discard_worst=k)
        return
    s = summarize(vals, discard_worst=k)
    assert s.n == len(vals) - k
    assert s.max == sorted(vals)[len(vals) - k - 1]


@given(st.lists(st.integers(0, 1000), min_size=1), st.floats(0.01, 1.0))
def test_nearest_rank_is_a_member(vals, q):
    assert nearest_rank(sorted(vals), q) in vals

import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cqqkey.exceptions import ValidationError
from cqqkey.typicality import (TypeClass, count_types, delta_typical, enumerate_types, is_typical_type,
                               tail_bound_check, type_class_size, type_of)


def test_enumeration_examples():
    assert [t.counts for t in enumerate_types(2, 2)] == [(2, 0), (1, 1), (0, 2)] or \
        sorted(t.counts for t in enumerate_types(2, 2)) == [(0, 2), (1, 1), (2, 0)]
    assert len(enumerate_types(1, 5)) == 5
    assert len(enumerate_types(4, 3)) == 15 <= 5 ** 3


@pytest.mark.parametrize("n", range(0, 13))
@pytest.mark.parametrize("k", range(1, 5))
def test_type_count_is_binomial(n, k):
    if n == 0:
        return
    assert len(enumerate_types(n, k)) == math.comb(n + k - 1, k - 1) == count_types(n, k)


def test_type_of_and_sizes():
    t = type_of([0, 1])
    assert t.counts == (1, 1) and t.size() == 2
    assert type_of([1, 1, 1], 2).size() == 1
    assert type_class_size((2, 2)) == 6


def test_type_sizes_partition_sequences():
    # brute-force oracle: group every sequence by its counts
    n, k = 5, 3
    tally = {}
    for seq in product(range(k), repeat=n):
        c = tuple(np.bincount(seq, minlength=k))
        tally[c] = tally.get(c, 0) + 1
    for t in enumerate_types(n, k):
        assert t.size() == tally[t.counts]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_type_masses_sum_to_one(n, k, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(k))
    total = math.fsum(t.probability(p) for t in enumerate_types(n, k))
    assert abs(total - 1.0) <= 1e-12


def test_typical_examples():
    ts = delta_typical([0.5, 0.5], 0.25, 4)
    assert ts.exact_probability() == pytest.approx(14 / 16, abs=1e-15)
    only = delta_typical([1.0, 0.0], 0.3, 3)
    assert (0, 0, 0) in only and (0, 0, 1) not in only
    assert delta_typical([0.3, 0.7], 1.0, 6).exact_probability() == pytest.approx(1.0)


def test_tail_examples():
    rep = tail_bound_check([0.5, 0.5], 0.25, 4)
    assert rep["exact_tail"] == pytest.approx(0.125, abs=1e-15)
    assert rep["bound"] == pytest.approx(2 ** (-4 * (2 / math.log(2)) * 0.0625), abs=1e-12)
    # 2^(-(2/ln 2) x) = e^(-2x)
    assert rep["bound"] == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert rep["holds"]
    rep = tail_bound_check([0.2, 0.3, 0.5], 1.0, 5)
    assert rep["exact_tail"] == 0.0 and rep["holds"]


@pytest.mark.parametrize("p", [(0.5, 0.5), (0.8, 0.2)])
@pytest.mark.parametrize("delta", [0.1, 0.2])
@pytest.mark.parametrize("n", range(4, 13))
def test_tail_grid(p, delta, n):
    assert tail_bound_check(p, delta, n)["holds"]


def test_typical_support_clause():
    t = TypeClass((3, 1))
    assert not is_typical_type(t, [1.0, 0.0], 1.0)


def test_invalid():
    with pytest.raises(ValidationError):
        delta_typical([0.5, 0.5], 0.0, 3)
    with pytest.raises(ValidationError):
        TypeClass((-1, 2))

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fabir.errors import ConfigError
from fabir.oracles import oracle_encoding
from fabir.positional import encode, frequencies


def test_row_zero_alternates_zero_one():
    np.testing.assert_array_equal(encode(3, 8)[0], [0, 1] * 4)


def test_width_two_row_one():
    np.testing.assert_allclose(encode(2, 2)[1], [0.841471, 0.540302], atol=5e-7)


def test_frequencies_start_at_one_and_decay():
    f = frequencies(100)
    assert f[0] == 1.0 and np.all(np.diff(f) < 0)
    assert math.isclose(f[-1], 10000 ** (-98 / 100))


def test_rows_pairwise_distinct_at_width_100():
    E = encode(512, 100)
    sq = (E * E).sum(1)
    dist2 = sq[:, None] + sq[None, :] - 2 * E @ E.T
    np.fill_diagonal(dist2, np.inf)
    assert np.sqrt(np.maximum(dist2, 0)).min() > 1e-6


def test_matches_scalar_transcription():
    np.testing.assert_allclose(encode(7, 10), oracle_encoding(7, 10), atol=1e-12)


@pytest.mark.parametrize("d", [0, 3, -2])
def test_rejects_bad_width(d):
    with pytest.raises(ConfigError):
        encode(4, d)


def test_rejects_empty_length():
    with pytest.raises(ConfigError):
        encode(0, 4)


def test_cached_matrix_is_not_mutable_through_callers():
    a = encode(5, 4)
    a[0, 0] = 42.0
    assert encode(5, 4)[0, 0] == 0.0


@given(st.integers(1, 60), st.integers(1, 30).map(lambda k: 2 * k))
def test_entries_bounded_and_pairs_are_sin_cos(length, d):
    E = encode(length, d)
    assert E.shape == (length, d) and np.all(np.abs(E) <= 1.0)
    np.testing.assert_allclose(E[:, 0::2] ** 2 + E[:, 1::2] ** 2, 1.0, atol=1e-12)
    i, k = length - 1, (d // 2) - 1
    f = 10000.0 ** (-2.0 * k / d)
    np.testing.assert_allclose(E[i, 2 * k:2 * k + 2], [math.sin(i * f), math.cos(i * f)], atol=1e-12)

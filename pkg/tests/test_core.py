import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cond2st.core import (
    InvalidData,
    PairedData,
    PooledData,
    SplitTooSmall,
    TestOutcome,
    balance,
    make_rng,
    pool,
    split_paired,
)


def _data(n1, n2, p=2, seed=0):
    g = make_rng(seed, 99)
    return PairedData(g.standard_normal((n1, p)), g.standard_normal(n1), g.standard_normal((n2, p)), g.standard_normal(n2))


class TestMakeRng:
    def test_same_pair_same_draws(self):
        a = make_rng(42, 0).random(100)
        b = make_rng(42, 0).random(100)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        assert not np.array_equal(make_rng(42, 0).random(100), make_rng(42, 1).random(100))

    def test_first_uniform_in_unit_interval(self):
        u = make_rng(42, 0).random()
        assert 0.0 <= u < 1.0

    def test_streams_look_independent(self):
        a = make_rng(7, 0).standard_normal(20000)
        b = make_rng(7, 1).standard_normal(20000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(20000)

    @pytest.mark.parametrize("seed,stream", [(-1, 0), (0, 2**64)])
    def test_out_of_range(self, seed, stream):
        with pytest.raises(ValueError):
            make_rng(seed, stream)


class TestPairedData:
    def test_needs_two_rows(self):
        with pytest.raises(InvalidData):
            _data(1, 3)

    def test_column_mismatch(self):
        with pytest.raises(InvalidData):
            PairedData(np.zeros((3, 2)), np.zeros(3), np.zeros((3, 3)), np.zeros(3))

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite(self, bad):
        x = np.zeros((3, 2))
        x[1, 1] = bad
        with pytest.raises(InvalidData):
            PairedData(x, np.zeros(3), np.zeros((3, 2)), np.zeros(3))

    def test_length_mismatch(self):
        with pytest.raises(InvalidData):
            PairedData(np.zeros((3, 2)), np.zeros(4), np.zeros((3, 2)), np.zeros(3))

    def test_arrays_are_read_only(self, paired):
        with pytest.raises(ValueError):
            paired.x1[0, 0] = 1.0

    def test_joint_features(self, paired):
        v = paired.v1()
        assert v.shape == (paired.n1, paired.p + 1)
        np.testing.assert_array_equal(v[:, -1], paired.y1)


class TestSplit:
    def test_exact_halving(self, rng):
        a, b = split_paired(_data(4, 4), 0.5, rng)
        assert (a.n1, a.n2, b.n1, b.n2) == (2, 2, 2, 2)

    def test_eight_two(self, rng):
        a, b = split_paired(_data(10, 10), 0.8, rng)
        assert (a.n1, a.n2) == (8, 8)
        assert (b.n1, b.n2) == (2, 2)

    def test_too_small(self, rng):
        d = _data(2, 4)
        with pytest.raises(SplitTooSmall):
            split_paired(d, 0.4, rng)

    def test_bad_ratio(self, rng):
        with pytest.raises(ValueError):
            split_paired(_data(4, 4), 1.0, rng)

    @settings(max_examples=40, deadline=None)
    @given(n1=st.integers(2, 30), n2=st.integers(2, 30), ratio=st.floats(0.05, 0.95), seed=st.integers(0, 1000))
    def test_disjoint_and_exhaustive(self, n1, n2, ratio, seed):
        d = _data(n1, n2, seed=seed)
        try:
            a, b = split_paired(d, ratio, make_rng(seed, 1))
        except SplitTooSmall:
            k1, k2 = int(np.floor(ratio * n1)), int(np.floor(ratio * n2))
            assert min(k1, k2, n1 - k1, n2 - k2) < 1
            return
        assert a.n1 == int(np.floor(ratio * n1)) and a.n1 + b.n1 == n1
        assert a.n2 == int(np.floor(ratio * n2)) and a.n2 + b.n2 == n2
        # y values are continuous draws, so they identify rows
        np.testing.assert_array_equal(np.sort(np.concatenate([a.y1, b.y1])), np.sort(d.y1))
        np.testing.assert_array_equal(np.sort(np.concatenate([a.y2, b.y2])), np.sort(d.y2))


class TestPool:
    def test_labels(self):
        pd = pool(_data(2, 3))
        np.testing.assert_array_equal(pd.z, [1, 1, 2, 2, 2])

    def test_round_trip(self, paired):
        pd = pool(paired)
        x, y = pd.filter(1)
        np.testing.assert_array_equal(x, paired.x1)
        np.testing.assert_array_equal(y, paired.y1)
        x, y = pd.filter(2)
        np.testing.assert_array_equal(x, paired.x2)
        np.testing.assert_array_equal(y, paired.y2)

    def test_needs_both_groups(self):
        with pytest.raises(InvalidData):
            PooledData(np.zeros((3, 1)), np.zeros(3), np.ones(3))

    def test_bad_label(self):
        with pytest.raises(InvalidData):
            PooledData(np.zeros((3, 1)), np.zeros(3), [1, 2, 3])


def test_balance_subsamples_larger(paired, rng):
    b, diag = balance(paired, rng)
    assert b.n1 == b.n2 == 30
    assert diag["balanced_from"] == (40, 30)
    assert set(b.y1).issubset(set(paired.y1))


def test_forced_accept_contract():
    out = TestOutcome.forced_accept("cit", 0.05, "bad event", bad_event=True)
    assert out.p_value == 1.0 and not out.reject
    assert out.diagnostics["forced_accept"] and out.diagnostics["bad_event"]

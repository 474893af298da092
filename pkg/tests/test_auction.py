import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uavfed.auction import (NO_WINNER, BidMatrix, UtilityParams, modified_utility,
                            potential_value, resolve, run_auction, sp_utilities, sp_utility,
                            total_delay, verify)
from uavfed.env import ChannelParams, avg_rate_bps

COMM_AT_80_51 = 2 * 0.8727646225645279  # 2e7 bits at the 80.51 dB rate


def params(N, cells=1, T_pen=100.0):
    return UtilityParams(np.full((N, cells), 381.0), np.full((N, cells), 3000.0), T_pen, 50.0)


def single(committed, actual=None, win_idx=None):
    c = np.asarray(committed, dtype=float).reshape(-1, 1, 1)
    a = c if actual is None else np.asarray(actual, dtype=float).reshape(-1, 1, 1)
    return run_auction(c, a)


class TestDelay:
    def test_example(self):
        se = avg_rate_bps(1.0, 80.51, ChannelParams())
        d = total_delay(100e9, 1e6, 2e10, 2e7, spectral_eff=se)
        assert d == pytest.approx(0.2 + COMM_AT_80_51, rel=1e-9)
        assert d == pytest.approx(1.9456, abs=1e-3)

    def test_zero_demand_and_no_bid(self):
        ch = ChannelParams()
        assert total_delay(0.0, 0.0, 0.0, 0.0, ch) == 0.0
        assert total_delay(0.0, 1e6, 1e9, 1e6, ch) == np.inf

    def test_halving(self):
        ch = ChannelParams()
        assert total_delay(2e9, 2e6, 1e10, 1e7, ch) == pytest.approx(
            total_delay(1e9, 1e6, 1e10, 1e7, ch) / 2)

    def test_needs_channel(self):
        with pytest.raises(TypeError):
            total_delay(1.0, 1.0, 1.0, 1.0)


class TestResolve:
    def test_examples(self):
        assert resolve([0.5, 0.3, 0.9])[0] == 1
        assert resolve([0.3, 0.3])[0] == 0
        w, flags = resolve([np.inf, np.inf])
        assert w is None and flags.sum() == 0

    def test_verify(self):
        assert verify(1.0, 1.0) == 1
        assert verify(1.0, 1.2) == 0
        assert verify(1.0, 0.8) == 1

    @given(st.lists(st.floats(0.01, 100.0), min_size=2, max_size=6),
           st.floats(0.1, 10.0), st.floats(0.0, 5.0))
    def test_affine_invariance(self, d, a, b):
        assert resolve(d)[0] == resolve([a * x + b for x in d])[0]

    def test_exactly_one_winner(self, rng):
        c = rng.uniform(0.1, 2.0, size=(7, 4, 3, 2))
        res = run_auction(c)
        assert (res.win.sum(axis=1) == 1).all()

    def test_uncontested_cells(self):
        c = np.ones((2, 1, 2))
        res = run_auction(c, contested=np.array([[True, False]]))
        assert res.winner_index.tolist() == [[0, NO_WINNER]]
        assert res.win[:, 0, 1].sum() == 0

    def test_bid_matrix(self):
        with pytest.raises(ValueError):
            BidMatrix(np.array([[-1.0]]), np.array([[1.0]]))
        b = BidMatrix(np.array([[1.0], [2.0]]), np.array([[1.0], [1.0]]))
        assert b.within_budget([3.0], [2.0])
        assert not b.within_budget([2.5], [2.0])


class TestUtilities:
    def test_sp_utility_examples(self):
        p = params(2)
        won = single([2.0, 5.0])
        assert sp_utility(won, 0, p) == pytest.approx(2238.0)
        assert sp_utility(single([5.0, 2.0], [2.0, 2.0]), 0, p) == pytest.approx(-762.0)
        overbid = single([1.0, 5.0], [2.0, 5.0])
        assert sp_utility(overbid, 0, p) == pytest.approx(-762.0)
        assert sp_utility(overbid, 0, p, verify_bonus=False) == pytest.approx(2238.0)

    def test_modified_examples(self):
        p = params(2)
        assert modified_utility(single([2.0, 5.0]), 0, p) == pytest.approx(-762.0)
        assert modified_utility(single([5.0, 2.0]), 0, p) == pytest.approx(-38100.0)
        res = run_auction(np.array([[[2.0, 5.0]], [[5.0, 2.0]]]))
        p2 = params(2, cells=2)
        assert modified_utility(res, 0, p2) == pytest.approx(-38862.0)

    def test_potential_examples(self):
        p = params(2)
        assert potential_value(single([2.0, 5.0]), p) == pytest.approx(-102.0)
        res = run_auction(np.full((3, 2, 2), np.inf))
        assert potential_value(res, params(3, cells=2)) == pytest.approx(-3 * 2 * 2 * 100.0)
        assert potential_value(single([1.5, 5.0]), p) - potential_value(single([2.0, 5.0]), p) \
            == pytest.approx(0.5)

    def test_penalty_must_exceed_cap(self):
        with pytest.raises(ValueError):
            UtilityParams(np.ones((1, 1)), np.ones((1, 1)), 1.0, 2.0)

    def test_batched_matches_single(self, rng):
        c = rng.uniform(0.5, 3.0, size=(5, 3, 2, 2))
        p = params(3, cells=2)
        batched = sp_utilities(run_auction(c), p)
        for e in range(5):
            np.testing.assert_array_equal(batched[e], sp_utilities(run_auction(c[e]), p))

    @settings(max_examples=50)
    @given(st.lists(st.floats(0.1, 10.0), min_size=3, max_size=3),
           st.integers(0, 2), st.floats(0.1, 10.0))
    def test_order_equivalence_single_cell(self, delays, n, new):
        """Lowering one SP's delay never lowers either of its utilities."""
        p = params(3)
        lo = list(delays)
        lo[n] = min(new, delays[n])
        a, b = single(delays), single(lo)
        assert sp_utility(b, n, p) >= sp_utility(a, n, p)
        assert modified_utility(b, n, p) >= modified_utility(a, n, p)

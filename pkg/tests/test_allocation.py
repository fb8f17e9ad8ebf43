import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpabne.allocation import (
    best_response,
    best_response_strategy,
    envelope_value,
    exante_regret,
    exante_utility,
    interim_regret_sup,
    interim_utility,
    upper_envelope,
    win_prob,
    win_probs,
)
from fpabne.model import (
    AuctionInstance,
    BidMarginals,
    BidSpace,
    MonotoneStrategy,
    TieBreakingRule,
    ValueDistribution,
    marginals_of,
)
from fpabne.oracle import enumerate_allocation

from _support import random_distribution, random_instance, random_marginals, random_rule, random_strategy

seeds = st.integers(0, 2**32 - 1)
BIDS_01 = np.array([0.0, 0.1])


def all_zero_pair():
    inst = AuctionInstance(BidSpace((0.0, 0.1)), (ValueDistribution.uniform(),) * 2)
    prof = (MonotoneStrategy.constant(0, 1),) * 2
    return inst, prof


class TestWinProb:
    def test_sole_bidder(self):
        marg = BidMarginals(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert win_prob(0, 1, marg, TieBreakingRule.uniform()) == 1.0

    def test_pair_weight(self):
        marg = BidMarginals(np.array([[0.0, 1.0], [0.0, 1.0]]))
        rule = TieBreakingRule.trilateral({(0, 1): 0.3})
        assert win_prob(0, 1, marg, rule) == pytest.approx(0.3)
        assert win_prob(1, 1, marg, rule) == pytest.approx(0.7)

    def test_even_split_of_two(self):
        marg = BidMarginals(np.array([[0.0, 1.0], [0.0, 1.0]]))
        assert win_prob(0, 1, marg, TieBreakingRule.uniform()) == 0.5

    @settings(max_examples=120, deadline=None)
    @given(seeds, st.integers(2, 5), st.integers(1, 3), st.sampled_from(["uniform", "trilateral"]))
    def test_matches_enumeration(self, seed, n, m, variant):
        rng = np.random.default_rng(seed)
        marg = BidMarginals(random_marginals(rng, n, m))
        rule = random_rule(rng, n, variant)
        for i in range(n):
            fast = win_probs(i, marg, rule)
            slow = [enumerate_allocation(i, j, marg, rule) for j in range(m + 1)]
            assert np.max(np.abs(fast - slow)) <= 1e-10

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.integers(2, 6), st.integers(1, 4))
    def test_uniform_monotone_in_bid(self, seed, n, m):
        rng = np.random.default_rng(seed)
        marg = BidMarginals(random_marginals(rng, n, m))
        g = win_probs(int(rng.integers(0, n)), marg, TieBreakingRule.uniform())
        assert np.all(np.diff(g) >= -1e-15)
        assert np.all((g >= 0) & (g <= 1))

    def test_zero_factor_in_products(self):
        # an opponent that always bids the top bid leaves no chance below it
        marg = BidMarginals(np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 1.0], [0.2, 0.3, 0.5]]))
        rule = TieBreakingRule.trilateral({(0, 1): 0.1}, {(0, 1, 2): (0.2, 0.5)})
        fast = win_probs(0, marg, rule)
        slow = [enumerate_allocation(0, j, marg, rule) for j in range(3)]
        assert fast == pytest.approx(slow, abs=1e-12)


class TestUtility:
    def test_value_equal_to_bid(self):
        marg = BidMarginals(np.array([[0.5, 0.5], [0.3, 0.7]]))
        assert interim_utility(0.1, 1, 0, marg, TieBreakingRule.uniform(), BIDS_01) == 0.0

    def test_arithmetic(self):
        # opponent always bids b_1 = 0.2, so a tie at b_1 wins half the time
        marg = BidMarginals(np.array([[0.0, 1.0], [0.0, 1.0]]))
        u = interim_utility(1.0, 1, 0, marg, TieBreakingRule.uniform(), np.array([0.0, 0.2]))
        assert u == pytest.approx(0.4)

    def test_deterministic_value(self):
        inst = AuctionInstance(BidSpace((0.0, 0.2)), (ValueDistribution.point(0.6), ValueDistribution.point(0.0)))
        prof = (MonotoneStrategy.constant(1, 1), MonotoneStrategy.constant(0, 1))
        marg = marginals_of(prof, inst.distributions)
        assert exante_utility(0, prof[0], marg, inst) == pytest.approx(0.4)

    def test_alone_at_zero(self):
        inst = AuctionInstance(BidSpace((0.0, 0.5)), (ValueDistribution.uniform(), ValueDistribution.point(0.0)))
        prof = (MonotoneStrategy.constant(0, 1),) * 2
        marg = marginals_of(prof, inst.distributions)
        # the opponent always bids 0 too, so ties at 0 halve the win
        assert exante_utility(0, prof[0], marg, inst) == pytest.approx(0.25)

    @settings(max_examples=10, deadline=None)
    @given(seeds)
    def test_exante_utility_monte_carlo(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, 3, 3)
        prof = tuple(MonotoneStrategy(random_strategy(rng, 3, d).thresholds) for d in inst.distributions)
        marg = marginals_of(prof, inst.distributions)
        g = win_probs(0, marg, inst.rule)
        u = rng.uniform(size=200_000)
        v = np.asarray(inst.distributions[0].quantile_upper(u))
        j = np.searchsorted(prof[0].tau, v, side="left")
        samples = g[j] * (v - inst.bids[j])
        se = samples.std() / np.sqrt(len(samples))
        assert abs(exante_utility(0, prof[0], marg, inst) - samples.mean()) <= 4 * se + 1e-12


class TestBestResponse:
    def test_zero_value_bids_zero(self):
        marg = BidMarginals(np.array([[0.5, 0.5], [0.3, 0.7]]))
        assert best_response(0.0, 0, marg, TieBreakingRule.uniform(), BIDS_01) == 0

    def test_jump_closed_form(self):
        bids = np.array([0.0, 0.1, 0.3])
        marg = BidMarginals(np.array([[1 / 3] * 3, [0.0, 1.0, 0.0]]))
        rule = TieBreakingRule.uniform()
        # b_2 beats b_1 iff v - 0.3 > (v - 0.1) / 2, i.e. v > 0.5
        for v in np.linspace(0.3, 1.0, 141):
            want = 2 if v > 0.5 + 1e-12 else 1
            assert best_response(v, 0, marg, rule, bids) == want

    def test_opponents_at_zero(self):
        bids = np.array([0.0, 0.1, 0.2])
        marg = BidMarginals(np.array([[1 / 3] * 3, [1.0, 0.0, 0.0]]))
        rule = TieBreakingRule.uniform()
        for v in np.linspace(0, 1, 101):
            u = [(v - b) * g for b, g in zip(bids, win_probs(0, marg, rule))]
            assert best_response(v, 0, marg, rule, bids) == int(np.argmax(np.round(u, 14)))

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.integers(1, 5))
    def test_strategy_matches_pointwise(self, seed, m):
        rng = np.random.default_rng(seed)
        g = np.sort(rng.uniform(size=m + 1))
        bids = np.concatenate(([0.0], np.sort(rng.choice(np.arange(1, 20) / 20, m, replace=False))))
        s = best_response_strategy(g, bids)
        for v in rng.uniform(size=50):
            u = g * (v - bids)
            assert u[s.bid_index(v)] >= u.max() - 1e-12
            assert bids[s.bid_index(v)] <= v + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(1, 5))
    def test_envelope_is_pointwise_max(self, seed, m):
        rng = np.random.default_rng(seed)
        g = rng.uniform(size=m + 1)
        bids = np.concatenate(([0.0], np.sort(rng.uniform(size=m))))
        v = np.linspace(0, 1, 301)
        want = (g[None, :] * (v[:, None] - bids[None, :])).max(axis=1)
        assert envelope_value(v, g, bids) == pytest.approx(want, abs=1e-12)
        env = upper_envelope(g, bids)
        assert np.all(np.diff(env.bid) > 0)


class TestRegret:
    def test_all_zero_sup(self):
        inst, prof = all_zero_pair()
        marg = marginals_of(prof, inst.distributions)
        sup, witness = interim_regret_sup(0, prof[0], marg, inst)
        assert sup == pytest.approx(0.4)
        assert witness == 1.0

    def test_all_zero_exante(self):
        inst, prof = all_zero_pair()
        # integral of max(v/2, v - 0.1) over [0, 1] is 0.41, utility is 0.25
        assert exante_regret(0, prof, inst) == pytest.approx(0.16)

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(2, 4), st.integers(1, 3))
    def test_best_response_has_no_regret(self, seed, n, m):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, n, m)
        prof = [random_strategy(rng, m, d) for d in inst.distributions]
        marg = marginals_of(prof, inst.distributions)
        br = best_response_strategy(win_probs(0, marg, inst.rule), inst.bids)
        prof[0] = br
        # player 0's own strategy does not enter its win probabilities
        assert exante_regret(0, prof, inst, marg) <= 1e-12
        assert interim_regret_sup(0, br, marg, inst)[0] <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(2, 4), st.integers(1, 3))
    def test_sup_against_dense_grid(self, seed, n, m):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, n, m)
        prof = [MonotoneStrategy(random_strategy(rng, m).thresholds) for _ in range(n)]
        marg = marginals_of(prof, inst.distributions)
        g = win_probs(0, marg, inst.rule)
        sup, _ = interim_regret_sup(0, prof[0], marg, inst)
        v = np.linspace(0, 1, 10_001)
        j = np.searchsorted(prof[0].tau, v, side="left")
        dense = (envelope_value(v, g, inst.bids) - g[j] * (v - inst.bids[j])).max()
        # the grid sees the sup up to the Lipschitz modulus of the regret
        assert dense <= sup + 1e-9
        assert sup <= dense + 2e-4 + 1e-9
        assert 0.0 <= exante_regret(0, prof, inst, marg) <= sup + 1e-12

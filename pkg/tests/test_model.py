import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpabne.model import (
    AtomSplit,
    AuctionInstance,
    BidMarginals,
    BidSpace,
    ModelError,
    MonotoneStrategy,
    TieBreakingRule,
    ValueDistribution,
    cdf,
    marginals_of,
    monotone_analogue,
    validate_instance,
)

from _support import random_distribution, random_row, random_rule, random_strategy

seeds = st.integers(0, 2**32 - 1)


def two_uniform(bids=(0.0, 0.5)):
    return AuctionInstance(BidSpace(bids), (ValueDistribution.uniform(),) * 2)


def tenth_atoms():
    return ValueDistribution.discrete([0.0] + [k / 10 for k in range(1, 10)], [0.28] + [0.08] * 9)


class TestValidation:
    def test_valid_instance(self):
        assert validate_instance(two_uniform()) == []

    def test_nonzero_first_bid(self):
        rep = validate_instance(two_uniform((0.1, 0.5)))
        assert any("b_0" in r for r in rep)

    def test_short_mass(self):
        inst = AuctionInstance(BidSpace((0.0, 0.5)), (ValueDistribution.uniform(), ValueDistribution(pieces=((0, 1, 0.9),))))
        assert any("mass" in r for r in validate_instance(inst))

    def test_single_player(self):
        inst = AuctionInstance(BidSpace((0.0, 0.5)), (ValueDistribution.uniform(),))
        assert validate_instance(inst)
        with pytest.raises(ModelError):
            inst.require_valid()

    def test_unsorted_bids(self):
        assert any("increasing" in r for r in BidSpace((0.0, 0.5, 0.3)).problems())

    def test_overlapping_pieces(self):
        d = ValueDistribution(pieces=((0.0, 0.6, 1.0), (0.5, 0.9, 1.0)))
        assert any("overlap" in r for r in d.problems())

    def test_bad_rule(self):
        rule = TieBreakingRule.trilateral({(0, 5): 0.2}, {(0, 1, 2): (0.7, 0.6)})
        probs = rule.problems(3)
        assert len(probs) == 2


class TestCdf:
    def test_uniform(self):
        assert cdf(ValueDistribution.uniform(), 0.3) == pytest.approx(0.3)

    def test_atom_right_continuous(self):
        d = ValueDistribution.point(0.5)
        assert cdf(d, 0.5) == 1.0
        assert cdf(d, 0.49) == 0.0
        assert d.cdf_left(0.5) == 0.0

    def test_tenth_atoms(self):
        assert cdf(tenth_atoms(), 0.25) == pytest.approx(0.44)

    def test_domain(self):
        with pytest.raises(ModelError):
            cdf(ValueDistribution.uniform(), 1.2)

    @settings(max_examples=60, deadline=None)
    @given(seeds)
    def test_monotone_and_total(self, seed):
        d = random_distribution(np.random.default_rng(seed))
        v = np.linspace(0, 1, 201)
        c = d.cdf(v)
        assert np.all(np.diff(c) >= -1e-15)
        assert d.cdf(d.v_max) == pytest.approx(1.0, abs=1e-12)
        assert np.all(d.cdf_left(v) <= c + 1e-15)

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.floats(0, 1), st.floats(0, 1))
    def test_mass_between_matches_cdf(self, seed, a, b):
        d = random_distribution(np.random.default_rng(seed))
        a, b = min(a, b), max(a, b)
        assert d.mass_between(a, b) == pytest.approx(d.cdf(b) - d.cdf(a), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.floats(0, 1))
    def test_quantile_inverts_cdf(self, seed, c):
        d = random_distribution(np.random.default_rng(seed))
        t = d.quantile_upper(c)
        # F(t-) <= c, and no point beyond t keeps F <= c
        assert d.cdf_left(t) <= c + 1e-9
        if t < 1.0:
            assert d.cdf(min(t + 1e-7, 1.0)) > c - 1e-9

    @settings(max_examples=60, deadline=None)
    @given(seeds, st.floats(0, 1), st.floats(0, 1))
    def test_lorenz_increment_is_moment(self, seed, c1, c2):
        d = random_distribution(np.random.default_rng(seed), "pieces")
        c1, c2 = sorted((c1, c2))
        lo, hi = d.quantile_upper(c1), d.quantile_upper(c2)
        # for atomless distributions the ranks (c1, c2] are the values (lo, hi]
        want = d.moment_upto(hi) - d.moment_upto(lo)
        assert d.lorenz(c2) - d.lorenz(c1) == pytest.approx(want, abs=1e-12)


class TestRule:
    def test_default_trilateral_matches_uniform(self):
        tri, uni = TieBreakingRule.trilateral(), TieBreakingRule.uniform()
        for w in ([0, 1], [0, 2], [0, 1, 2], [0, 1, 2, 3]):
            assert tri.shares(w) == pytest.approx(uni.shares(w))

    def test_pair_weight(self):
        rule = TieBreakingRule.trilateral({(0, 1): 0.3})
        assert rule.shares([0, 1]) == {0: 0.3, 1: 0.7}
        assert rule.pair_share(1, 0) == pytest.approx(0.7)

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(2, 5))
    def test_shares_sum_to_one(self, seed, n):
        rng = np.random.default_rng(seed)
        rule = random_rule(rng, n)
        k = int(rng.integers(1, n + 1))
        w = sorted(rng.choice(n, size=k, replace=False).tolist())
        assert sum(rule.shares(w).values()) == pytest.approx(1.0)

    @settings(max_examples=30, deadline=None)
    @given(seeds, st.integers(2, 5))
    def test_share_tables_agree(self, seed, n):
        rng = np.random.default_rng(seed)
        rule = random_rule(rng, n, "trilateral")
        pair, triple = rule.share_tables(n)
        for i in range(n):
            for j in range(n):
                if i != j:
                    assert pair[i, j] == pytest.approx(rule.pair_share(i, j))
                for k in range(n):
                    if len({i, j, k}) == 3:
                        assert triple[i, j, k] == pytest.approx(rule.triple_share(i, j, k))


class TestStrategy:
    def test_constant(self):
        s = MonotoneStrategy.constant(2, 3)
        assert s.thresholds == (0.0, 0.0, 1.0)
        assert s.bid_index(0.4) == 2

    def test_half_open_convention(self):
        s = MonotoneStrategy((0.5,))
        assert s.bid_index(0.5) == 0
        assert s.bid_index(0.5000001) == 1
        assert s.bid_index(0.0) == 0

    def test_problems(self):
        assert MonotoneStrategy((0.6, 0.4)).problems()
        bad = MonotoneStrategy((0.5, 0.7), (AtomSplit(0.5, 1, (0.5, 0.5)),))
        assert bad.problems()
        bad = MonotoneStrategy((0.5,), (AtomSplit(0.5, 0, (0.5, 0.6)),))
        assert bad.problems()

    def test_split_law(self):
        s = MonotoneStrategy((0.5,), (AtomSplit(0.5, 0, (0.3, 0.7)),))
        assert s.bid_law(0.5) == [(0, 0.3), (1, 0.7)]
        assert s.bid_law(0.2) == [(0, 1.0)]


class TestMarginals:
    def test_uniform_half(self):
        m = marginals_of([MonotoneStrategy((0.5,))], [ValueDistribution.uniform()])
        assert m.p[0] == pytest.approx([0.5, 0.5])

    def test_atom_split(self):
        s = MonotoneStrategy((0.5,), (AtomSplit(0.5, 0, (0.3, 0.7)),))
        m = marginals_of([s], [ValueDistribution.point(0.5)])
        assert m.p[0] == pytest.approx([0.3, 0.7])

    def test_mixed_pieces(self):
        d = ValueDistribution(pieces=((0.0, 0.2, 2.0), (0.2, 0.5, 1.0), (0.5, 0.6, 1.0), (0.6, 1.0, 0.5)))
        s = MonotoneStrategy((0.55,))
        below = 0.2 * 2.0 + 0.3 * 1.0 + 0.05 * 1.0
        assert marginals_of([s], [d]).p[0] == pytest.approx([below, 1 - below], abs=1e-15)

    def test_threshold_out_of_range(self):
        with pytest.raises(ModelError):
            marginals_of([MonotoneStrategy((1.5,))], [ValueDistribution.uniform()])

    def test_bad_rows(self):
        with pytest.raises(ModelError):
            BidMarginals(np.array([[0.5, 0.6]]))

    def test_cumulative(self):
        m = BidMarginals(np.array([[0.2, 0.3, 0.5]]))
        assert m.cumulative()[0] == pytest.approx([0.2, 0.5, 1.0])

    @settings(max_examples=50, deadline=None)
    @given(seeds, st.integers(1, 4))
    def test_rows_are_distributions(self, seed, m):
        rng = np.random.default_rng(seed)
        d = random_distribution(rng)
        p = marginals_of([random_strategy(rng, m, d)], [d]).p[0]
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)


class TestMonotoneAnalogue:
    def test_uniform_half(self):
        s = monotone_analogue([0.5, 0.5], ValueDistribution.uniform())
        assert s.thresholds == pytest.approx((0.5,))
        assert not s.splits

    def test_all_low(self):
        s = monotone_analogue([1.0, 0.0], ValueDistribution.uniform())
        assert s.thresholds == (1.0,)

    def test_level_exhausting_an_atom(self):
        # 0.44 is exactly the mass up to and including the atom at 0.2
        d = tenth_atoms()
        s = monotone_analogue([0.44, 0.56], d)
        assert s.thresholds == (0.3,)
        assert s.bid_law(0.3) == [(1, 1.0)]
        assert marginals_of([s], [d]).p[0] == pytest.approx([0.44, 0.56], abs=1e-12)

    def test_split_inside_atom(self):
        d = tenth_atoms()
        s = monotone_analogue([0.48, 0.52], d)
        assert s.thresholds == (0.3,)
        (split,) = s.splits
        assert split.value == 0.3
        assert split.probs == pytest.approx((0.5, 0.5))
        assert marginals_of([s], [d]).p[0] == pytest.approx([0.48, 0.52], abs=1e-12)

    def test_rejects_bad_row(self):
        with pytest.raises(ModelError):
            monotone_analogue([0.5, 0.2], ValueDistribution.uniform())

    @settings(max_examples=150, deadline=None)
    @given(seeds, st.integers(1, 4), st.sampled_from(["atoms", "pieces", "mixed"]))
    def test_round_trip(self, seed, m, kind):
        rng = np.random.default_rng(seed)
        d = random_distribution(rng, kind)
        row = random_row(rng, m)
        s = monotone_analogue(row, d)
        assert not s.problems()
        assert np.all(np.diff(s.tau) >= 0)
        assert np.max(np.abs(marginals_of([s], [d]).p[0] - row)) <= 1e-12

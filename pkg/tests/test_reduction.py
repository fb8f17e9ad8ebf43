import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpabne.model import MonotoneStrategy, marginals_of, validate_instance
from fpabne.allocation import win_probs
from fpabne.reduction import (
    ONE_MINUS,
    PLUS,
    Gate,
    GeneralizedCircuit,
    ReductionError,
    ReductionParams,
    check_circuit_solution,
    damped_fixed_point,
    decode_solution,
    delta1,
    delta1_values,
    delta2,
    expanded_jumping_point,
    gamma_pair,
    jumping_point,
    prescribed_profile,
    random_circuit,
    reduce_to_auction,
    response_map,
    tie_matrices,
    truncate,
)

seeds = st.integers(0, 2**32 - 1)
RELAXED = ReductionParams(1e-8, 0.02, 0.1)


def plus_minus():
    """Node 0 adds node 1 to itself, node 1 complements node 0."""
    return GeneralizedCircuit((Gate(PLUS, (1, 1)), Gate(ONE_MINUS, (0,))))


def chain():
    return GeneralizedCircuit((
        Gate(PLUS, (2, 3)), Gate(PLUS, (0, 3)), Gate(ONE_MINUS, (0,)), Gate(ONE_MINUS, (1,)),
    ))


class TestCircuit:
    def test_counts(self):
        c = chain()
        assert (c.size, c.plus_count, c.players) == (4, 2, 6)
        assert not c.problems()

    @pytest.mark.parametrize("gates,msg", [
        ((Gate(ONE_MINUS, (1,)), Gate(PLUS, (0, 0))), "precede"),
        ((Gate(PLUS, (0, 1)), Gate(ONE_MINUS, (0,))), "own output"),
        ((Gate(PLUS, (1,)), Gate(ONE_MINUS, (0,))), "two inputs"),
        ((Gate(PLUS, (1, 1)), Gate(ONE_MINUS, (5,))), "out of range"),
        ((Gate("times", (1,)), Gate(ONE_MINUS, (0,))), "unknown"),
        ((Gate(ONE_MINUS, (0,)),), "two nodes"),
    ])
    def test_problems(self, gates, msg):
        probs = GeneralizedCircuit(gates).problems()
        assert any(msg in p for p in probs)
        with pytest.raises(ReductionError):
            reduce_to_auction(GeneralizedCircuit(gates), RELAXED)

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.integers(2, 10), st.booleans())
    def test_random_circuit_valid(self, seed, size, acyclic):
        rng = np.random.default_rng(seed)
        c = random_circuit(rng, size, acyclic=acyclic)
        assert not c.problems()
        assert c.size == size


class TestCheck:
    def test_sum_off(self):
        c = GeneralizedCircuit((Gate(PLUS, (1, 2)), Gate(ONE_MINUS, (2,)), Gate(ONE_MINUS, (1,))))
        viol = {v.node: v for v in check_circuit_solution(c, [0.9, 0.3, 0.4], 0.01)}
        assert viol[0].excess == pytest.approx(0.19)
        assert (viol[0].low, viol[0].high) == pytest.approx((0.69, 0.71))

    def test_sum_passes(self):
        c = GeneralizedCircuit((Gate(PLUS, (1, 2)), Gate(ONE_MINUS, (1,)), Gate(ONE_MINUS, (2,))))
        viol = check_circuit_solution(c, [0.7, 0.3, 0.4], 0.01)
        assert 0 not in [v.node for v in viol]

    def test_truncated_sum(self):
        c = GeneralizedCircuit((Gate(PLUS, (1, 2)), Gate(ONE_MINUS, (1,)), Gate(ONE_MINUS, (2,))))
        viol = check_circuit_solution(c, [1.0, 0.8, 0.8], 0.01)
        assert 0 not in [v.node for v in viol]

    def test_complement_fails(self):
        c = GeneralizedCircuit((Gate(PLUS, (1, 1)), Gate(ONE_MINUS, (2,)), Gate(PLUS, (1, 1))))
        x = [0.5, 0.74, 0.25]
        viol = {v.node: v for v in check_circuit_solution(c, x, 0.005)}
        assert viol[1].excess == pytest.approx(0.005)

    def test_domain(self):
        with pytest.raises(ReductionError):
            check_circuit_solution(plus_minus(), [0.5, 1.5], 0.1)

    def test_truncate(self):
        assert list(truncate(np.array([-0.2, 0.4, 1.3]))) == [0.0, 0.4, 1.0]


class TestConstruction:
    def test_complement_gadget(self):
        sa, sb = tie_matrices(plus_minus())
        # node 1 is helped by bidder 2
        assert sa[1, 2] == 0.45 and sa[2, 1] == 0.55
        assert sb[2, 0] == pytest.approx(0.2)
        # the addition node reads node 1 twice, so both shares land on one entry
        assert sb[0, 1] == pytest.approx(0.2)

    def test_delta1_defaults(self):
        sa = np.full((3, 3), 0.5)
        np.fill_diagonal(sa, 0.0)
        d1 = delta1_values(sa, np.zeros((3, 3)), ReductionParams(1e-6, 0.1, 0.2))
        assert d1 == pytest.approx([0.22] * 3)

    def test_delta1_plus_row(self):
        red = reduce_to_auction(chain(), RELAXED)
        n, d, b = red.n, RELAXED.delta, RELAXED.beta
        want = (n - 1) * d + (n - 1) * b * d / 2 + 2 * (1 + b) * d / 10
        assert delta1(0, red) == pytest.approx(want)
        with pytest.raises(ReductionError):
            delta1(red.pivot, red)

    def test_delta2(self):
        red = reduce_to_auction(chain(), RELAXED)
        rng = np.random.default_rng(0)
        x = rng.uniform(0, red.piece_mass, red.n)
        assert delta2(0, x, red) == pytest.approx(-(x[2] + x[3]) / 10)
        assert delta2(0, np.zeros(red.n), red) == 0.0
        with pytest.raises(ReductionError):
            delta2(0, np.full(red.n, 2 * red.piece_mass), red)

    def test_default_entries_ignore_x(self):
        red = reduce_to_auction(chain(), RELAXED)
        rng = np.random.default_rng(1)
        x = rng.uniform(0, red.piece_mass, red.n)
        y = rng.uniform(0, red.piece_mass, red.n)
        # node 0 reads nodes 2 and 3; every other entry of its row is a default
        y[[2, 3]] = x[[2, 3]]
        assert delta2(0, x, red) == pytest.approx(delta2(0, y, red))

    def test_full_scale(self):
        p = ReductionParams.for_players(5)
        _, b1, b2 = p.bids(5)
        assert 0 < b1 < b2 < 1
        assert p.epsilon < p.delta < p.beta

    def test_bad_params(self):
        with pytest.raises(ReductionError):
            reduce_to_auction(chain(), ReductionParams(0.1, 0.05, 0.2))
        assert ReductionParams(1e-8, 0.5, 0.9).problems(3)

    @settings(max_examples=25, deadline=None)
    @given(seeds, st.integers(2, 10), st.booleans())
    def test_structure(self, seed, size, slivers):
        rng = np.random.default_rng(seed)
        params = ReductionParams(1e-8, 0.02, 0.1, slivers)
        red = reduce_to_auction(random_circuit(rng, size), params)
        n, d = red.n, params.delta
        sa, sb = red.sigma_a, red.sigma_b
        off = ~np.eye(n, dtype=bool)
        assert np.array_equal(sa + sa.T, np.ones((n, n)) - np.eye(n))
        assert np.all((sa[off] >= 0.25) & (sa[off] <= 0.75))
        assert np.all((sb >= 0) & (sb <= 0.5))
        assert np.all((sb + sb.T)[off] <= 1.0)
        assert np.all((red.delta1 >= (n - 1) * d) & (red.delta1 <= 2 * n * d))
        assert np.all((red.intervals[:, 0] > red.b2) & (red.intervals[:, 1] < 1 - params.epsilon))
        assert validate_instance(red.instance) == []
        for i, dist in enumerate(red.instance.distributions[:n]):
            assert abs(dist.total_mass - 1.0) <= 1e-9
            lo, hi = red.intervals[i]
            assert dist.mass_between(lo, hi) == pytest.approx(red.piece_mass, rel=1e-9)


class TestJumpingPoint:
    def test_formula(self):
        assert jumping_point(0.5, 0.6, 0.1, 0.2) == pytest.approx(0.7)
        assert jumping_point(0.0, 0.6, 0.1, 0.2) == 0.2

    def test_no_crossing(self):
        with pytest.raises(ReductionError):
            jumping_point(0.6, 0.6, 0.1, 0.2)

    def test_indifference(self):
        g1, g2, b1, b2 = 0.3, 0.45, 0.01, 0.05
        t = jumping_point(g1, g2, b1, b2)
        assert g1 * (t - b1) == pytest.approx(g2 * (t - b2))

    @settings(max_examples=15, deadline=None)
    @given(seeds, st.integers(2, 5))
    def test_expansion(self, seed, size):
        rng = np.random.default_rng(seed)
        params = ReductionParams(1e-12, 1e-5, 0.1)
        red = reduce_to_auction(random_circuit(rng, size), params)
        x = rng.uniform(0, red.piece_mass, red.n)
        g = gamma_pair(x, red)
        beta = params.beta
        for i in range(red.n):
            exact = jumping_point(g[i, 0], g[i, 1], red.b1, red.b2)
            approx = expanded_jumping_point(i, x, red)
            assert abs(exact - approx) <= 10 * beta ** 2 * red.b2 / red.delta1[i]

    def test_separable_gap(self):
        red = reduce_to_auction(chain(), RELAXED)
        prof = prescribed_profile(np.zeros(red.n), red)
        marg = marginals_of(prof, red.instance.distributions)
        v = 1 - RELAXED.epsilon
        for i in range(red.n):
            g = win_probs(i, marg, red.instance.rule)
            assert g[2] * (v - red.b2) > g[1] * (v - red.b1)


class TestDecode:
    def test_ends(self):
        red = reduce_to_auction(chain(), RELAXED)
        low = prescribed_profile(np.zeros(red.n), red)
        high = prescribed_profile(np.full(red.n, red.piece_mass), red)
        assert np.all(decode_solution(low, red) == 0.0)
        assert np.all(decode_solution(high, red) == 1.0)

    @settings(max_examples=25, deadline=None)
    @given(seeds)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        red = reduce_to_auction(chain(), RELAXED)
        x = rng.uniform(0, 1, red.n)
        got = decode_solution(prescribed_profile(x * red.piece_mass, red), red)
        assert got[:4] == pytest.approx(x[:4], abs=1e-9)

    def test_rejects_out_of_range(self):
        red = reduce_to_auction(chain(), RELAXED)
        prof = list(prescribed_profile(np.zeros(red.n), red))
        prof[0] = MonotoneStrategy((0.0, red.b2 / 2))
        with pytest.raises(ReductionError):
            decode_solution(prof, red)

    def test_fixed_point(self):
        rng = np.random.default_rng(11)
        n_nodes = 4
        params = ReductionParams(1e-14, 0.05 ** 2 / 100, 0.05)
        c = random_circuit(rng, n_nodes, acyclic=True)
        red = reduce_to_auction(c, ReductionParams(params.epsilon, params.beta ** 2 / (100 * c.players),
                                                   params.beta / c.players))
        fp = damped_fixed_point(red)
        assert fp.converged
        assert np.max(np.abs(response_map(fp.x, red) - fp.x)) <= fp.step / 0.5 + 1e-15
        x = decode_solution(prescribed_profile(fp.x, red), red)
        kappa = 10 * red.n * red.params.beta
        assert check_circuit_solution(c, x, kappa) == []

"""Interim allocation, utilities, best responses and regret.

Everything is driven by the bid marginals of the opponents.  Player ``i``'s
own row of the marginal matrix is ignored, so the same matrix can be reused
for every player.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import (
    AuctionInstance,
    BidMarginals,
    MonotoneStrategy,
    TieBreakingRule,
    ValueDistribution,
    bid_mass_moment,
    marginals_of,
)

# ---------------------------------------------------------------------------
# win probabilities


def _tie_counts(at: np.ndarray, below: np.ndarray) -> np.ndarray:
    """Poisson-binomial counts of tied opponents.

    ``at[r, j]`` is the chance opponent ``r`` bids exactly ``b_j`` and
    ``below[r, j]`` the chance it bids strictly less.  Returns ``c[k, j]``,
    the probability that exactly ``k`` opponents tie at ``b_j`` and all the
    others bid below it.
    """
    n_opp, width = at.shape
    coef = np.zeros((n_opp + 1, width))
    coef[0] = 1.0
    for r in range(n_opp):
        new = coef * below[r]
        new[1:] += coef[:-1] * at[r]
        coef = new
    return coef


def win_probs(i: int, marginals: BidMarginals, rule: TieBreakingRule) -> np.ndarray:
    """Vector ``gamma[j]``: chance that player ``i`` wins when bidding ``b_j``."""
    p = marginals.p
    n = marginals.n
    if not 0 <= i < n:
        raise IndexError(f"player {i} out of range")
    others = [r for r in range(n) if r != i]
    at = p[others]
    below = np.cumsum(p[others], axis=1) - at
    np.clip(below, 0.0, 1.0, out=below)
    counts = _tie_counts(at, below)
    if rule.is_uniform or not others:
        k = np.arange(len(others) + 1)[:, None]
        return np.clip((counts / (k + 1)).sum(axis=0), 0.0, 1.0)

    n_opp = len(others)
    # prefix[a] = prod_{r < a} below_r, suffix[a] = prod_{r >= a} below_r
    prefix = np.ones((n_opp + 1, p.shape[1]))
    suffix = np.ones((n_opp + 1, p.shape[1]))
    for a in range(n_opp):
        prefix[a + 1] = prefix[a] * below[a]
    for a in range(n_opp - 1, -1, -1):
        suffix[a] = suffix[a + 1] * below[a]

    pair, triple = rule.share_tables(n)
    gamma = prefix[n_opp].copy()
    for a in range(n_opp):
        ra = others[a]
        gamma += at[a] * prefix[a] * suffix[a + 1] * pair[i, ra]
        if a + 1 < n_opp:
            # mid[b] = prod of below over opponents strictly between a and b
            mid = np.cumprod(np.vstack((np.ones(p.shape[1]), below[a + 1:n_opp - 1])), axis=0)
            share = triple[i, ra, others[a + 1:]][:, None]
            gamma += at[a] * prefix[a] * (at[a + 1:] * mid * suffix[a + 2:] * share).sum(axis=0)
    if n_opp >= 3:
        k = np.arange(3, n_opp + 1)[:, None]
        gamma += (counts[3:] / (k + 1)).sum(axis=0)
    return np.clip(gamma, 0.0, 1.0)


def win_prob(i: int, j: int, marginals: BidMarginals, rule: TieBreakingRule) -> float:
    """Chance that player ``i`` wins with bid ``b_j``."""
    return float(win_probs(i, marginals, rule)[j])


def interim_utility(v: float, j: int, i: int, marginals: BidMarginals,
                    rule: TieBreakingRule, bids: Sequence[float]) -> float:
    return float((v - bids[j]) * win_prob(i, j, marginals, rule))


def best_response(v: float, i: int, marginals: BidMarginals,
                  rule: TieBreakingRule, bids: Sequence[float]) -> int:
    """Utility-maximizing bid index at value ``v``; ties go to the lowest bid."""
    g = win_probs(i, marginals, rule)
    return best_bid(v, g, np.asarray(bids, dtype=float))


def best_bid(v: float, gamma: np.ndarray, bids: np.ndarray) -> int:
    u = gamma * (v - bids)
    return int(np.flatnonzero(u >= u.max())[0])


# ---------------------------------------------------------------------------
# upper envelope of the bid utility lines


@dataclass(frozen=True)
class Envelope:
    """Upper envelope of ``v -> gamma[j] * (v - b[j])`` over [0, 1].

    ``starts[k]`` and ``ends[k]`` bound the k-th segment, on which bid
    ``bid[k]`` is the pointwise best response (with ties at a shared
    endpoint going to the lower segment's bid).
    """

    starts: np.ndarray
    ends: np.ndarray
    bid: np.ndarray

    @property
    def breakpoints(self) -> np.ndarray:
        return self.ends[:-1]


def upper_envelope(gamma: np.ndarray, bids: np.ndarray) -> Envelope:
    gamma = np.asarray(gamma, dtype=float)
    bids = np.asarray(bids, dtype=float)
    slope = gamma
    icpt = -gamma * bids
    cur = best_bid(0.0, gamma, bids)
    v = 0.0
    starts, ends, seq = [0.0], [], [cur]
    while True:
        ds = slope - slope[cur]
        cand = ds > 0
        if not cand.any():
            break
        x = np.full(len(slope), np.inf)
        x[cand] = (icpt[cur] - icpt[cand]) / ds[cand]
        x[x <= v] = np.inf
        xmin = x.min()
        if not xmin < 1.0:
            break
        hit = np.flatnonzero(x <= xmin)
        # the steepest line leaves the crossing on top; lowest index among equals
        top = hit[slope[hit] >= slope[hit].max()]
        top = top[icpt[top] >= icpt[top].max()]
        nxt = int(top[0])
        ends.append(float(xmin))
        starts.append(float(xmin))
        seq.append(nxt)
        cur, v = nxt, float(xmin)
    ends.append(1.0)
    return Envelope(np.array(starts), np.array(ends), np.array(seq, dtype=int))


def envelope_value(v, gamma: np.ndarray, bids: np.ndarray):
    """``max_j gamma[j] * (v - b[j])`` evaluated pointwise."""
    v = np.asarray(v, dtype=float)
    u = gamma * (v[..., None] - bids)
    out = u.max(axis=-1)
    return out if out.ndim else float(out)


def expected_envelope(gamma: np.ndarray, bids: np.ndarray, dist: ValueDistribution) -> float:
    """``E[max_j gamma[j] (V - b[j])]`` computed segment by segment."""
    env = upper_envelope(gamma, bids)
    lo = env.starts.copy()
    lo[0] = -1.0  # include an atom at 0 in the first segment
    cm_lo, mom_lo = dist._upto(lo, strict=False)
    cm_hi, mom_hi = dist._upto(env.ends, strict=False)
    g = gamma[env.bid]
    b = bids[env.bid]
    return float(np.sum(g * ((mom_hi - mom_lo) - b * (cm_hi - cm_lo))))


def best_response_strategy(gamma: np.ndarray, bids: np.ndarray) -> MonotoneStrategy:
    """Pointwise best response written as a threshold strategy.

    The lowest-index tie rule makes the pointwise best response
    non-decreasing and never above the value, so it has a threshold form.
    """
    env = upper_envelope(gamma, bids)
    m = len(bids) - 1
    tau = np.ones(m)
    for k in range(len(env.bid) - 1, -1, -1):
        j = env.bid[k]
        if j > 0:
            tau[:j] = np.minimum(tau[:j], env.starts[k])
    tau = np.maximum.accumulate(tau)
    return MonotoneStrategy(tuple(float(t) for t in tau))


# ---------------------------------------------------------------------------
# regret


def regret_sup_from_gamma(gamma: np.ndarray, bids: np.ndarray, strategy: MonotoneStrategy,
                          dist: ValueDistribution | None = None) -> tuple[float, float]:
    """Exact sup over [0, 1] of the interim regret of ``strategy``.

    Between consecutive breakpoints the strategy is constant and the regret
    is a convex function (envelope minus a line), so it peaks at an endpoint.
    Endpoints are evaluated with the bid of the adjacent open piece and with
    every bid actually used at the point.
    """
    gamma = np.asarray(gamma, dtype=float)
    bids = np.asarray(bids, dtype=float)
    env = upper_envelope(gamma, bids)
    pts = np.concatenate((
        [0.0, 1.0],
        np.clip(strategy.tau, 0.0, 1.0),
        [s.value for s in strategy.splits],
        env.breakpoints,
    ))
    pts = np.unique(pts)
    envv = envelope_value(pts, gamma, bids)
    best, witness = -np.inf, 0.0

    def consider(k, j):
        nonlocal best, witness
        r = envv[k] - gamma[j] * (pts[k] - bids[j])
        if r > best:
            best, witness = r, float(pts[k])

    for k, v in enumerate(pts):
        for j, _ in strategy.bid_law(float(v)):
            consider(k, j)
    for k in range(len(pts) - 1):
        j = strategy.bid_index(0.5 * (pts[k] + pts[k + 1]))
        consider(k, j)
        consider(k + 1, j)
    return max(float(best), 0.0), witness


def interim_regret_sup(i: int, strategy: MonotoneStrategy, marginals: BidMarginals,
                       instance: AuctionInstance) -> tuple[float, float]:
    """Sup regret of player ``i`` over all values, with a value attaining it."""
    g = win_probs(i, marginals, instance.rule)
    return regret_sup_from_gamma(g, instance.bids, strategy, instance.distributions[i])


def exante_utility_from_gamma(gamma: np.ndarray, bids: np.ndarray, strategy: MonotoneStrategy,
                              dist: ValueDistribution) -> float:
    mass, moment = bid_mass_moment(strategy, dist)
    return float(np.sum(gamma * (moment - bids * mass)))


def exante_utility(i: int, strategy: MonotoneStrategy, marginals: BidMarginals,
                   instance: AuctionInstance) -> float:
    """Expected utility of player ``i`` playing ``strategy``."""
    g = win_probs(i, marginals, instance.rule)
    return exante_utility_from_gamma(g, instance.bids, strategy, instance.distributions[i])


def exante_regret_from_gamma(gamma, bids, strategy, dist) -> float:
    gain = expected_envelope(gamma, bids, dist)
    return max(gain - exante_utility_from_gamma(gamma, bids, strategy, dist), 0.0)


def exante_regret(i: int, profile: Sequence[MonotoneStrategy], instance: AuctionInstance,
                  marginals: BidMarginals | None = None) -> float:
    """Expected gain of player ``i`` from switching to the pointwise best response."""
    if marginals is None:
        marginals = marginals_of(profile, instance.distributions)
    g = win_probs(i, marginals, instance.rule)
    return exante_regret_from_gamma(g, instance.bids, profile[i], instance.distributions[i])

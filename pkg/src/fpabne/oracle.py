"""Slow reference implementations used to cross-check the fast paths.

``enumerate_allocation`` walks every opponent bid profile and applies the
tie-breaking rule by hand, without going through the allocation engine.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .allocation import best_response_strategy, regret_sup_from_gamma, win_probs
from .model import (
    AuctionInstance,
    BidMarginals,
    ModelError,
    MonotoneStrategy,
    TieBreakingRule,
    marginals_of,
)
from .ptas import BudgetExceeded

ENUMERATION_CAP = 6


def _share(rule: TieBreakingRule, winners: list[int], i: int) -> float:
    """Share of ``i`` among ``winners`` read straight off the rule's tables."""
    if i not in winners:
        return 0.0
    k = len(winners)
    if k == 1:
        return 1.0
    if rule.variant == "uniform" or k >= 4:
        return 1.0 / k
    w = sorted(winners)
    if k == 2:
        low = rule.pairs.get((w[0], w[1]), 0.5)
        return low if i == w[0] else 1.0 - low
    s1, s2 = rule.triples.get((w[0], w[1], w[2]), (1.0 / 3.0, 1.0 / 3.0))
    return (s1, s2, 1.0 - s1 - s2)[w.index(i)]


def enumerate_allocation(i: int, j: int, marginals: BidMarginals, rule: TieBreakingRule,
                         cap: int = ENUMERATION_CAP) -> float:
    """Win probability of player ``i`` bidding ``b_j``, by full enumeration."""
    p = np.asarray(marginals.p)
    n, width = p.shape
    if n > cap:
        raise ModelError(f"enumeration limited to {cap} players, got {n}")
    others = [r for r in range(n) if r != i]
    total = 0.0
    for prof in itertools.product(range(width), repeat=len(others)):
        prob = 1.0
        for r, b in zip(others, prof):
            prob *= p[r, b]
        if prob == 0.0:
            continue
        bids = dict(zip(others, prof))
        bids[i] = j
        top = max(bids.values())
        winners = [r for r in range(n) if bids[r] == top]
        total += prob * _share(rule, winners, i)
    return total


def profile_shares(bid_profile: Sequence[int], rule: TieBreakingRule) -> list[float]:
    """Allocation of every player for one pure bid profile."""
    top = max(bid_profile)
    winners = [r for r, b in enumerate(bid_profile) if b == top]
    return [_share(rule, winners, r) for r in range(len(bid_profile))]


# ---------------------------------------------------------------------------
# exhaustive threshold search


@dataclass(frozen=True)
class GridSearchConfig:
    """Threshold grid spacing, early-stop regret and profile budget.

    With ``symmetric`` all players share one strategy, which is the only
    tractable mode beyond a handful of bids.
    """

    resolution: float = 0.1
    tolerance: float = 0.0
    max_profiles: int = 200_000
    symmetric: bool = False

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if not self.tolerance >= 0:
            raise ValueError("tolerance must be non-negative")


@dataclass(frozen=True)
class GridSearchResult:
    profile: tuple[MonotoneStrategy, ...]
    regret: float
    examined: int


def _grid(resolution: float) -> np.ndarray:
    steps = int(round(1.0 / resolution))
    return np.linspace(0.0, 1.0, steps + 1)


def _lowest_points(bids: np.ndarray, grid: np.ndarray) -> list[int]:
    # first grid index allowed for each threshold
    return [int(np.searchsorted(grid, b - 1e-12, side="left")) for b in bids[1:]]


def count_grid_strategies(bids: Sequence[float], resolution: float) -> int:
    grid = _grid(resolution)
    low = _lowest_points(np.asarray(bids, dtype=float), grid)
    if not low:
        return 1
    ways = np.ones(len(grid), dtype=object)  # sequences ending at each point
    ways[:low[0]] = 0
    for lo in low[1:]:
        ways = np.cumsum(ways)
        ways[:lo] = 0
    return int(ways.sum())


def grid_strategies(bids: Sequence[float], resolution: float) -> Iterator[MonotoneStrategy]:
    """Monotone non-overbidding threshold strategies on a value grid.

    Bid ``b_j`` is only used above ``tau_j``, so ``tau_j >= b_j`` rules out
    overbidding.
    """
    grid = _grid(resolution)
    low = _lowest_points(np.asarray(bids, dtype=float), grid)
    m = len(low)

    def extend(prefix: list[int], start: int):
        if len(prefix) == m:
            yield MonotoneStrategy(tuple(float(grid[k]) for k in prefix))
            return
        for k in range(max(start, low[len(prefix)]), len(grid)):
            yield from extend(prefix + [k], k)

    yield from extend([], 0)


def _max_sup_regret(profile, instance) -> float:
    marg = marginals_of(profile, instance.distributions)
    worst = 0.0
    for i, s in enumerate(profile):
        g = win_probs(i, marg, instance.rule)
        worst = max(worst, regret_sup_from_gamma(g, instance.bids, s, instance.distributions[i])[0])
    return worst


def grid_search_bne(instance: AuctionInstance, config: GridSearchConfig = GridSearchConfig()) -> GridSearchResult:
    """Profile on the threshold grid minimizing the largest sup regret.

    Stops early once a profile reaches ``config.tolerance``.
    """
    instance.require_valid()
    bids = instance.bids
    n = instance.n
    size = count_grid_strategies(bids, config.resolution)
    count = size if config.symmetric else size ** n
    if count > config.max_profiles:
        raise BudgetExceeded(count, config.max_profiles)
    pool = grid_strategies(bids, config.resolution)
    if config.symmetric:
        profiles = ((s,) * n for s in pool)
    else:
        profiles = itertools.product(list(pool), repeat=n)
    best, best_r, examined = None, np.inf, 0
    for prof in profiles:
        examined += 1
        r = _max_sup_regret(prof, instance)
        if r < best_r:
            best, best_r = tuple(prof), r
            if r <= config.tolerance:
                break
    return GridSearchResult(best, float(best_r), examined)


# ---------------------------------------------------------------------------
# best-response dynamics


@dataclass(frozen=True)
class DynamicsStep:
    profile: tuple[MonotoneStrategy, ...]
    regret: float


def best_response_dynamics(instance: AuctionInstance, start: Sequence[MonotoneStrategy],
                           rounds: int) -> list[DynamicsStep]:
    """Simultaneous pointwise best-response updates; no convergence claimed.

    The first entry is the start profile.  Iteration stops early once a
    round leaves the profile unchanged.
    """
    instance.require_valid()
    profile = tuple(start)
    traj = [DynamicsStep(profile, _max_sup_regret(profile, instance))]
    for _ in range(rounds):
        marg = marginals_of(profile, instance.distributions)
        new = tuple(best_response_strategy(win_probs(i, marg, instance.rule), instance.bids)
                    for i in range(instance.n))
        if new == profile:
            break
        profile = new
        traj.append(DynamicsStep(profile, _max_sup_regret(profile, instance)))
    return traj

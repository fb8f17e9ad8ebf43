"""Equilibrium verification and the approximate-to-well-supported converter."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocation import (
    envelope_value,
    exante_regret_from_gamma,
    regret_sup_from_gamma,
    upper_envelope,
    win_probs,
)
from .model import (
    AtomSplit,
    AuctionInstance,
    ModelError,
    MonotoneStrategy,
    ValueDistribution,
    bid_mass_moment,
    marginals_of,
)

VERIFY_TOL = 1e-10
WELLSUPPORTED = "wellsupported"
APPROXIMATE = "approximate"
EPSDELTA = "epsdelta"
NOTIONS = (WELLSUPPORTED, APPROXIMATE, EPSDELTA)


class ConversionError(ValueError):
    """The converter's precondition does not hold."""


@dataclass(frozen=True)
class PlayerCheck:
    sup_regret: float
    witness: float
    exante_regret: float
    overbid_probability: float
    overbids_somewhere: bool
    exceeds_vmax: bool


@dataclass(frozen=True)
class VerificationReport:
    notion: str
    epsilon: float
    delta: float | None
    players: tuple[PlayerCheck, ...]
    passed: bool
    failures: tuple[str, ...] = field(default=())

    @property
    def max_sup_regret(self) -> float:
        return max(p.sup_regret for p in self.players)

    @property
    def max_exante_regret(self) -> float:
        return max(p.exante_regret for p in self.players)


# ---------------------------------------------------------------------------
# overbidding


def overbidding_probability(strategy: MonotoneStrategy, dist: ValueDistribution,
                            bids: Sequence[float]) -> float:
    """Exact mass of ``{v : s(v) > v}``."""
    b = np.asarray(bids, dtype=float)
    tau = np.concatenate(([0.0], strategy.tau, [1.0]))
    total = 0.0
    for j in range(len(b)):
        lo, hi = tau[j], tau[j + 1]
        if hi <= lo or b[j] <= lo:
            continue
        if b[j] <= hi:
            total += dist.cdf_left(b[j]) - dist.cdf(lo)
        else:
            total += dist.cdf(hi) - dist.cdf(lo)
    for s in strategy.splits:
        w = dist.atom_mass(s.value)
        if w == 0.0:
            continue
        base = strategy.bid_index(s.value)
        if b[base] > s.value:
            total -= w
        total += w * sum(p for k, p in enumerate(s.probs) if p > 0 and b[s.first + k] > s.value)
    return float(min(max(total, 0.0), 1.0))


def overbids_somewhere(strategy: MonotoneStrategy, bids: Sequence[float]) -> bool:
    """Whether some value in [0, 1] bids above itself, mass or no mass."""
    b = np.asarray(bids, dtype=float)
    tau = np.concatenate(([0.0], strategy.tau, [1.0]))
    for j in range(len(b)):
        if tau[j + 1] > tau[j] and b[j] > tau[j] + 1e-12:
            return True
    for s in strategy.splits:
        if any(p > 0 and b[s.first + k] > s.value + 1e-12 for k, p in enumerate(s.probs)):
            return True
    return False


def exceeds_vmax(strategy: MonotoneStrategy, dist: ValueDistribution, bids: Sequence[float]) -> bool:
    mass, _ = bid_mass_moment(strategy, dist)
    b = np.asarray(bids, dtype=float)
    return bool(np.any((mass > VERIFY_TOL) & (b > dist.v_max + 1e-12)))


# ---------------------------------------------------------------------------
# verification


def _check_profile(profile, instance):
    if len(profile) != instance.n:
        raise ModelError(f"profile has {len(profile)} strategies for {instance.n} players")
    for i, s in enumerate(profile):
        if s.m != instance.m:
            raise ModelError(f"player {i}: strategy has {s.m} thresholds, bid space needs {instance.m}")
        issues = s.problems()
        if issues:
            raise ModelError(f"player {i}: " + "; ".join(issues))


def player_checks(profile: Sequence[MonotoneStrategy], instance: AuctionInstance) -> tuple[PlayerCheck, ...]:
    _check_profile(profile, instance)
    marg = marginals_of(profile, instance.distributions)
    bids = instance.bids
    out = []
    for i, (s, d) in enumerate(zip(profile, instance.distributions)):
        g = win_probs(i, marg, instance.rule)
        sup, wit = regret_sup_from_gamma(g, bids, s, d)
        out.append(PlayerCheck(
            sup_regret=sup,
            witness=wit,
            exante_regret=exante_regret_from_gamma(g, bids, s, d),
            overbid_probability=overbidding_probability(s, d, bids),
            overbids_somewhere=overbids_somewhere(s, bids),
            exceeds_vmax=exceeds_vmax(s, d, bids),
        ))
    return tuple(out)


def verify(profile, instance, notion: str, epsilon: float, delta: float | None = None) -> VerificationReport:
    """Check ``profile`` against one of the equilibrium notions."""
    if notion not in NOTIONS:
        raise ValueError(f"unknown notion {notion!r}")
    if notion == EPSDELTA and delta is None:
        raise ValueError("the epsdelta notion needs delta")
    checks = player_checks(profile, instance)
    failures = []
    for i, c in enumerate(checks):
        if notion == WELLSUPPORTED:
            if c.sup_regret > epsilon + VERIFY_TOL:
                failures.append(f"player {i}: sup regret {c.sup_regret:.6g} at v={c.witness:.6g}")
            if c.overbids_somewhere:
                failures.append(f"player {i}: overbids")
        else:
            if c.exante_regret > epsilon + VERIFY_TOL:
                failures.append(f"player {i}: ex-ante regret {c.exante_regret:.6g}")
            if notion == APPROXIMATE and c.overbid_probability > VERIFY_TOL:
                failures.append(f"player {i}: overbids with probability {c.overbid_probability:.6g}")
            if notion == EPSDELTA:
                if not c.overbid_probability < delta:
                    failures.append(f"player {i}: overbid probability {c.overbid_probability:.6g} >= {delta}")
                if c.exceeds_vmax:
                    failures.append(f"player {i}: bids above the top of its support")
    return VerificationReport(notion, float(epsilon), delta, checks, not failures, tuple(failures))


def verify_wellsupported(profile, instance, epsilon) -> VerificationReport:
    """Pass iff every player is within ``epsilon`` of a best response at every value."""
    return verify(profile, instance, WELLSUPPORTED, epsilon)


def verify_approximate(profile, instance, epsilon) -> VerificationReport:
    """Pass iff every player loses at most ``epsilon`` in expectation and never overbids."""
    return verify(profile, instance, APPROXIMATE, epsilon)


def verify_epsdelta(profile, instance, epsilon, delta) -> VerificationReport:
    return verify(profile, instance, EPSDELTA, epsilon, delta)


# ---------------------------------------------------------------------------
# conversion


def _sweep_points(gamma, bids, strategy, dist, deltas):
    """Values where the strategy, an atom, or a best-response set can change."""
    env = upper_envelope(gamma, bids)
    pts = [0.0, 1.0, *strategy.thresholds, *(s.value for s in strategy.splits),
           *(v for v, _ in dist.atoms), *bids, *env.breakpoints]
    for k, top in enumerate(env.bid):
        for j in range(len(bids)):
            dg = gamma[top] - gamma[j]
            if dg == 0:
                continue
            for d in deltas:
                pts.append((d + gamma[top] * bids[top] - gamma[j] * bids[j]) / dg)
    pts = np.unique(np.clip(np.asarray(pts, dtype=float), 0.0, 1.0))
    return pts


def _decide(v, current, cap, gamma, bids, lo_gap, hi_gap):
    """Converter decision at value ``v`` for a point that currently bids ``current``."""
    gap = envelope_value(v, gamma, bids) - gamma * (v - bids)
    ok = bids <= v + 1e-15
    in_lo = ok & (gap <= lo_gap + 1e-12)
    in_hi = ok & (gap <= hi_gap + 1e-12)
    if in_lo[current] and current <= cap:
        return current
    idx = np.arange(len(bids))
    if np.any(in_lo & (idx <= cap)):
        return int(idx[in_hi & (idx <= cap)].max())
    return int(cap)


@dataclass(frozen=True)
class Conversion:
    strategy: MonotoneStrategy
    changed_mass: float


def convert_strategy(gamma: np.ndarray, bids: np.ndarray, strategy: MonotoneStrategy,
                     dist: ValueDistribution, epsilon: float) -> Conversion:
    """Descending sweep for one player against fixed opponent allocations.

    The value line is cut at every point where the current bid, an atom,
    or membership of some bid in a near-best-response set can change.  On
    each open piece the decision is constant, so one evaluation per piece
    suffices; atoms are decided on their own and may become splits.
    """
    gamma = np.asarray(gamma, dtype=float)
    bids = np.asarray(bids, dtype=float)
    root = math.sqrt(epsilon)
    lo_gap, hi_gap = 4 * root, 5 * root
    pts = _sweep_points(gamma, bids, strategy, dist, (lo_gap, hi_gap))
    m = len(bids) - 1
    atoms = {v: w for v, w in dist.atoms}
    cap = m
    interval_bid = np.zeros(len(pts) - 1, dtype=int)
    point_law: dict[int, dict[int, float]] = {}
    changed = 0.0
    for k in range(len(pts) - 1, -1, -1):
        p = float(pts[k])
        w = atoms.get(p, 0.0)
        if w > 0 or p == 0.0:
            law = {}
            # higher bids of a split atom behave like higher values
            for j, prob in sorted(strategy.bid_law(p), reverse=True):
                d = _decide(p, j, cap, gamma, bids, lo_gap, hi_gap)
                cap = min(cap, d)
                law[d] = law.get(d, 0.0) + prob
                if d != j:
                    changed += w * prob
            point_law[k] = law
        if k == 0:
            break
        mid = 0.5 * (pts[k - 1] + p)
        j = strategy.bid_index(mid)
        d = _decide(mid, j, cap, gamma, bids, lo_gap, hi_gap)
        cap = min(cap, d)
        interval_bid[k - 1] = d
        if d != j:
            changed += dist.cdf_left(p) - dist.cdf(pts[k - 1])
    return Conversion(_assemble(pts, interval_bid, point_law, m), float(changed))


def _assemble(pts, interval_bid, point_law, m) -> MonotoneStrategy:
    tau = np.ones(m)
    for k in range(len(interval_bid) - 1, -1, -1):
        d = interval_bid[k]
        tau[:d] = pts[k]
    tau = np.maximum.accumulate(tau)
    splits = []
    for k, law in point_law.items():
        p = float(pts[k])
        first = int(np.searchsorted(tau, p, side="left"))
        last = int(np.searchsorted(tau, p, side="right"))
        probs = np.zeros(last - first + 1)
        for d, prob in law.items():
            probs[min(max(d, first), last) - first] += prob
        probs /= probs.sum()
        if probs[0] >= 1.0:
            continue
        splits.append(AtomSplit(p, first, tuple(float(x) for x in probs)))
    return MonotoneStrategy(tuple(float(t) for t in tau), tuple(splits))


def convert_to_wellsupported(profile: Sequence[MonotoneStrategy], instance: AuctionInstance,
                             epsilon: float, check: bool = True) -> tuple[MonotoneStrategy, ...]:
    """Turn an ``epsilon``-approximate equilibrium into a well-supported one.

    The output is monotone, never overbids and is a
    ``(2n + 10) sqrt(epsilon)``-well-supported equilibrium.  Each player's
    strategy changes on value mass at most ``sqrt(epsilon)``.
    """
    return tuple(c.strategy for c in convert_profile(profile, instance, epsilon, check))


def convert_profile(profile, instance, epsilon, check: bool = True) -> tuple[Conversion, ...]:
    if check:
        rep = verify_approximate(profile, instance, epsilon)
        if not rep.passed:
            raise ConversionError("input is not an approximate equilibrium: " + "; ".join(rep.failures))
    else:
        _check_profile(profile, instance)
    marg = marginals_of(profile, instance.distributions)
    return tuple(
        convert_strategy(win_probs(i, marg, instance.rule), instance.bids, s, d, epsilon)
        for i, (s, d) in enumerate(zip(profile, instance.distributions))
    )


def wellsupported_bound(n: int, epsilon: float) -> float:
    return (2 * n + 10) * math.sqrt(epsilon)


def change_mass(a: MonotoneStrategy, b: MonotoneStrategy, dist: ValueDistribution) -> float:
    """Value mass on which two strategies bid differently.

    Pieces between merged breakpoints are compared directly; at an atom the
    two bid laws are coupled optimally, so only their total-variation gap
    counts.
    """
    pts = np.unique(np.concatenate((
        [0.0, 1.0], a.tau, b.tau,
        [s.value for s in a.splits], [s.value for s in b.splits],
        [v for v, _ in dist.atoms],
    )))
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (lo + hi)
        if a.bid_index(mid) != b.bid_index(mid):
            total += dist.cdf_left(hi) - dist.cdf(lo)
    for v, w in dist.atoms:
        la = dict(a.bid_law(v))
        lb = dict(b.bid_law(v))
        overlap = sum(min(p, lb.get(j, 0.0)) for j, p in la.items())
        total += w * (1.0 - overlap)
    return float(total)

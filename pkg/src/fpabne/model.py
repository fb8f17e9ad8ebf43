"""Core auction objects.

Bid spaces, value distributions (atoms plus piecewise-constant densities),
tie-breaking rules, threshold strategies and the bid marginals a strategy
profile induces.  Everything here is an immutable value object.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

MASS_TOL = 1e-9
ROW_TOL = 1e-12
# cumulative masses closer than this are treated as equal when locating quantiles
SNAP = 1e-13


class ModelError(ValueError):
    """Raised when an object violates a model invariant."""


# ---------------------------------------------------------------------------
# bid space


@dataclass(frozen=True)
class BidSpace:
    """Ordered bid levels ``0 = b_0 < b_1 < ... < b_m <= 1``."""

    bids: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "bids", tuple(float(b) for b in self.bids))

    @property
    def m(self) -> int:
        return len(self.bids) - 1

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.bids, dtype=float)

    def problems(self) -> list[str]:
        out = []
        if len(self.bids) < 2:
            out.append("bid space needs at least two bids")
        if self.bids and self.bids[0] != 0.0:
            out.append("b_0 != 0")
        if any(not (0.0 <= b <= 1.0) for b in self.bids):
            out.append("bid outside [0, 1]")
        if any(a >= b for a, b in zip(self.bids, self.bids[1:])):
            out.append("bids not strictly increasing")
        return out


# ---------------------------------------------------------------------------
# value distributions


@dataclass(frozen=True)
class ValueDistribution:
    """Mixture of point masses and constant-density pieces on [0, 1].

    Parameters
    ----------
    atoms : sequence of (value, mass)
    pieces : sequence of (lo, hi, density)
        Each piece carries ``density * (hi - lo)`` mass spread uniformly on
        ``[lo, hi]``.
    """

    atoms: tuple[tuple[float, float], ...] = ()
    pieces: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple(sorted((float(v), float(w)) for v, w in self.atoms))
        pieces = tuple(sorted((float(a), float(b), float(d)) for a, b, d in self.pieces))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "pieces", pieces)

    # constructors -----------------------------------------------------------

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0) -> "ValueDistribution":
        return cls(pieces=((lo, hi, 1.0 / (hi - lo)),))

    @classmethod
    def point(cls, value: float) -> "ValueDistribution":
        return cls(atoms=((value, 1.0),))

    @classmethod
    def discrete(cls, values: Sequence[float], masses: Sequence[float]) -> "ValueDistribution":
        return cls(atoms=tuple((v, w) for v, w in zip(values, masses) if w > 0))

    # validation -------------------------------------------------------------

    def problems(self) -> list[str]:
        out = []
        for v, w in self.atoms:
            if not 0.0 <= v <= 1.0:
                out.append(f"atom value {v!r} outside [0, 1]")
            if not 0.0 < w <= 1.0:
                out.append(f"atom mass {w!r} outside (0, 1]")
        values = [v for v, _ in self.atoms]
        if len(set(values)) != len(values):
            out.append("atom values not distinct")
        for a, b, d in self.pieces:
            if not 0.0 <= a < b <= 1.0:
                out.append(f"piece [{a!r}, {b!r}] not a sub-interval of [0, 1]")
            if d < 0:
                out.append(f"negative density {d!r}")
        for (a0, b0, _), (a1, b1, _) in zip(self.pieces, self.pieces[1:]):
            if a1 < b0:
                out.append("density pieces overlap")
        if abs(self.total_mass - 1.0) > MASS_TOL:
            out.append(f"mass != 1 (total {self.total_mass!r})")
        if not self.atoms and not any(d > 0 for *_, d in self.pieces):
            out.append("empty support")
        return out

    @property
    def total_mass(self) -> float:
        return float(sum(w for _, w in self.atoms) + sum((b - a) * d for a, b, d in self.pieces))

    # component table --------------------------------------------------------

    @cached_property
    def _table(self):
        """Support split into value-ordered components.

        Density pieces are cut at atom locations so that each component is
        either a single atom or a stretch of constant positive density.
        Returns arrays (lo, hi, mass, density, is_atom, cum_before, mom_before).
        """
        cuts = sorted(v for v, _ in self.atoms)
        comps = []
        for a, b, d in self.pieces:
            if d <= 0:
                continue
            edges = [a] + [c for c in cuts if a < c < b] + [b]
            for lo, hi in zip(edges, edges[1:]):
                comps.append((lo, hi, d * (hi - lo), d, False))
        for v, w in self.atoms:
            if w > 0:
                comps.append((v, v, w, 0.0, True))
        # atoms sort before the piece that starts at the same value
        comps.sort(key=lambda c: (c[0], not c[4]))
        lo = np.array([c[0] for c in comps], dtype=float)
        hi = np.array([c[1] for c in comps], dtype=float)
        mass = np.array([c[2] for c in comps], dtype=float)
        dens = np.array([c[3] for c in comps], dtype=float)
        is_atom = np.array([c[4] for c in comps], dtype=bool)
        mom = np.where(is_atom, mass * lo, dens * (hi * hi - lo * lo) / 2.0)
        cum_before = np.concatenate(([0.0], np.cumsum(mass)[:-1])) if len(comps) else np.zeros(0)
        mom_before = np.concatenate(([0.0], np.cumsum(mom)[:-1])) if len(comps) else np.zeros(0)
        return lo, hi, mass, dens, is_atom, cum_before, mom_before

    @cached_property
    def v_max(self) -> float:
        """Largest point of the support."""
        lo, hi, *_ = self._table
        return float(hi.max()) if len(hi) else 0.0

    @cached_property
    def v_min(self) -> float:
        lo, *_ = self._table
        return float(lo.min()) if len(lo) else 0.0

    def atom_mass(self, v: float) -> float:
        return float(sum(w for a, w in self.atoms if a == v))

    # interval queries -------------------------------------------------------

    def _upto(self, v, strict: bool):
        lo, hi, mass, dens, is_atom, _, _ = self._table
        v = np.asarray(v, dtype=float)[..., None]
        if strict:
            atom_in = is_atom & (lo < v)
        else:
            atom_in = is_atom & (lo <= v)
        x = np.clip(v, lo, hi)
        piece_mass = np.where(is_atom, 0.0, dens * (x - lo))
        piece_mom = np.where(is_atom, 0.0, dens * (x * x - lo * lo) / 2.0)
        m = np.where(atom_in, mass, piece_mass).sum(axis=-1)
        mom = np.where(atom_in, mass * lo, piece_mom).sum(axis=-1)
        return m, mom

    def cdf(self, v):
        """``Pr[V <= v]``."""
        m, _ = self._upto(v, strict=False)
        return m if np.ndim(m) else float(m)

    def cdf_left(self, v):
        """``Pr[V < v]``."""
        m, _ = self._upto(v, strict=True)
        return m if np.ndim(m) else float(m)

    def moment_upto(self, v):
        """``E[V; V <= v]``."""
        _, mom = self._upto(v, strict=False)
        return mom if np.ndim(mom) else float(mom)

    def mass_between(self, a: float, b: float) -> float:
        """Mass of the half-open interval (a, b].

        Summed component by component rather than as a difference of CDF
        values, so small masses keep their relative precision.
        """
        if b <= a:
            return 0.0
        lo, hi, mass, dens, is_atom, _, _ = self._table
        atoms = mass[is_atom & (lo > a) & (lo <= b)].sum()
        span = np.clip(b, lo, hi) - np.clip(a, lo, hi)
        return float(atoms + (dens * span)[~is_atom].sum())

    # quantiles --------------------------------------------------------------

    def quantile_upper(self, c):
        """``sup{t in [0, 1] : F(t) <= c}``.

        Cumulative levels within ``SNAP`` of a component boundary are snapped
        onto it, so a level that exactly exhausts an atom places the threshold
        past that atom.
        """
        lo, hi, mass, dens, is_atom, cum_before, _ = self._table
        c = np.asarray(c, dtype=float)
        cum_after = cum_before + mass
        k = np.searchsorted(cum_after, c + SNAP, side="right")
        inside = k < len(lo)
        kk = np.minimum(k, len(lo) - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_piece = lo[kk] + (c - cum_before[kk]) / np.where(is_atom[kk], 1.0, dens[kk])
        t = np.where(is_atom[kk], lo[kk], np.clip(t_piece, lo[kk], hi[kk]))
        t = np.where(inside, t, 1.0)
        return t if t.ndim else float(t)

    def lorenz(self, c):
        """``G(c) = integral_0^c Q(u) du`` with Q the quantile function.

        ``G(c2) - G(c1)`` is the first moment carried by the ranks
        ``(c1, c2]``; this is how a monotone assignment of bids to value
        ranks is priced without building the strategy.
        """
        lo, hi, mass, dens, is_atom, cum_before, mom_before = self._table
        c = np.asarray(c, dtype=float)
        cum_after = cum_before + mass
        k = np.minimum(np.searchsorted(cum_after, c, side="left"), len(lo) - 1)
        dc = np.clip(c - cum_before[k], 0.0, mass[k])
        with np.errstate(divide="ignore", invalid="ignore"):
            quad = np.where(is_atom[k], 0.0, dc * dc / (2.0 * np.where(is_atom[k], 1.0, dens[k])))
        g = mom_before[k] + lo[k] * dc + quad
        return g if g.ndim else float(g)


def cdf(dist: ValueDistribution, v: float) -> float:
    """Right-continuous CDF with a domain check."""
    if not 0.0 <= v <= 1.0:
        raise ModelError(f"value {v!r} outside [0, 1]")
    return float(dist.cdf(v))


# ---------------------------------------------------------------------------
# tie-breaking


UNIFORM = "uniform"
TRILATERAL = "trilateral"


@dataclass(frozen=True)
class TieBreakingRule:
    """Uniform or trilateral tie-breaking.

    For the trilateral variant ``pairs[(i, j)]`` (i < j) is the share of the
    lower index in a two-way tie and ``triples[(i, j, k)]`` (i < j < k)
    gives the shares of the two lower indices in a three-way tie.  Missing
    entries default to an even split; ties of four or more are split evenly.
    """

    variant: str = UNIFORM
    pairs: Mapping[tuple[int, int], float] = field(default_factory=dict)
    triples: Mapping[tuple[int, int, int], tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def uniform(cls) -> "TieBreakingRule":
        return cls(UNIFORM)

    @classmethod
    def trilateral(cls, pairs=None, triples=None) -> "TieBreakingRule":
        return cls(
            TRILATERAL,
            {tuple(k): float(v) for k, v in (pairs or {}).items()},
            {tuple(k): (float(v[0]), float(v[1])) for k, v in (triples or {}).items()},
        )

    @property
    def is_uniform(self) -> bool:
        return self.variant == UNIFORM

    def pair_share(self, i: int, j: int) -> float:
        """Share of ``i`` when exactly ``i`` and ``j`` tie."""
        if self.is_uniform:
            return 0.5
        if i < j:
            return self.pairs.get((i, j), 0.5)
        return 1.0 - self.pairs.get((j, i), 0.5)

    def triple_share(self, i: int, j: int, k: int) -> float:
        """Share of ``i`` when exactly ``i``, ``j`` and ``k`` tie."""
        if self.is_uniform:
            return 1.0 / 3.0
        key = tuple(sorted((i, j, k)))
        s1, s2 = self.triples.get(key, (1.0 / 3.0, 1.0 / 3.0))
        pos = key.index(i)
        return (s1, s2, 1.0 - s1 - s2)[pos]

    def shares(self, winners: Sequence[int]) -> dict[int, float]:
        """Allocation among the set of highest bidders."""
        w = sorted(set(winners))
        if len(w) == 1:
            return {w[0]: 1.0}
        if self.is_uniform or len(w) >= 4:
            return {p: 1.0 / len(w) for p in w}
        if len(w) == 2:
            a = self.pairs.get((w[0], w[1]), 0.5)
            return {w[0]: a, w[1]: 1.0 - a}
        s1, s2 = self.triples.get(tuple(w), (1.0 / 3.0, 1.0 / 3.0))
        return {w[0]: s1, w[1]: s2, w[2]: 1.0 - s1 - s2}

    def share_tables(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense share arrays ``pair[i, j]`` and ``triple[i, j, k]`` for ``n`` players."""
        cache = self.__dict__.setdefault("_tables", {})
        if n not in cache:
            pair = np.full((n, n), 0.5)
            triple = np.full((n, n, n), 1.0 / 3.0)
            if not self.is_uniform:
                for (i, j), w in self.pairs.items():
                    if j < n:
                        pair[i, j], pair[j, i] = w, 1.0 - w
                for (i, j, k), (s1, s2) in self.triples.items():
                    if k < n:
                        s3 = 1.0 - s1 - s2
                        for a, b, c, w in ((i, j, k, s1), (j, i, k, s2), (k, i, j, s3)):
                            triple[a, b, c] = triple[a, c, b] = w
            cache[n] = (pair, triple)
        return cache[n]

    def problems(self, n: int) -> list[str]:
        out = []
        if self.variant not in (UNIFORM, TRILATERAL):
            out.append(f"unknown tie-breaking variant {self.variant!r}")
        for (i, j), w in self.pairs.items():
            if not 0 <= i < j < n:
                out.append(f"pair index ({i}, {j}) invalid for n={n}")
            if not 0.0 <= w <= 1.0:
                out.append(f"pair weight {w!r} outside [0, 1]")
        for (i, j, k), (s1, s2) in self.triples.items():
            if not 0 <= i < j < k < n:
                out.append(f"triple index ({i}, {j}, {k}) invalid for n={n}")
            if s1 < 0 or s2 < 0 or s1 + s2 > 1.0 + 1e-12:
                out.append(f"triple weights ({s1!r}, {s2!r}) invalid")
        return out


# ---------------------------------------------------------------------------
# instance


@dataclass(frozen=True)
class AuctionInstance:
    """First-price auction: bid levels, one prior per bidder, a tie rule."""

    bid_space: BidSpace
    distributions: tuple[ValueDistribution, ...]
    rule: TieBreakingRule = field(default_factory=TieBreakingRule.uniform)

    def __post_init__(self):
        object.__setattr__(self, "distributions", tuple(self.distributions))

    @property
    def n(self) -> int:
        return len(self.distributions)

    @property
    def m(self) -> int:
        return self.bid_space.m

    @property
    def bids(self) -> np.ndarray:
        return self.bid_space.array

    def require_valid(self) -> "AuctionInstance":
        report = validate_instance(self)
        if report:
            raise ModelError("; ".join(report))
        return self


def validate_instance(instance: AuctionInstance) -> list[str]:
    """List of violated invariants, empty when the instance is valid."""
    out = []
    if instance.n < 2:
        out.append("need at least two players")
    out.extend(instance.bid_space.problems())
    for i, d in enumerate(instance.distributions):
        out.extend(f"player {i}: {p}" for p in d.problems())
    out.extend(instance.rule.problems(instance.n))
    return out


# ---------------------------------------------------------------------------
# strategies


@dataclass(frozen=True)
class AtomSplit:
    """Randomization over bids ``first, first+1, ...`` at an atom ``value``."""

    value: float
    first: int
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "first", int(self.first))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))


@dataclass(frozen=True)
class MonotoneStrategy:
    """Non-decreasing bidding strategy in threshold form.

    ``thresholds`` holds ``tau_1 <= ... <= tau_m``; bid ``b_j`` is used on
    ``(tau_j, tau_{j+1}]`` with ``tau_0 = 0`` and ``tau_{m+1} = 1`` (value 0
    itself bids ``b_0``).  A split at value ``a`` replaces the bid there by a
    lottery over the bids whose thresholds meet at ``a``.
    """

    thresholds: tuple[float, ...]
    splits: tuple[AtomSplit, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "splits", tuple(sorted(self.splits, key=lambda s: s.value)))

    @classmethod
    def constant(cls, j: int, m: int) -> "MonotoneStrategy":
        """Always bid ``b_j``."""
        return cls(tuple([0.0] * j + [1.0] * (m - j)))

    @property
    def m(self) -> int:
        return len(self.thresholds)

    @cached_property
    def tau(self) -> np.ndarray:
        return np.asarray(self.thresholds, dtype=float)

    @cached_property
    def _split_map(self) -> dict[float, AtomSplit]:
        return {s.value: s for s in self.splits}

    def bid_index(self, v: float) -> int:
        """Index of the bid used at ``v`` ignoring any split."""
        return int(np.searchsorted(self.tau, v, side="left"))

    def bid_law(self, v: float) -> list[tuple[int, float]]:
        """Bids used at ``v`` with their probabilities."""
        s = self._split_map.get(float(v))
        if s is None:
            return [(self.bid_index(v), 1.0)]
        return [(s.first + k, p) for k, p in enumerate(s.probs) if p > 0]

    def problems(self) -> list[str]:
        out = []
        t = self.thresholds
        if any(not 0.0 <= x <= 1.0 for x in t):
            out.append("threshold outside [0, 1]")
        if any(a > b for a, b in zip(t, t[1:])):
            out.append("thresholds not non-decreasing")
        for s in self.splits:
            lo = int(np.searchsorted(self.tau, s.value, side="left"))
            hi = int(np.searchsorted(self.tau, s.value, side="right"))
            if s.first != lo or s.first + len(s.probs) - 1 != hi:
                out.append(f"split at {s.value!r} does not span the bids meeting there")
            if any(p < 0 for p in s.probs) or abs(sum(s.probs) - 1.0) > ROW_TOL:
                out.append(f"split at {s.value!r} is not a probability vector")
        values = [s.value for s in self.splits]
        if len(set(values)) != len(values):
            out.append("duplicate split values")
        return out


# ---------------------------------------------------------------------------
# marginals


@dataclass(frozen=True, eq=False)
class BidMarginals:
    """``p[i, j]``: probability that player ``i`` bids ``b_j``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float, copy=True)
        if p.ndim != 2:
            raise ModelError("marginals must be a matrix")
        if np.any(p < -ROW_TOL) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ModelError("marginal rows must be probability vectors")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def m(self) -> int:
        return self.p.shape[1] - 1

    def cumulative(self) -> np.ndarray:
        """``F[i, j] = Pr[player i bids <= b_j]``."""
        return np.cumsum(self.p, axis=1)

    def __eq__(self, other):
        return isinstance(other, BidMarginals) and np.array_equal(self.p, other.p)


def bid_mass_moment(strategy: MonotoneStrategy, dist: ValueDistribution):
    """Per-bid value mass and first moment carried by ``strategy``.

    Returns two arrays of length m+1: ``mass[j] = Pr[s(V) = b_j]`` and
    ``moment[j] = E[V; s(V) = b_j]``.
    """
    tau = strategy.tau
    if np.any(tau < 0) or np.any(tau > 1):
        raise ModelError("threshold outside [0, 1]")
    edges = np.concatenate((tau, [1.0]))
    cm, mom = dist._upto(edges, strict=False)
    cm = np.concatenate(([0.0], cm))
    mom = np.concatenate(([0.0], mom))
    mass = np.diff(cm)
    moment = np.diff(mom)
    for s in strategy.splits:
        w = dist.atom_mass(s.value)
        if w == 0.0:
            continue
        mass[s.first] -= w
        moment[s.first] -= w * s.value
        for k, p in enumerate(s.probs):
            mass[s.first + k] += w * p
            moment[s.first + k] += w * p * s.value
    return np.maximum(mass, 0.0), moment


def marginals_of(profile: Sequence[MonotoneStrategy], dists: Sequence[ValueDistribution]) -> BidMarginals:
    """Bid marginals induced by a strategy profile."""
    if len(profile) != len(dists):
        raise ModelError("profile and distributions differ in length")
    rows = [bid_mass_moment(s, d)[0] for s, d in zip(profile, dists)]
    rows = [r / r.sum() for r in rows]
    return BidMarginals(np.vstack(rows))


def monotone_analogue(row: Sequence[float], dist: ValueDistribution) -> MonotoneStrategy:
    """Monotone strategy under ``dist`` whose bid marginal is ``row``.

    Lower bids go to lower value ranks.  Threshold ``tau_j`` is the upper
    quantile of the cumulative mass of bids below ``b_j``; a cumulative level
    falling inside an atom produces a split of that atom.
    """
    q = np.asarray(row, dtype=float)
    if q.ndim != 1 or len(q) < 2 or np.any(q < -ROW_TOL) or abs(q.sum() - 1.0) > 1e-9:
        raise ModelError("row is not a probability vector")
    q = np.clip(q, 0.0, None)
    cum = np.concatenate(([0.0], np.cumsum(q)))
    cum[-1] = 1.0
    levels = np.clip(cum[1:-1], 0.0, 1.0)
    tau = np.atleast_1d(dist.quantile_upper(levels)).astype(float)
    tau = np.maximum.accumulate(tau)
    splits = []
    lo, hi, mass, dens, is_atom, cum_before, _ = dist._table
    for k in np.flatnonzero(is_atom):
        a = float(lo[k])
        first = int(np.searchsorted(tau, a, side="left"))
        last = int(np.searchsorted(tau, a, side="right"))
        if last == first:
            continue
        c0, c1 = cum_before[k], cum_before[k] + mass[k]
        probs = []
        for j in range(first, last + 1):
            overlap = min(cum[j + 1], c1) - max(cum[j], c0)
            probs.append(max(overlap, 0.0))
        probs = np.asarray(probs)
        probs[probs < SNAP * max(1.0, mass[k])] = 0.0
        total = probs.sum()
        if total <= 0:
            continue
        probs = probs / total
        if probs[0] == 1.0:
            continue
        splits.append(AtomSplit(a, first, tuple(float(p) for p in probs)))
    return MonotoneStrategy(tuple(float(t) for t in tau), tuple(splits))

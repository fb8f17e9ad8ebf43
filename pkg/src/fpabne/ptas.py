"""Approximation scheme for uniform tie-breaking.

Pipeline: coarsen the bid space, coarsen and truncate the value
distributions, search a grid of bid histograms for one that admits a
player-to-histogram assignment in which everybody nearly best-responds,
then lift the assigned histograms back to monotone strategies on the
original auction and verify them there.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .allocation import exante_regret, exante_regret_from_gamma, win_probs
from .equilibrium import VERIFY_TOL, overbidding_probability, verify_approximate
from .model import (
    AtomSplit,
    AuctionInstance,
    BidMarginals,
    BidSpace,
    ModelError,
    MonotoneStrategy,
    TieBreakingRule,
    ValueDistribution,
    monotone_analogue,
)

DEFAULT_BUDGET = 5_000_000
BATCH = 2048


class BudgetExceeded(RuntimeError):
    """The candidate space is larger than the allowed budget."""

    def __init__(self, bound: int, budget: int):
        super().__init__(f"candidate space of size {bound} exceeds budget {budget}")
        self.bound = bound
        self.budget = budget


class SolveError(RuntimeError):
    """The lifted profile failed verification on the original instance."""


def default_budget() -> int:
    return int(os.environ.get("FPABNE_BUDGET", DEFAULT_BUDGET))


@dataclass(frozen=True)
class PtasParams:
    """Accuracy schedule.

    ``search_epsilon`` defaults to ``epsilon / 16`` and ``delta`` to
    ``epsilon**2 / 2816``; with these the search tolerance, truncation and
    bid rounding losses add up to ``epsilon``.  ``omega`` fixes the grid of
    histogram masses; when omitted the grids ``1, 1/2, 1/3, ...`` are tried
    in turn for as long as they fit the budget.
    """

    epsilon: float
    omega: float | None = None
    delta: float | None = None
    search_epsilon: float | None = None
    budget: int = field(default_factory=default_budget)

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.omega is not None:
            q = round(1.0 / self.omega)
            if not 0.0 < self.omega <= 1.0 or abs(q * self.omega - 1.0) > 1e-9:
                raise ValueError("omega must be 1/q for a positive integer q")
        if not 0.0 < self.eps0 <= self.epsilon:
            raise ValueError("search_epsilon must lie in (0, epsilon]")
        if not 0.0 < self.trunc < self.eps0 / 20:
            raise ValueError("delta must lie in (0, search_epsilon/20)")
        if self.budget < 1:
            raise ValueError("budget must be positive")

    @property
    def eps0(self) -> float:
        return self.search_epsilon if self.search_epsilon is not None else self.epsilon / 16

    @property
    def trunc(self) -> float:
        return self.delta if self.delta is not None else self.epsilon ** 2 / 2816

    def bound_chain(self) -> dict:
        """Guarantees at each stage of the pipeline."""
        e0, d = self.eps0, self.trunc
        return {
            "search": 2 * e0,
            "lifted_rounded_bids": 4 * e0 + 11 * d / e0,
            "original": self.epsilon,
        }


# ---------------------------------------------------------------------------
# rounding


def round_bids(bid_space: BidSpace, epsilon: float) -> BidSpace:
    """Keep 0 and the largest bid of every bucket of width ``epsilon / 10``."""
    width = epsilon / 10.0
    best: dict[int, float] = {}
    for b in bid_space.bids[1:]:
        t = max(1, math.ceil(b / width - 1e-9))
        best[t] = max(best.get(t, 0.0), b)
    return BidSpace((0.0, *sorted(best.values())))


def round_distribution(dist: ValueDistribution, epsilon: float, delta: float = 0.0) -> ValueDistribution:
    """Round values down to multiples of ``epsilon / 10`` and trim ``delta`` per atom.

    Every bucket ``[t g, (t+1) g)`` collapses onto ``t g`` and loses up to
    ``delta`` of its mass; the trimmed mass moves to 0.
    """
    g = epsilon / 10.0
    count = math.ceil(10.0 / epsilon - 1e-9)
    edges = np.arange(count + 1) * g
    left = np.asarray(dist.cdf_left(edges[:-1]), dtype=float)
    right = np.append(left[1:], 1.0)
    right[-1] = dist.total_mass
    mass = np.maximum(right - left, 0.0)
    kept = np.maximum(mass - delta, 0.0)
    kept[0] += 1.0 - kept.sum()
    return ValueDistribution(atoms=tuple(
        (float(t * g), float(w)) for t, w in enumerate(kept) if w > 0
    ))


# ---------------------------------------------------------------------------
# candidate grid


@dataclass(frozen=True)
class CandidateProfile:
    """Histograms for ``R`` slots plus the implied default players.

    ``level`` is the number of top bid levels (minus one) that may carry
    mass besides ``b_0``; ``k[j]`` is the total mass on bid ``b_{m-j}``.
    """

    level: int
    k: tuple[float, ...]
    rows: tuple[tuple[float, ...], ...]

    @property
    def slots(self) -> int:
        return len(self.rows)


def composition_rows(m: int, q: int) -> np.ndarray:
    """All vectors of ``m + 1`` non-negative integers summing to ``q``.

    Rows are sorted so that more mass on low bids comes first; the all-``b_0``
    row is row 0.
    """
    parts = m + 1
    out = []
    for cut in itertools.combinations(range(q + parts - 1), parts - 1):
        prev, row = -1, []
        for c in cut:
            row.append(c - prev - 1)
            prev = c
        row.append(q + parts - 2 - prev)
        out.append(row)
    rows = np.array(out, dtype=np.int64).reshape(-1, parts)
    order = np.lexsort(tuple(rows[:, k] for k in range(parts - 1, -1, -1)))[::-1]
    return rows[order]


def row_level(counts: np.ndarray) -> np.ndarray:
    """Smallest level admitting each row (0 when only ``b_0`` is used)."""
    counts = np.atleast_2d(counts)
    m = counts.shape[1] - 1
    nz = counts[:, 1:] > 0
    lowest = np.where(nz.any(axis=1), nz.argmax(axis=1) + 1, m)
    return np.maximum(0, m - lowest)


def level_cap(epsilon: float) -> int:
    return math.ceil(10.0 / epsilon - 1e-9)


def slot_count(n: int | None, m: int, epsilon: float, omega: float) -> int:
    r = math.ceil(100 * (m + 1) / (epsilon * omega) - 1e-9)
    return r if n is None else min(n, r)


def _cap_ok(level: int, colsum: np.ndarray, cap_units: float) -> bool:
    m = len(colsum) - 1
    return bool(np.all(colsum[m - level:] <= cap_units + 1e-9))


def _candidate_key(level, colsum, idx):
    m = len(colsum) - 1
    return (int(level), tuple(int(colsum[m - j]) for j in range(level + 1)), tuple(int(x) for x in idx))


def enumerate_candidates(m: int, epsilon: float, omega: float, n: int | None = None,
                         ordered: bool = True, budget: int | None = None) -> Iterator[CandidateProfile]:
    """Stream the candidate grid in canonical order.

    With ``ordered`` every ordering of the slot rows is a separate candidate;
    otherwise one representative per multiset is produced.  The budget is
    checked against the size of the space before anything is generated.
    """
    q = round(1.0 / omega)
    rows = composition_rows(m, q)
    r = slot_count(n, m, epsilon, omega)
    size = len(rows) ** r if ordered else math.comb(len(rows) + r - 1, r)
    budget = default_budget() if budget is None else budget
    if size > budget:
        raise BudgetExceeded(size, budget)
    cap_units = level_cap(epsilon) * q
    levels = row_level(rows)
    gen = itertools.product(range(len(rows)), repeat=r) if ordered \
        else itertools.combinations_with_replacement(range(len(rows)), r)
    keyed = []
    for idx in gen:
        idx = np.asarray(idx, dtype=int)
        lvl = int(levels[idx].max()) if r else 0
        colsum = rows[idx].sum(axis=0) if r else np.zeros(m + 1, dtype=int)
        if not _cap_ok(lvl, colsum, cap_units):
            continue
        keyed.append((_candidate_key(lvl, colsum, idx), idx))
    keyed.sort(key=lambda t: t[0])
    for key, idx in keyed:
        lvl, kq, _ = key
        yield CandidateProfile(
            lvl,
            tuple(k / q for k in kq),
            tuple(tuple(float(c) / q for c in rows[i]) for i in idx),
        )


# ---------------------------------------------------------------------------
# matching


def perfect_matching(edges: Sequence[Sequence[int]], n_right: int | None = None) -> list[int] | None:
    """Perfect matching of a bipartite graph by augmenting paths.

    ``edges[u]`` lists the right vertices adjacent to left vertex ``u``.
    Returns ``match[u]`` for every left vertex, or None.  The search visits
    neighbours in the given order, so the result is deterministic.
    """
    n_left = len(edges)
    n_right = n_left if n_right is None else n_right
    if n_left != n_right:
        return None
    owner = [-1] * n_right

    def augment(u, seen):
        # a free neighbour first, so easy graphs keep the given order
        for v in edges[u]:
            if owner[v] == -1 and not seen[v]:
                seen[v] = True
                owner[v] = u
                return True
        for v in edges[u]:
            if seen[v]:
                continue
            seen[v] = True
            if augment(owner[v], seen):
                owner[v] = u
                return True
        return False

    for u in range(n_left):
        if not augment(u, [False] * n_right):
            return None
    match = [-1] * n_left
    for v, u in enumerate(owner):
        match[u] = v
    return match


# ---------------------------------------------------------------------------
# per-type row tables


@dataclass
class _RowTable:
    """Utility pieces of every grid row for one value distribution.

    Bidding with histogram ``row`` (as its monotone analogue) against win
    probabilities ``gamma`` yields utility ``gamma @ piece[row]``.
    """

    dist: ValueDistribution
    piece: np.ndarray
    overbid: np.ndarray
    allowed: np.ndarray
    atom_v: np.ndarray
    atom_w: np.ndarray

    @classmethod
    def build(cls, dist: ValueDistribution, rows: np.ndarray, bids: np.ndarray, delta: float):
        probs = rows / rows.sum(axis=1, keepdims=True)
        cum = np.concatenate((np.zeros((len(rows), 1)), np.cumsum(probs, axis=1)), axis=1)
        cum[:, -1] = 1.0
        g = np.asarray(dist.lorenz(np.clip(cum, 0.0, 1.0)))
        piece = np.diff(g, axis=1) - bids * probs
        below = np.asarray(dist.cdf_left(bids))
        over = np.maximum(0.0, np.minimum(cum[:, 1:], below) - cum[:, :-1]).sum(axis=1)
        too_high = ((probs > 0) & (bids > dist.v_max + 1e-12)).any(axis=1)
        allowed = (over < delta) & ~too_high
        atoms = np.array(dist.atoms, dtype=float).reshape(-1, 2)
        return cls(dist, piece, over, allowed, atoms[:, 0], atoms[:, 1])

    def best_value(self, gamma: np.ndarray, bids: np.ndarray) -> np.ndarray:
        """Expected utility of the pointwise best response, per gamma row."""
        out = np.empty(len(gamma))
        for s in range(0, len(gamma), BATCH):
            g = gamma[s:s + BATCH]
            u = g[:, None, :] * (self.atom_v[None, :, None] - bids[None, None, :])
            out[s:s + BATCH] = u.max(axis=2) @ self.atom_w
        return out


def _uniform_gamma(other_probs: np.ndarray) -> np.ndarray:
    """Win probabilities under uniform ties, batched over opponent sets.

    ``other_probs`` has shape (batch, opponents, m+1).
    """
    batch, k, width = other_probs.shape
    below = np.clip(np.cumsum(other_probs, axis=2) - other_probs, 0.0, 1.0)
    coef = np.zeros((batch, k + 1, width))
    coef[:, 0] = 1.0
    for r in range(k):
        at = other_probs[:, r][:, None, :]
        bl = below[:, r][:, None, :]
        new = coef * bl
        new[:, 1:] += coef[:, :-1] * at
        coef = new
    w = 1.0 / (np.arange(k + 1) + 1.0)
    return np.clip(np.einsum("bkj,k->bj", coef, w), 0.0, 1.0)


def _multiset_rank(idx: np.ndarray, comb_table: np.ndarray) -> np.ndarray:
    """Colex rank of sorted multisets (rows of ``idx``) among same-size multisets."""
    k = idx.shape[1]
    c = idx + np.arange(k)
    rank = np.zeros(len(idx), dtype=np.int64)
    for t in range(k):
        rank += comb_table[c[:, t], t + 1]
    return rank


def _comb_table(n_max: int, k_max: int) -> np.ndarray:
    tab = np.zeros((n_max + 1, k_max + 2), dtype=np.int64)
    for a in range(n_max + 1):
        for b in range(k_max + 2):
            tab[a, b] = math.comb(a, b)
    return tab


def _multisets(n_items: int, size: int) -> np.ndarray:
    if size == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.combinations_with_replacement(range(n_items), size)),
                    dtype=np.int64).reshape(-1, size)


# ---------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class SolveResult:
    status: str
    profile: tuple[MonotoneStrategy, ...] | None
    certificate: dict

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class _Search:
    found: tuple | None
    assignment: list[int] | None
    examined: int
    best_regret: float


def _types(dists):
    seen, labels = [], []
    for d in dists:
        for t, e in enumerate(seen):
            if e == d:
                labels.append(t)
                break
        else:
            seen.append(d)
            labels.append(len(seen) - 1)
    return seen, labels


def size_bound(n_rows: int, slots: int) -> int:
    return math.comb(n_rows + slots - 1, slots)


def _search_full(rows, tables, labels, bids, tol, cap_units, q, budget) -> _Search:
    """Every player gets a slot: scan all multisets of ``n`` rows."""
    n = len(labels)
    usable = np.zeros(len(rows), dtype=bool)
    for t in tables:
        usable |= t.allowed
    keep = np.flatnonzero(usable)
    n_rows = len(keep)
    bound = size_bound(n_rows, n)
    if bound > budget:
        raise BudgetExceeded(bound, budget)
    if n_rows == 0:
        return _Search(None, None, 0, math.inf)
    sub = rows[keep]
    probs = sub / q
    others = _multisets(n_rows, n - 1)
    gamma = _uniform_gamma(probs[others]) if n > 1 else np.ones((1, len(bids)))
    # feasible[t][o, r]: row r is an acceptable reply for type t against opponents o
    feasible, regret = [], []
    for t in tables:
        best = t.best_value(gamma, bids)
        reg = best[:, None] - gamma @ t.piece[keep].T
        regret.append(reg)
        feasible.append((reg <= tol + VERIFY_TOL) & t.allowed[keep][None, :])
    cands = _multisets(n_rows, n)
    levels = row_level(sub)[cands].max(axis=1)
    colsum = sub[cands].sum(axis=1)
    m = len(bids) - 1
    tail = np.arange(m + 1)[None, :] >= (m - levels)[:, None]
    cap_ok = np.all(~tail | (colsum <= cap_units), axis=1)
    comb = _comb_table(n_rows + n, n)
    where = np.empty(len(others), dtype=np.int64)
    where[_multiset_rank(others, comb)] = np.arange(len(others))
    # position in ``others`` of the candidate with slot s removed
    drop_rank = np.empty((len(cands), n), dtype=np.int64)
    for s in range(n):
        rest = np.delete(cands, s, axis=1)
        drop_rank[:, s] = where[_multiset_rank(rest, comb)]
    slot_ok = np.zeros((len(cands), len(tables), n), dtype=bool)
    slot_reg = np.full((len(cands), n), np.inf)
    for ti, (f, reg) in enumerate(zip(feasible, regret)):
        for s in range(n):
            slot_ok[:, ti, s] = f[drop_rank[:, s], cands[:, s]]
            slot_reg[:, s] = np.minimum(slot_reg[:, s], reg[drop_rank[:, s], cands[:, s]])
    label_arr = np.asarray(labels)
    player_ok = slot_ok[:, label_arr, :]
    quick = cap_ok & player_ok.any(axis=2).all(axis=1) & player_ok.any(axis=1).all(axis=1)
    best_regret = float(np.where(cap_ok, slot_reg.max(axis=1), np.inf).min())
    hits = np.flatnonzero(quick)
    winners = []
    for h in hits:
        adj = [list(np.flatnonzero(player_ok[h, i])) for i in range(n)]
        match = perfect_matching(adj)
        if match is not None:
            key = _candidate_key(levels[h], colsum[h], keep[cands[h]])
            winners.append((key, h, match))
    if not winners:
        return _Search(None, None, len(cands), best_regret)
    key, h, match = min(winners, key=lambda w: w[0])
    return _Search(tuple(int(x) for x in keep[cands[h]]), match, len(cands), best_regret)


def feasible_edge(row: Sequence[float], other_rows: Sequence[Sequence[float]], dist: ValueDistribution,
                  bids: Sequence[float], tolerance: float, delta: float) -> bool:
    """Whether a player with prior ``dist`` accepts histogram ``row``.

    The row is played as its monotone analogue against opponents whose bid
    histograms are ``other_rows``; it must be within ``tolerance`` of a best
    response in expectation, overbid with probability below ``delta`` and
    never bid above the top of the support.
    """
    bids = np.asarray(bids, dtype=float)
    strat = monotone_analogue(row, dist)
    marg = BidMarginals(np.vstack([np.asarray(row, dtype=float)] + [np.asarray(r, dtype=float) for r in other_rows]))
    g = win_probs(0, marg, TieBreakingRule.uniform())
    if exante_regret_from_gamma(g, bids, strat, dist) > tolerance + VERIFY_TOL:
        return False
    if not overbidding_probability(strat, dist, bids) < delta:
        return False
    r = np.asarray(row, dtype=float)
    return not np.any((r > 0) & (bids > dist.v_max + 1e-12))


def _search_slots(rows, dists, labels, bids, tol, delta, epsilon, omega, budget) -> _Search:
    """Fewer slots than players: walk the canonical order with explicit edges."""
    n = len(labels)
    m = len(bids) - 1
    examined = 0
    best = math.inf
    q = round(1.0 / omega)
    default = tuple([1.0] + [0.0] * m)
    for cand in enumerate_candidates(m, epsilon, omega, n=n, ordered=False, budget=budget):
        examined += 1
        slots = list(cand.rows) + [default] * (n - cand.slots)
        adj = []
        for i in range(n):
            adj.append([s for s in range(n) if feasible_edge(
                slots[s], slots[:s] + slots[s + 1:], dists[i], bids, tol, delta)])
        match = perfect_matching(adj)
        if match is not None:
            idx = tuple(_row_index(rows, np.round(np.asarray(r) * q).astype(int)) for r in slots)
            return _Search(idx, match, examined, 0.0)
    return _Search(None, None, examined, best)


def _row_index(rows, row):
    return int(np.flatnonzero((rows == row).all(axis=1))[0])


def embed_strategy(strategy: MonotoneStrategy, coarse: Sequence[float], fine: Sequence[float]) -> MonotoneStrategy:
    """Rewrite a strategy over a sub-bid-space in the indices of the full space."""
    fine = list(fine)
    pos = [fine.index(b) for b in coarse]
    m = len(fine) - 1
    tau = np.ones(m)
    # fine bid k is reached once the coarse bid at or above it is reached
    for j in range(1, len(coarse)):
        lo = pos[j - 1] + 1
        tau[lo - 1:pos[j]] = strategy.tau[j - 1]
    if pos[-1] < m:
        tau[pos[-1]:] = 1.0
    tau = np.maximum.accumulate(tau)
    splits = []
    for s in strategy.splits:
        first = pos[s.first]
        probs = np.zeros(pos[s.first + len(s.probs) - 1] - first + 1)
        for k, p in enumerate(s.probs):
            probs[pos[s.first + k] - first] = p
        splits.append(AtomSplit(s.value, first, tuple(float(p) for p in probs)))
    return MonotoneStrategy(tuple(float(t) for t in tau), tuple(splits))


def solve_ptas(instance: AuctionInstance, params: PtasParams) -> SolveResult:
    """Approximate equilibrium of a uniform tie-breaking auction.

    Raises BudgetExceeded if even the coarsest admissible grid is too large
    and SolveError if the lifted profile fails the final check.  A grid
    search that finds nothing yields a result with status
    ``"grid_exhausted"``.
    """
    instance.require_valid()
    if not instance.rule.is_uniform:
        raise ModelError("the approximation scheme needs uniform tie-breaking")
    eps, e0, delta = params.epsilon, params.eps0, params.trunc
    coarse = round_bids(instance.bid_space, eps)
    cbids = coarse.array
    m = coarse.m
    searched = [round_distribution(d, e0, delta) for d in instance.distributions]
    kinds, labels = _types(searched)
    n = instance.n
    tol = 2 * e0
    if params.omega is not None:
        grid = [round(1.0 / params.omega)]
    else:
        grid = itertools.count(1)
    tried, examined, best = [], 0, math.inf
    search = None
    q_used = None
    for q in grid:
        omega = 1.0 / q
        rows = composition_rows(m, q)
        slots = slot_count(n, m, eps, omega)
        try:
            if slots == n:
                tables = [_RowTable.build(d, rows / q, cbids, delta) for d in kinds]
                res = _search_full(rows, tables, labels, cbids, tol,
                                   level_cap(eps) * q, q, params.budget)
            else:
                res = _search_slots(rows, searched, labels, cbids, tol, delta, eps, omega, params.budget)
        except BudgetExceeded:
            if params.omega is not None or not tried:
                raise
            break
        tried.append(q)
        examined += res.examined
        best = min(best, res.best_regret)
        if res.found is not None:
            search, q_used = (rows, res), q
            break
    cert = {
        "epsilon": eps,
        "search_epsilon": e0,
        "delta": delta,
        "grids_tried": [1.0 / q for q in tried],
        "candidates_examined": examined,
        "rounded_bids": list(coarse.bids),
        "bounds": params.bound_chain(),
    }
    if search is None:
        cert["best_regret_lower_bound"] = best
        return SolveResult("grid_exhausted", None, cert)
    rows, res = search
    assigned = [rows[res.found[res.assignment[i]]] / q_used for i in range(n)]
    rounded_only = [round_distribution(d, e0, 0.0) for d in instance.distributions]
    middle = tuple(monotone_analogue(r, d) for r, d in zip(assigned, rounded_only))
    lifted = tuple(monotone_analogue(r, d) for r, d in zip(assigned, instance.distributions))
    final = tuple(embed_strategy(s, coarse.bids, instance.bid_space.bids) for s in lifted)
    report = verify_approximate(final, instance, eps)
    cert.update({
        "omega": 1.0 / q_used,
        "histograms": [[float(x) for x in r] for r in assigned],
        "search_regret": _max_regret(middle, searched, cbids),
        "intermediate_regret": _max_regret(middle, rounded_only, cbids),
        "lifted_regret": _max_regret(lifted, instance.distributions, cbids),
        "final_regret": report.max_exante_regret,
        "verified": report.passed,
    })
    if not report.passed:
        raise SolveError("lifted profile failed verification: " + "; ".join(report.failures))
    return SolveResult("ok", final, cert)


def _max_regret(profile, dists, bids) -> float:
    inst = AuctionInstance(BidSpace(tuple(bids)), tuple(dists))
    return max(exante_regret(i, profile, inst) for i in range(inst.n))

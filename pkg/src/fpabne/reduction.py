"""Generalized circuits encoded as first-price auctions.

Each circuit node becomes a standard bidder whose switch point from the
small bid ``b1`` to the larger bid ``b2`` encodes the node's value.  A
``1 - x`` gate needs a helper bidder.  One extra pivot bidder makes the
tie-breaking rule do the arithmetic.

Indices are 0-based: standard bidders ``0 .. n-1``, pivot ``n``.  The first
``plus_count`` circuit nodes are addition gates, the rest complement gates;
bidder ``m + j`` helps complement node ``plus_count + j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocation import win_probs
from .model import (
    AuctionInstance,
    BidSpace,
    ModelError,
    MonotoneStrategy,
    TieBreakingRule,
    ValueDistribution,
    marginals_of,
)

PLUS = "plus"
ONE_MINUS = "one_minus"


class ReductionError(ValueError):
    """Parameters or inputs incompatible with the construction."""


@dataclass(frozen=True)
class Gate:
    kind: str
    inputs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))


@dataclass(frozen=True)
class GeneralizedCircuit:
    """Nodes with truncated-addition and truncated-complement gates.

    Addition gates must come first.
    """

    gates: tuple[Gate, ...]

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))

    @property
    def size(self) -> int:
        return len(self.gates)

    @property
    def plus_count(self) -> int:
        return sum(g.kind == PLUS for g in self.gates)

    @property
    def players(self) -> int:
        """Standard bidders needed to encode the circuit."""
        return 2 * self.size - self.plus_count

    def problems(self) -> list[str]:
        out = []
        if self.size < 2:
            out.append("circuit needs at least two nodes")
        seen_minus = False
        for v, g in enumerate(self.gates):
            if g.kind == PLUS:
                if seen_minus:
                    out.append(f"node {v}: addition gates must precede complement gates")
                if len(g.inputs) != 2:
                    out.append(f"node {v}: addition gate needs two inputs")
            elif g.kind == ONE_MINUS:
                seen_minus = True
                if len(g.inputs) != 1:
                    out.append(f"node {v}: complement gate needs one input")
            else:
                out.append(f"node {v}: unknown gate {g.kind!r}")
            for u in g.inputs:
                if not 0 <= u < self.size:
                    out.append(f"node {v}: input {u} out of range")
                elif u == v:
                    out.append(f"node {v}: gate reads its own output")
        return out


def truncate(x, lo: float = 0.0, hi: float = 1.0):
    return np.minimum(np.maximum(x, lo), hi)


@dataclass(frozen=True)
class ReductionParams:
    """Scale parameters of the construction.

    ``epsilon`` is the width of the mass lumps near 0, ``b2`` and 1 (they are
    exact atoms unless ``slivers`` is set), ``delta`` the lump mass and
    ``beta * delta`` the mass of the movable piece.
    """

    epsilon: float
    delta: float
    beta: float
    slivers: bool = False

    @classmethod
    def for_players(cls, n: int, slivers: bool = False) -> "ReductionParams":
        return cls(float(n) ** -40, float(n) ** -10, float(n) ** -4, slivers)

    def bids(self, n: int) -> tuple[float, float, float]:
        return 0.0, self.delta ** 2 / n ** 4, self.delta / n ** 2

    def problems(self, n: int) -> list[str]:
        out = []
        if not 0.0 < self.epsilon < self.delta < self.beta < 1.0:
            out.append("need 0 < epsilon < delta < beta < 1")
        _, b1, b2 = self.bids(n)
        if not b1 < b2 < 1.0 - self.epsilon:
            out.append("need b1 < b2 < 1 - epsilon")
        if not 2 * self.epsilon < b2:
            out.append("epsilon too large compared with b2")
        if (2 + self.beta) * self.delta >= 1.0:
            out.append("delta too large for a valid distribution")
        return out


@dataclass(frozen=True, eq=False)
class ReductionInstance:
    circuit: GeneralizedCircuit
    params: ReductionParams
    instance: AuctionInstance
    sigma_a: np.ndarray
    sigma_b: np.ndarray
    delta1: np.ndarray
    intervals: np.ndarray

    @property
    def n(self) -> int:
        """Number of standard bidders."""
        return len(self.delta1)

    @property
    def pivot(self) -> int:
        return self.n

    @property
    def b1(self) -> float:
        return float(self.instance.bids[1])

    @property
    def b2(self) -> float:
        return float(self.instance.bids[2])

    @property
    def piece_mass(self) -> float:
        return self.params.beta * self.params.delta


def tie_matrices(circuit: GeneralizedCircuit) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise (no pivot) and pivot-triple tie shares of the standard bidders."""
    m, m1, n = circuit.size, circuit.plus_count, circuit.players
    sa = np.full((n, n), 0.5)
    np.fill_diagonal(sa, 0.0)
    sb = np.zeros((n, n))
    for i in range(m1):
        for u in circuit.gates[i].inputs:
            sb[i, u] += 0.1
    for j in range(m - m1):
        node, helper = m1 + j, m + j
        sa[node, helper], sa[helper, node] = 0.45, 0.55
        sb[helper, circuit.gates[node].inputs[0]] += 0.2
    return sa, sb


def delta1_values(sa: np.ndarray, sb: np.ndarray, params: ReductionParams) -> np.ndarray:
    n = len(sa)
    d, b = params.delta, params.beta
    off = ~np.eye(n, dtype=bool)
    return (n - 1) * d + np.where(off, b * d * sa + (1 + b) * d * sb, 0.0).sum(axis=1)


def piece_intervals(circuit: GeneralizedCircuit, d1: np.ndarray, params: ReductionParams, b2: float) -> np.ndarray:
    m, m1 = circuit.size, circuit.plus_count
    bd = params.beta * params.delta
    out = np.zeros((len(d1), 2))
    for i, d in enumerate(d1):
        base, step = 1.0 / d, bd / d ** 2
        if i < m1:
            lo, hi = base, base + step / 10
        elif i < m:
            lo, hi = base - step / 10, base
        else:
            lo, hi = base + step / 10, base + step / 5
        out[i] = lo * b2, hi * b2
    return out


def _lump(at: float, mass: float, width: float, slivers: bool, side: str):
    if not slivers:
        return (at, mass), None
    lo, hi = (at - width, at) if side == "left" else (at, at + width)
    # density from the rounded width so the sliver carries exactly ``mass``
    return None, (lo, hi, mass / (hi - lo))


def _distribution(parts, slivers):
    atoms, pieces = [], []
    for at, mass, width, side in parts:
        a, p = _lump(at, mass, width, slivers, side)
        if a:
            atoms.append(a)
        if p:
            pieces.append(p)
    return atoms, pieces


def reduce_to_auction(circuit: GeneralizedCircuit, params: ReductionParams) -> ReductionInstance:
    """Build the auction whose near-equilibria encode circuit solutions."""
    issues = circuit.problems()
    if issues:
        raise ReductionError("; ".join(issues))
    n = circuit.players
    issues = params.problems(n)
    if issues:
        raise ReductionError("; ".join(issues))
    eps, d, beta = params.epsilon, params.delta, params.beta
    b0, b1, b2 = params.bids(n)
    sa, sb = tie_matrices(circuit)
    d1 = delta1_values(sa, sb, params)
    iv = piece_intervals(circuit, d1, params, b2)
    for i, (lo, hi) in enumerate(iv):
        if not (b2 < lo < hi < 1.0 - eps):
            raise ReductionError(
                f"player {i}: movable interval [{lo!r}, {hi!r}] leaves (b2, 1 - epsilon)")
    dists = []
    for i in range(n):
        atoms, pieces = _distribution([
            (0.0 if params.slivers else eps, 1.0 - (2 + beta) * d, eps, "right"),
            (b2, d, eps, "left"),
            (1.0, d, eps, "left"),
        ], params.slivers)
        lo, hi = iv[i]
        pieces.append((lo, hi, beta * d / (hi - lo)))
        dists.append(ValueDistribution(atoms=tuple(atoms), pieces=tuple(pieces)))
    atoms, pieces = _distribution([
        (0.0 if params.slivers else eps, 0.5, eps, "right"),
        (1.0, 0.5, eps, "left"),
    ], params.slivers)
    dists.append(ValueDistribution(atoms=tuple(atoms), pieces=tuple(pieces)))
    rule = pivot_rule(sa, sb)
    inst = AuctionInstance(BidSpace((b0, b1, b2)), tuple(dists), rule)
    return ReductionInstance(circuit, params, inst, sa, sb, d1, iv)


def pivot_rule(sa: np.ndarray, sb: np.ndarray) -> TieBreakingRule:
    """Trilateral rule: pairwise shares from ``sa``, pivot triples from ``sb``.

    A pivot tied with one standard bidder takes the whole item; three-way
    ties among standard bidders are split evenly.
    """
    n = len(sa)
    pairs, triples = {}, {}
    for i in range(n):
        pairs[(i, n)] = 0.0
        for j in range(i + 1, n):
            pairs[(i, j)] = float(sa[i, j])
            triples[(i, j, n)] = (float(sb[i, j]), float(sb[j, i]))
    return TieBreakingRule.trilateral(pairs, triples)


# ---------------------------------------------------------------------------
# gadget formulas


def _standard(i, red):
    if not 0 <= i < red.n:
        raise ReductionError(f"player {i} is not a standard bidder")


def delta1(i: int, red: ReductionInstance) -> float:
    _standard(i, red)
    return float(red.delta1[i])


def delta2(i: int, x: Sequence[float], red: ReductionInstance) -> float:
    """Linear response of bidder ``i``'s switch point to the jump masses ``x``."""
    _standard(i, red)
    x = np.asarray(x, dtype=float)
    cap = red.piece_mass
    if len(x) != red.n or np.any(x < -1e-15 * cap) or np.any(x > cap * (1 + 1e-12)):
        raise ReductionError("jump masses must lie in [0, beta * delta]")
    w = 1.0 - 2.0 * red.sigma_a[i] - red.sigma_b[i]
    w[i] = 0.0
    return float(w @ x)


def jumping_point(gamma1: float, gamma2: float, b1: float, b2: float) -> float:
    """Value where bidding ``b1`` and ``b2`` give equal utility."""
    if not gamma2 > gamma1:
        raise ReductionError("no crossing: win probability at b2 must exceed that at b1")
    return b2 + gamma1 * (b2 - b1) / (gamma2 - gamma1)


def expanded_jumping_point(i: int, x: Sequence[float], red: ReductionInstance) -> float:
    """First-order approximation of the switch point from the gadget formulas."""
    d1 = delta1(i, red)
    return (d1 - delta2(i, x, red)) / d1 ** 2 * red.b2


# ---------------------------------------------------------------------------
# prescribed strategies and decoding


def piece_point(i: int, mass: float, red: ReductionInstance) -> float:
    """Value above which bidder ``i``'s movable piece keeps ``beta*delta - mass``."""
    lo, hi = red.intervals[i]
    frac = min(max(mass / red.piece_mass, 0.0), 1.0)
    return float(lo + frac * (hi - lo))


def prescribed_profile(x: Sequence[float], red: ReductionInstance) -> tuple[MonotoneStrategy, ...]:
    """Separable strategies: low lump bids ``b0``, middle ``b1``, top ``b2``.

    Bidder ``i`` switches from ``b1`` to ``b2`` once its movable piece has
    released mass ``x[i]``; the pivot bids ``b0`` low and ``b2`` high.
    """
    low = red.b2 / 2
    prof = [MonotoneStrategy((low, piece_point(i, xi, red))) for i, xi in enumerate(x)]
    prof.append(MonotoneStrategy((0.5, 0.5)))
    return tuple(prof)


def gamma_pair(x: Sequence[float], red: ReductionInstance) -> np.ndarray:
    """Win probabilities at ``b1`` and ``b2`` for every standard bidder."""
    prof = prescribed_profile(x, red)
    marg = marginals_of(prof, red.instance.distributions)
    return np.array([win_probs(i, marg, red.instance.rule)[1:3] for i in range(red.n)])


def _raw_response(y: np.ndarray, red: ReductionInstance) -> np.ndarray:
    """Untruncated response in units of the piece: position of the switch point
    within each movable interval, 0 at its left end and 1 at its right end."""
    g = gamma_pair(y * red.piece_mass, red)
    out = np.empty(red.n)
    for i in range(red.n):
        tau = jumping_point(g[i, 0], g[i, 1], red.b1, red.b2)
        lo, hi = red.intervals[i]
        out[i] = (tau - lo) / (hi - lo)
    return out


def response_map(x: Sequence[float], red: ReductionInstance) -> np.ndarray:
    """Jump masses implied by best responding to the prescribed profile at ``x``."""
    y = np.asarray(x, dtype=float) / red.piece_mass
    return red.piece_mass * np.clip(_raw_response(y, red), 0.0, 1.0)


@dataclass
class FixedPoint:
    """Result of the fixed-point search.

    ``step`` is in jump mass, ``residual`` the sup-norm of
    ``response(x) - x`` in units of ``beta*delta``.
    """

    x: np.ndarray
    iterations: int
    step: float
    converged: bool
    residual: float = float("nan")


def _newton_polish(y: np.ndarray, red: ReductionInstance, tol: float, max_iter: int = 30,
                   h: float = 1e-5) -> np.ndarray:
    """Semismooth Newton on ``y - clip(raw(y))``; truncated rows are held fixed."""
    n = red.n
    best = y
    raw = _raw_response(y, red)
    res = np.max(np.abs(np.clip(raw, 0.0, 1.0) - y))
    for _ in range(max_iter):
        if res < tol:
            break
        free = (raw > 0.0) & (raw < 1.0)
        jac = np.eye(n)
        for k in range(n):
            e = y.copy()
            e[k] += h if y[k] + h <= 1.0 else -h
            col = (_raw_response(e, red) - raw) / (e[k] - y[k])
            jac[free, k] -= col[free]
        f = y - np.clip(raw, 0.0, 1.0)
        d = np.linalg.lstsq(jac, -f, rcond=None)[0]
        t = 1.0
        while t > 1e-4:
            cand = np.clip(y + t * d, 0.0, 1.0)
            craw = _raw_response(cand, red)
            cres = np.max(np.abs(np.clip(craw, 0.0, 1.0) - cand))
            if cres < res:
                break
            t *= 0.5
        else:
            break
        y, raw, res = cand, craw, cres
        best = y
    return best


def damped_fixed_point(red: ReductionInstance, x0: Sequence[float] | None = None, damping: float = 0.5,
                       tol: float = 1e-12, max_iter: int = 2000, depth: int = 8,
                       patience: int = 200) -> FixedPoint:
    """Damped iteration ``x <- x + damping * (response(x) - x)`` on the jump masses.

    The gadget maps are not contractions, so the damped steps are mixed over
    the last ``depth`` iterates (Anderson acceleration) and the result is
    polished by a Newton step.  The search aims at a damped step below
    ``tol`` in units of ``beta*delta`` and stops early after ``patience``
    iterations without progress.  ``converged`` requires the damped step in
    jump mass to be below ``tol``.
    """
    scale = red.piece_mass
    y = np.full(red.n, 0.5) if x0 is None else np.asarray(x0, dtype=float) / scale

    def resid(z):
        return response_map(z * scale, red) / scale - z

    hist_y, hist_f = [], []
    best_y, best_res, best_it = y, np.inf, 0
    it = 0
    for it in range(1, max_iter + 1):
        f = resid(y)
        res = float(np.max(np.abs(f)))
        if res < best_res:
            best_y, best_res, best_it = y, res, it
        if damping * res < tol or it - best_it > patience:
            break
        hist_y.append(y)
        hist_f.append(f)
        if len(hist_y) > depth + 1:
            hist_y.pop(0)
            hist_f.pop(0)
        new = y + damping * f
        if len(hist_f) > 1:
            dF = np.diff(np.array(hist_f), axis=0).T
            dY = np.diff(np.array(hist_y), axis=0).T
            coef = np.linalg.lstsq(dF, f, rcond=None)[0]
            new = new - (dY + damping * dF) @ coef
        new = np.clip(new, 0.0, 1.0)
        if np.max(np.abs(new - y)) < 1e-15:
            # mixing stalled: restart from a plain damped step
            hist_y.clear()
            hist_f.clear()
            new = np.clip(y + damping * f, 0.0, 1.0)
        y = new
    if damping * best_res >= tol:
        y = _newton_polish(best_y, red, tol / damping)
        res = float(np.max(np.abs(resid(y))))
        if res < best_res:
            best_y, best_res = y, res
    step = damping * scale * best_res
    return FixedPoint(best_y * scale, it, step, step < tol, best_res)


def decode_solution(profile: Sequence[MonotoneStrategy], red: ReductionInstance) -> np.ndarray:
    """Circuit assignment read off the bidders' ``b1 -> b2`` switch points."""
    m = red.circuit.size
    eps = red.params.epsilon
    out = np.empty(m)
    for v in range(m):
        s = profile[v]
        if s.m != 2 or s.problems():
            raise ReductionError(f"player {v}: not a monotone strategy over three bids")
        tau = s.thresholds[1]
        if not red.b2 < tau < 1.0 - eps:
            raise ReductionError(f"player {v}: switch point {tau!r} outside (b2, 1 - epsilon)")
        mass = red.instance.distributions[v].mass_between(red.b2, tau)
        frac = min(max(mass / red.piece_mass, 0.0), 1.0)
        # a switch point is only known to a few ulps; snap onto the ends
        lo, hi = red.intervals[v]
        res = 4.0 * np.spacing(tau) / (hi - lo)
        if frac < res:
            frac = 0.0
        elif frac > 1.0 - res:
            frac = 1.0
        out[v] = frac
    return out


@dataclass(frozen=True)
class GateViolation:
    node: int
    value: float
    low: float
    high: float
    excess: float


def check_circuit_solution(circuit: GeneralizedCircuit, x: Sequence[float], kappa: float,
                           tol: float = 1e-12) -> list[GateViolation]:
    """Gates whose output lies outside the allowed band, with the gap."""
    x = np.asarray(x, dtype=float)
    if len(x) != circuit.size or np.any(x < 0) or np.any(x > 1):
        raise ReductionError("assignment must be a vector in [0, 1]^V")
    out = []
    for v, g in enumerate(circuit.gates):
        if g.kind == PLUS:
            centre = x[g.inputs[0]] + x[g.inputs[1]]
        else:
            centre = 1.0 - x[g.inputs[0]]
        lo, hi = float(truncate(centre - kappa)), float(truncate(centre + kappa))
        gap = max(lo - x[v], x[v] - hi, 0.0)
        if gap > tol:
            out.append(GateViolation(v, float(x[v]), lo, hi, float(gap)))
    return out


def random_circuit(rng: np.random.Generator, size: int, plus_count: int | None = None,
                   acyclic: bool = False) -> GeneralizedCircuit:
    """Random circuit; with ``acyclic`` every gate reads only earlier-evaluated nodes."""
    if size < 2:
        raise ReductionError("circuit needs at least two nodes")
    m1 = int(rng.integers(0, size + 1)) if plus_count is None else plus_count
    kinds = [PLUS] * m1 + [ONE_MINUS] * (size - m1)
    order = rng.permutation(size) if acyclic else None
    rank = np.empty(size, dtype=int)
    if acyclic:
        rank[order] = np.arange(size)
    gates = []
    for v, kind in enumerate(kinds):
        k = 2 if kind == PLUS else 1
        if acyclic:
            pool = [u for u in range(size) if rank[u] < rank[v]]
            if not pool:
                # a source node: read the node evaluated right after it
                pool = [int(order[1])]
        else:
            pool = [u for u in range(size) if u != v]
        gates.append(Gate(kind, tuple(int(u) for u in rng.choice(pool, size=k, replace=True))))
    return GeneralizedCircuit(tuple(gates))

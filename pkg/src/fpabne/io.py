"""JSON file formats for instances, strategies, circuits and reports.

Reals are written as shortest round-trip decimal strings (``repr``) so a
parse followed by a write reproduces the file byte for byte.  Every file
carries a ``format`` tag; parse errors name the offending location.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .equilibrium import PlayerCheck, VerificationReport
from .model import (
    AtomSplit,
    AuctionInstance,
    BidSpace,
    MonotoneStrategy,
    TieBreakingRule,
    ValueDistribution,
)
from .reduction import (
    Gate,
    GeneralizedCircuit,
    GateViolation,
    ReductionInstance,
    ReductionParams,
    reduce_to_auction,
)

INSTANCE = "fpabne.instance"
STRATEGY = "fpabne.strategy"
CIRCUIT = "fpabne.circuit"
REDUCTION = "fpabne.reduction"
REPORT = "fpabne.report"
VERSION = 1


class ParseError(ValueError):
    """Malformed file; ``where`` is a JSON path or a line:column position."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


# ---------------------------------------------------------------------------
# reals


def real(x: float) -> str:
    return repr(float(x))


def _real(obj, where: str) -> float:
    if not isinstance(obj, str):
        raise ParseError(where, f"expected a decimal string, got {type(obj).__name__}")
    try:
        return float(obj)
    except ValueError:
        raise ParseError(where, f"not a real number: {obj!r}") from None


def _int(obj, where: str) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ParseError(where, "expected an integer")
    return obj


def _list(obj, where: str, length: int | None = None) -> list:
    if not isinstance(obj, list):
        raise ParseError(where, "expected a list")
    if length is not None and len(obj) != length:
        raise ParseError(where, f"expected {length} entries, got {len(obj)}")
    return obj


def _field(obj, key: str, where: str):
    if not isinstance(obj, dict):
        raise ParseError(where, "expected an object")
    if key not in obj:
        raise ParseError(where, f"missing field {key!r}")
    return obj[key]


def _reals(obj, where: str) -> tuple[float, ...]:
    return tuple(_real(x, f"{where}[{k}]") for k, x in enumerate(_list(obj, where)))


def to_plain(obj: Any) -> Any:
    """JSON-ready copy with floats as decimal strings."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return real(obj)
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# text and files


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, ensure_ascii=True) + "\n"


def loads(text: str, kind: str | None = None) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}:{exc.colno}", exc.msg) from None
    if not isinstance(doc, dict):
        raise ParseError("$", "expected an object at the top level")
    if kind is not None:
        tag = doc.get("format")
        if tag != kind:
            raise ParseError("$.format", f"expected {kind!r}, got {tag!r}")
        if doc.get("version") != VERSION:
            raise ParseError("$.version", f"unsupported version {doc.get('version')!r}")
    return doc


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_text(path: str | os.PathLike) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(str(path), exc.strerror or str(exc)) from None


def _header(kind: str) -> dict:
    return {"format": kind, "version": VERSION}


# ---------------------------------------------------------------------------
# instances


def _dist_doc(d: ValueDistribution) -> dict:
    return {
        "atoms": [[real(v), real(w)] for v, w in d.atoms],
        "pieces": [[real(lo), real(hi), real(h)] for lo, hi, h in d.pieces],
    }


def _rule_doc(rule: TieBreakingRule) -> dict:
    return {
        "type": rule.variant,
        "pairs": [[i, j, real(w)] for (i, j), w in sorted(rule.pairs.items())],
        "triples": [[i, j, k, real(a), real(b)] for (i, j, k), (a, b) in sorted(rule.triples.items())],
    }


def instance_doc(inst: AuctionInstance) -> dict:
    doc = _header(INSTANCE)
    doc.update({
        "n": inst.n,
        "bids": [real(b) for b in inst.bid_space.bids],
        "distributions": [_dist_doc(d) for d in inst.distributions],
        "rule": _rule_doc(inst.rule),
    })
    return doc


def _parse_dist(obj, where: str) -> ValueDistribution:
    atoms = []
    for k, a in enumerate(_list(_field(obj, "atoms", where), f"{where}.atoms")):
        w = f"{where}.atoms[{k}]"
        a = _list(a, w, 2)
        atoms.append((_real(a[0], w + "[0]"), _real(a[1], w + "[1]")))
    pieces = []
    for k, p in enumerate(_list(_field(obj, "pieces", where), f"{where}.pieces")):
        w = f"{where}.pieces[{k}]"
        p = _list(p, w, 3)
        pieces.append(tuple(_real(p[t], f"{w}[{t}]") for t in range(3)))
    return ValueDistribution(atoms=tuple(atoms), pieces=tuple(pieces))


def _parse_rule(obj, where: str) -> TieBreakingRule:
    variant = _field(obj, "type", where)
    if variant == "uniform":
        return TieBreakingRule.uniform()
    if variant != "trilateral":
        raise ParseError(f"{where}.type", f"unknown rule {variant!r}")
    pairs, triples = {}, {}
    for k, p in enumerate(_list(_field(obj, "pairs", where), f"{where}.pairs")):
        w = f"{where}.pairs[{k}]"
        p = _list(p, w, 3)
        pairs[(_int(p[0], w), _int(p[1], w))] = _real(p[2], w + "[2]")
    for k, t in enumerate(_list(_field(obj, "triples", where), f"{where}.triples")):
        w = f"{where}.triples[{k}]"
        t = _list(t, w, 5)
        key = (_int(t[0], w), _int(t[1], w), _int(t[2], w))
        triples[key] = (_real(t[3], w + "[3]"), _real(t[4], w + "[4]"))
    return TieBreakingRule.trilateral(pairs, triples)


def parse_instance(doc: dict) -> AuctionInstance:
    bids = _reals(_field(doc, "bids", "$"), "$.bids")
    dists = tuple(_parse_dist(d, f"$.distributions[{k}]")
                  for k, d in enumerate(_list(_field(doc, "distributions", "$"), "$.distributions")))
    n = _int(_field(doc, "n", "$"), "$.n")
    if n != len(dists):
        raise ParseError("$.n", f"says {n} players but {len(dists)} distributions are listed")
    rule = _parse_rule(_field(doc, "rule", "$"), "$.rule")
    return AuctionInstance(BidSpace(bids), dists, rule)


# ---------------------------------------------------------------------------
# strategies


def _strategy_doc(s: MonotoneStrategy) -> dict:
    return {
        "thresholds": [real(t) for t in s.thresholds],
        "atom_splits": [
            {"value": real(a.value), "first": a.first, "probs": [real(p) for p in a.probs]}
            for a in s.splits
        ],
    }


def strategy_doc(profile: Sequence[MonotoneStrategy]) -> dict:
    doc = _header(STRATEGY)
    doc["players"] = [_strategy_doc(s) for s in profile]
    return doc


def _parse_strategy(obj, where: str) -> MonotoneStrategy:
    tau = _reals(_field(obj, "thresholds", where), f"{where}.thresholds")
    splits = []
    for k, a in enumerate(_list(_field(obj, "atom_splits", where), f"{where}.atom_splits")):
        w = f"{where}.atom_splits[{k}]"
        splits.append(AtomSplit(
            _real(_field(a, "value", w), w + ".value"),
            _int(_field(a, "first", w), w + ".first"),
            _reals(_field(a, "probs", w), w + ".probs"),
        ))
    return MonotoneStrategy(tau, tuple(splits))


def parse_strategy(doc: dict) -> tuple[MonotoneStrategy, ...]:
    players = _list(_field(doc, "players", "$"), "$.players")
    return tuple(_parse_strategy(p, f"$.players[{k}]") for k, p in enumerate(players))


# ---------------------------------------------------------------------------
# circuits and reductions


def _circuit_body(c: GeneralizedCircuit) -> list:
    return [{"gate": g.kind, "inputs": list(g.inputs)} for g in c.gates]


def circuit_doc(c: GeneralizedCircuit) -> dict:
    doc = _header(CIRCUIT)
    doc["nodes"] = _circuit_body(c)
    return doc


def _parse_nodes(obj, where: str) -> GeneralizedCircuit:
    gates = []
    for k, g in enumerate(_list(obj, where)):
        w = f"{where}[{k}]"
        kind = _field(g, "gate", w)
        inputs = tuple(_int(u, f"{w}.inputs[{t}]")
                       for t, u in enumerate(_list(_field(g, "inputs", w), w + ".inputs")))
        gates.append(Gate(kind, inputs))
    return GeneralizedCircuit(tuple(gates))


def parse_circuit(doc: dict) -> GeneralizedCircuit:
    return _parse_nodes(_field(doc, "nodes", "$"), "$.nodes")


def _params_doc(p: ReductionParams) -> dict:
    return {"epsilon": real(p.epsilon), "delta": real(p.delta), "beta": real(p.beta), "slivers": p.slivers}


def parse_params(obj, where: str = "$.params") -> ReductionParams:
    slivers = _field(obj, "slivers", where)
    if not isinstance(slivers, bool):
        raise ParseError(f"{where}.slivers", "expected true or false")
    return ReductionParams(
        _real(_field(obj, "epsilon", where), f"{where}.epsilon"),
        _real(_field(obj, "delta", where), f"{where}.delta"),
        _real(_field(obj, "beta", where), f"{where}.beta"),
        slivers,
    )


def reduction_doc(red: ReductionInstance) -> dict:
    doc = _header(REDUCTION)
    doc.update({
        "nodes": _circuit_body(red.circuit),
        "params": _params_doc(red.params),
        "sigma_a": to_plain(red.sigma_a),
        "sigma_b": to_plain(red.sigma_b),
        "delta1": to_plain(red.delta1),
        "intervals": to_plain(red.intervals),
    })
    return doc


def parse_reduction(doc: dict) -> ReductionInstance:
    """Rebuild the reduction from its circuit and parameters and check the
    stored tables against the rebuilt ones."""
    circuit = _parse_nodes(_field(doc, "nodes", "$"), "$.nodes")
    params = parse_params(_field(doc, "params", "$"))
    red = reduce_to_auction(circuit, params)
    for key in ("sigma_a", "sigma_b", "delta1", "intervals"):
        if _field(doc, key, "$") != to_plain(getattr(red, key)):
            raise ParseError(f"$.{key}", "does not match the circuit and parameters")
    return red


# ---------------------------------------------------------------------------
# reports


def report_doc(report: VerificationReport) -> dict:
    doc = _header(REPORT)
    doc.update({
        "kind": "verification",
        "notion": report.notion,
        "epsilon": real(report.epsilon),
        "delta": None if report.delta is None else real(report.delta),
        "passed": report.passed,
        "failures": list(report.failures),
        "players": [
            {
                "sup_regret": real(p.sup_regret),
                "witness": real(p.witness),
                "exante_regret": real(p.exante_regret),
                "overbid_probability": real(p.overbid_probability),
                "overbids_somewhere": p.overbids_somewhere,
                "exceeds_vmax": p.exceeds_vmax,
            }
            for p in report.players
        ],
    })
    return doc


def parse_report(doc: dict) -> VerificationReport:
    players = []
    for k, p in enumerate(_list(_field(doc, "players", "$"), "$.players")):
        w = f"$.players[{k}]"
        players.append(PlayerCheck(
            _real(_field(p, "sup_regret", w), w + ".sup_regret"),
            _real(_field(p, "witness", w), w + ".witness"),
            _real(_field(p, "exante_regret", w), w + ".exante_regret"),
            _real(_field(p, "overbid_probability", w), w + ".overbid_probability"),
            bool(_field(p, "overbids_somewhere", w)),
            bool(_field(p, "exceeds_vmax", w)),
        ))
    delta = _field(doc, "delta", "$")
    return VerificationReport(
        _field(doc, "notion", "$"),
        _real(_field(doc, "epsilon", "$"), "$.epsilon"),
        None if delta is None else _real(delta, "$.delta"),
        tuple(players),
        bool(_field(doc, "passed", "$")),
        tuple(_field(doc, "failures", "$")),
    )


def record_doc(kind: str, body: dict) -> dict:
    """Free-form report (certificates, decode results) with reals as strings."""
    doc = _header(REPORT)
    doc["kind"] = kind
    doc.update(to_plain(body))
    return doc


def violations_plain(viol: Sequence[GateViolation]) -> list[dict]:
    return [{"node": v.node, "value": v.value, "low": v.low, "high": v.high, "excess": v.excess}
            for v in viol]


# ---------------------------------------------------------------------------
# convenience round trips

_WRITERS = {
    AuctionInstance: instance_doc,
    GeneralizedCircuit: circuit_doc,
    ReductionInstance: reduction_doc,
    VerificationReport: report_doc,
}


def serialize(obj) -> str:
    """Text form of an instance, circuit, reduction, report or strategy profile."""
    for cls, fn in _WRITERS.items():
        if isinstance(obj, cls):
            return dumps(fn(obj))
    if isinstance(obj, MonotoneStrategy):
        return dumps(strategy_doc((obj,)))
    if isinstance(obj, (list, tuple)) and all(isinstance(s, MonotoneStrategy) for s in obj):
        return dumps(strategy_doc(obj))
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def parse(text: str):
    doc = loads(text)
    kind = doc.get("format")
    parsers = {
        INSTANCE: parse_instance,
        STRATEGY: parse_strategy,
        CIRCUIT: parse_circuit,
        REDUCTION: parse_reduction,
    }
    if kind == REPORT and doc.get("kind") == "verification":
        return parse_report(loads(text, REPORT))
    if kind not in parsers:
        raise ParseError("$.format", f"unknown format {kind!r}")
    return parsers[kind](loads(text, kind))


def load(path, kind: str):
    return {
        INSTANCE: parse_instance,
        STRATEGY: parse_strategy,
        CIRCUIT: parse_circuit,
        REDUCTION: parse_reduction,
        REPORT: parse_report,
    }[kind](loads(read_text(path), kind))


def save(path, obj) -> None:
    write_text_atomic(path, serialize(obj))

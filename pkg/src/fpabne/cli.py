"""Command-line interface.

Exit codes: 0 pass, 1 verification failure or failed solve, 2 usage or
parse error, 3 budget refusal (including a solve whose grid scan ran out
of budget without a match).  Tables go to stdout tab-separated; with
``--out-dir`` a command also writes its JSON report and PNG figures there.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .allocation import win_probs
from .equilibrium import (
    NOTIONS,
    ConversionError,
    change_mass,
    convert_to_wellsupported,
    verify,
    wellsupported_bound,
)
from .model import (
    AuctionInstance,
    BidSpace,
    ModelError,
    MonotoneStrategy,
    TieBreakingRule,
    ValueDistribution,
    marginals_of,
    validate_instance,
)
from .oracle import (
    GridSearchConfig,
    best_response_dynamics,
    enumerate_allocation,
    grid_search_bne,
)
from .ptas import BudgetExceeded, PtasParams, SolveError, default_budget, solve_ptas
from .reduction import (
    PLUS,
    ReductionError,
    ReductionParams,
    check_circuit_solution,
    damped_fixed_point,
    decode_solution,
    prescribed_profile,
    random_circuit,
    reduce_to_auction,
    truncate,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3


@dataclass
class CommandResult:
    status: int
    report_path: str | None = None
    summary: str = ""
    files: list[str] = field(default_factory=list)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    def cell(x):
        if isinstance(x, float):
            return f"{x:.10g}"
        return str(x)
    lines = ["\t".join(header)]
    lines += ["\t".join(cell(x) for x in r) for r in rows]
    return "\n".join(lines)


def _out_dir(args) -> Path | None:
    if getattr(args, "out_dir", None) is None:
        return None
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_table(d: Path, name: str, text: str, res: CommandResult) -> None:
    path = d / name
    io.write_text_atomic(path, text + "\n")
    res.files.append(str(path))


def _load_pair(args) -> tuple[AuctionInstance, tuple]:
    inst = io.load(args.instance, io.INSTANCE)
    prof = io.load(args.strategy, io.STRATEGY)
    if len(prof) != inst.n:
        raise UsageError(f"strategy file has {len(prof)} players, instance has {inst.n}")
    issues = validate_instance(inst)
    if issues:
        raise ModelError("; ".join(issues))
    return inst, prof


def _profile_figures(d: Path, prof, inst, res: CommandResult) -> None:
    from . import plotting
    res.files.append(plotting.plot_profile(prof, inst, d / "strategies.png"))
    res.files.append(plotting.plot_regret(prof, inst, d / "regret.png"))
    res.files.append(plotting.plot_marginals(prof, inst, d / "marginals.png"))


def _player_rows(report):
    return [
        (i, p.sup_regret, p.witness, p.exante_regret, p.overbid_probability)
        for i, p in enumerate(report.players)
    ]


PLAYER_HEADER = ("player", "sup_regret", "witness", "exante_regret", "overbid_prob")


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> CommandResult:
    doc = io.loads(io.read_text(args.file))
    kind = doc.get("format")
    problems: list[str] = []
    if kind == io.INSTANCE:
        problems = validate_instance(io.parse_instance(io.loads(io.read_text(args.file), kind)))
    elif kind == io.STRATEGY:
        for i, s in enumerate(io.parse_strategy(doc)):
            problems += [f"player {i}: {p}" for p in s.problems()]
    elif kind == io.CIRCUIT:
        problems = io.parse_circuit(doc).problems()
    else:
        io.parse(io.read_text(args.file))
    status = EXIT_FAIL if problems else EXIT_OK
    lines = [f"{kind}\t{'invalid' if problems else 'valid'}"] + problems
    return CommandResult(status, None, "\n".join(lines))


def cmd_marginals(args) -> CommandResult:
    inst, prof = _load_pair(args)
    p = marginals_of(prof, inst.distributions).p
    header = ["player"] + [f"b{j}={b:.6g}" for j, b in enumerate(inst.bids)]
    text = _table(header, [[i, *map(float, row)] for i, row in enumerate(p)])
    res = CommandResult(EXIT_OK, summary=text)
    d = _out_dir(args)
    if d is not None:
        _write_table(d, "marginals.tsv", text, res)
        from . import plotting
        res.files.append(plotting.plot_marginals(prof, inst, d / "marginals.png"))
    return res


def cmd_allocate(args) -> CommandResult:
    inst, prof = _load_pair(args)
    marg = marginals_of(prof, inst.distributions)
    players = range(inst.n) if args.player is None else [args.player]
    rows = []
    for i in players:
        if not 0 <= i < inst.n:
            raise UsageError(f"player {i} out of range")
        g = win_probs(i, marg, inst.rule)
        rows += [(i, j, float(inst.bids[j]), float(g[j])) for j in range(len(g))]
    text = _table(("player", "bid_index", "bid", "win_prob"), rows)
    return CommandResult(EXIT_OK, summary=text)


def cmd_verify(args) -> CommandResult:
    inst, prof = _load_pair(args)
    report = verify(prof, inst, args.notion, args.epsilon, args.delta)
    text = _table(PLAYER_HEADER, _player_rows(report))
    verdict = "PASS" if report.passed else "FAIL"
    text += f"\n{verdict}\t{args.notion}\tepsilon={args.epsilon:g}"
    if report.failures:
        text += "\n" + "\n".join(report.failures)
    res = CommandResult(EXIT_OK if report.passed else EXIT_FAIL, summary=text)
    d = _out_dir(args)
    if args.report:
        io.save(args.report, report)
        res.report_path = args.report
    if d is not None:
        path = d / "report.json"
        io.save(path, report)
        res.files.append(str(path))
        res.report_path = res.report_path or str(path)
        _write_table(d, "players.tsv", _table(PLAYER_HEADER, _player_rows(report)), res)
        _profile_figures(d, prof, inst, res)
    return res


def cmd_convert(args) -> CommandResult:
    inst, prof = _load_pair(args)
    out = convert_to_wellsupported(prof, inst, args.epsilon, check=not args.no_check)
    io.save(args.output, out)
    bound = wellsupported_bound(inst.n, args.epsilon)
    report = verify(out, inst, "wellsupported", bound)
    rows = [(i, change_mass(a, b, dist), report.players[i].sup_regret)
            for i, (a, b, dist) in enumerate(zip(prof, out, inst.distributions))]
    text = _table(("player", "changed_mass", "sup_regret"), rows)
    text += f"\n{'PASS' if report.passed else 'FAIL'}\twellsupported\tepsilon={bound:g}"
    res = CommandResult(EXIT_OK if report.passed else EXIT_FAIL, summary=text, files=[args.output])
    d = _out_dir(args)
    if d is not None:
        io.save(d / "report.json", report)
        res.files.append(str(d / "report.json"))
        res.report_path = str(d / "report.json")
        _profile_figures(d, out, inst, res)
    return res


def cmd_solve(args) -> CommandResult:
    inst = io.load(args.instance, io.INSTANCE)
    issues = validate_instance(inst)
    if issues:
        raise ModelError("; ".join(issues))
    params = PtasParams(args.epsilon, args.omega, args.delta, None,
                        args.budget if args.budget is not None else default_budget())
    result = solve_ptas(inst, params)
    # the grid scan only stops empty-handed when the candidate budget runs out
    res = CommandResult(EXIT_OK if result.ok else EXIT_BUDGET)
    cert_text = io.dumps(io.record_doc("certificate", {"status": result.status, **result.certificate}))
    if args.emit_certificate:
        io.write_text_atomic(args.emit_certificate, cert_text)
        res.report_path = args.emit_certificate
    cert = result.certificate
    rows = [(k, cert[k]) for k in ("epsilon", "search_epsilon", "delta", "candidates_examined",
                                   "omega", "final_regret", "best_regret_lower_bound") if k in cert]
    table = _table(("key", "value"), rows)
    d = _out_dir(args)
    if d is not None:
        io.write_text_atomic(d / "certificate.json", cert_text)
        res.files.append(str(d / "certificate.json"))
        res.report_path = res.report_path or str(d / "certificate.json")
        _write_table(d, "summary.tsv", table, res)
    if result.ok:
        io.save(args.output, result.profile)
        res.files.append(args.output)
        if d is not None:
            _profile_figures(d, result.profile, inst, res)
    res.summary = table + f"\n{result.status}"
    return res


def cmd_reduce(args) -> CommandResult:
    circuit = io.load(args.circuit, io.CIRCUIT)
    n = circuit.players
    if args.full_scale:
        params = ReductionParams.for_players(n, args.slivers)
    else:
        params = ReductionParams(args.epsilon, args.delta, args.beta, args.slivers)
    red = reduce_to_auction(circuit, params)
    io.save(args.instance_out, red.instance)
    io.save(args.meta_out, red)
    res = CommandResult(EXIT_OK, files=[args.instance_out, args.meta_out])
    rows = [(i, float(red.delta1[i]), float(lo), float(hi)) for i, (lo, hi) in enumerate(red.intervals)]
    text = _table(("player", "delta1", "interval_lo", "interval_hi"), rows)
    if args.fixed_point:
        fp = damped_fixed_point(red)
        io.save(args.fixed_point, prescribed_profile(fp.x, red))
        res.files.append(args.fixed_point)
        text += f"\nfixed_point\tconverged={fp.converged}\tstep={fp.step:.3g}\titerations={fp.iterations}"
        if not fp.converged:
            res.status = EXIT_FAIL
    res.summary = text
    return res


def _gate_targets(circuit, x):
    out = []
    for g in circuit.gates:
        if g.kind == PLUS:
            out.append(float(truncate(x[g.inputs[0]] + x[g.inputs[1]])))
        else:
            out.append(float(truncate(1.0 - x[g.inputs[0]])))
    return out


def cmd_decode(args) -> CommandResult:
    red = io.load(args.meta, io.REDUCTION)
    prof = io.load(args.strategy, io.STRATEGY)
    if len(prof) != red.n + 1:
        raise UsageError(f"strategy file has {len(prof)} players, reduction has {red.n + 1}")
    x = decode_solution(prof, red)
    kappa = args.kappa if args.kappa is not None else 10 * red.n * red.params.beta
    viol = check_circuit_solution(red.circuit, x, kappa)
    targets = _gate_targets(red.circuit, x)
    rows = [(v, float(x[v]), targets[v], red.circuit.gates[v].kind) for v in range(len(x))]
    text = _table(("node", "value", "gate_target", "gate"), rows)
    text += f"\n{'PASS' if not viol else 'FAIL'}\tkappa={kappa:g}\tviolations={len(viol)}"
    res = CommandResult(EXIT_FAIL if viol else EXIT_OK, summary=text)
    body = {"kappa": kappa, "assignment": x, "violations": io.violations_plain(viol), "passed": not viol}
    if args.output:
        io.write_text_atomic(args.output, io.dumps(io.record_doc("decode", body)))
        res.report_path = args.output
    d = _out_dir(args)
    if d is not None:
        io.write_text_atomic(d / "decode.json", io.dumps(io.record_doc("decode", body)))
        res.report_path = res.report_path or str(d / "decode.json")
        _write_table(d, "assignment.tsv", _table(("node", "value", "gate_target", "gate"), rows), res)
        from . import plotting
        res.files.append(plotting.plot_assignment(x, targets, kappa, d / "assignment.png"))
    return res


def cmd_brute(args) -> CommandResult:
    inst = io.load(args.instance, io.INSTANCE)
    issues = validate_instance(inst)
    if issues:
        raise ModelError("; ".join(issues))
    if args.brute_cmd == "allocate":
        prof = io.load(args.strategy, io.STRATEGY)
        marg = marginals_of(prof, inst.distributions)
        rows = []
        for i in range(inst.n):
            fast = win_probs(i, marg, inst.rule)
            for j in range(inst.m + 1):
                slow = enumerate_allocation(i, j, marg, inst.rule)
                rows.append((i, j, slow, float(abs(slow - fast[j]))))
        text = _table(("player", "bid_index", "win_prob", "gap_to_fast_path"), rows)
        return CommandResult(EXIT_OK, summary=text)
    if args.brute_cmd == "grid":
        cfg = GridSearchConfig(args.resolution, args.tolerance, args.max_profiles, args.symmetric)
        found = grid_search_bne(inst, cfg)
        io.save(args.output, found.profile)
        text = _table(("key", "value"), [("sup_regret", found.regret), ("examined", found.examined)])
        res = CommandResult(EXIT_OK, summary=text, files=[args.output])
        d = _out_dir(args)
        if d is not None:
            _profile_figures(d, found.profile, inst, res)
        return res
    # dynamics
    start = io.load(args.strategy, io.STRATEGY) if args.strategy else None
    if start is None:
        start = (_bid_floor(inst),) * inst.n
    traj = best_response_dynamics(inst, start, args.rounds)
    io.save(args.output, traj[-1].profile)
    rows = [(k, s.regret) for k, s in enumerate(traj)]
    text = _table(("round", "max_sup_regret"), rows)
    res = CommandResult(EXIT_OK, summary=text, files=[args.output])
    d = _out_dir(args)
    if d is not None:
        _write_table(d, "trajectory.tsv", text, res)
        from . import plotting
        res.files.append(plotting.plot_trajectory([s.regret for s in traj], d / "trajectory.png"))
    return res


def _bid_floor(inst: AuctionInstance) -> MonotoneStrategy:
    """Bid the highest bid not above the value."""
    return MonotoneStrategy(tuple(float(b) for b in inst.bids[1:]))


def gen_symmetric_uniform(players: int, bids: int) -> AuctionInstance:
    grid = tuple(float(x) for x in np.round(np.arange(bids) / bids, 12))
    return AuctionInstance(BidSpace(grid), (ValueDistribution.uniform(),) * players)


def gen_two_point(players: int, bids: int, rng: np.random.Generator) -> AuctionInstance:
    grid = tuple(float(x) for x in np.round(np.arange(bids) / bids, 12))
    dists = []
    for _ in range(players):
        lo, hi = np.sort(rng.choice(np.arange(1, 20) / 20, size=2, replace=False))
        w = float(np.round(rng.uniform(0.1, 0.9), 6))
        dists.append(ValueDistribution.discrete((float(lo), float(hi)), (w, 1.0 - w)))
    return AuctionInstance(BidSpace(grid), tuple(dists), TieBreakingRule.uniform())


def cmd_gen(args) -> CommandResult:
    rng = np.random.default_rng(args.seed)
    if args.kind == "symmetric-uniform":
        obj = gen_symmetric_uniform(args.players, args.bids)
    elif args.kind == "two-point":
        obj = gen_two_point(args.players, args.bids, rng)
    else:
        obj = random_circuit(rng, args.size, acyclic=args.acyclic)
    io.save(args.output, obj)
    return CommandResult(EXIT_OK, summary=f"{args.kind}\t{args.output}", files=[args.output])


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpabne", description="First-price auction equilibrium toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a file for structural problems")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    def pair(p):
        p.add_argument("instance")
        p.add_argument("strategy")

    def out_dir(p):
        p.add_argument("--out-dir", help="write the JSON report, tables and figures here")

    p = sub.add_parser("marginals", help="bid distribution induced by a profile")
    pair(p)
    out_dir(p)
    p.set_defaults(func=cmd_marginals)

    p = sub.add_parser("allocate", help="win probability of every bid")
    pair(p)
    p.add_argument("--player", type=int)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("verify", help="check an equilibrium notion")
    pair(p)
    p.add_argument("--notion", choices=NOTIONS, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--report", help="write the verification report to this file")
    out_dir(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("convert", help="approximate to well-supported equilibrium")
    pair(p)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-check", action="store_true", help="skip the input verification")
    out_dir(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("solve", help="approximation scheme for uniform tie-breaking")
    p.add_argument("instance")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--omega", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--budget", type=int, help="max candidates (default from FPABNE_BUDGET)")
    p.add_argument("--emit-certificate", metavar="PATH")
    p.add_argument("-o", "--output", default="solution.json")
    out_dir(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("reduce", help="encode a circuit as an auction")
    p.add_argument("circuit")
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--delta", type=float, default=0.02)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--full-scale", action="store_true", help="use the polynomial scale in the player count")
    p.add_argument("--slivers", action="store_true", help="thin density slivers instead of atoms")
    p.add_argument("--instance-out", required=True)
    p.add_argument("--meta-out", required=True)
    p.add_argument("--fixed-point", metavar="PATH", help="also write the prescribed profile at a fixed point")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("decode", help="read a circuit assignment off a strategy profile")
    p.add_argument("meta")
    p.add_argument("strategy")
    p.add_argument("--kappa", type=float)
    p.add_argument("-o", "--output")
    out_dir(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("brute", help="slow reference computations")
    bsub = p.add_subparsers(dest="brute_cmd", required=True)
    q = bsub.add_parser("allocate")
    pair(q)
    q = bsub.add_parser("grid")
    q.add_argument("instance")
    q.add_argument("--resolution", type=float, default=0.1)
    q.add_argument("--tolerance", type=float, default=0.0)
    q.add_argument("--max-profiles", type=int, default=200_000)
    q.add_argument("--symmetric", action="store_true")
    q.add_argument("-o", "--output", required=True)
    out_dir(q)
    q = bsub.add_parser("dynamics")
    q.add_argument("instance")
    q.add_argument("--strategy")
    q.add_argument("--rounds", type=int, default=20)
    q.add_argument("-o", "--output", required=True)
    out_dir(q)
    p.set_defaults(func=cmd_brute)

    p = sub.add_parser("gen", help="built-in instance and circuit generators")
    p.add_argument("kind", choices=("symmetric-uniform", "two-point", "reduction-relaxed"))
    p.add_argument("--players", type=int, default=2)
    p.add_argument("--bids", type=int, default=10, help="number of equispaced bids k/B")
    p.add_argument("--size", type=int, default=5, help="circuit nodes")
    p.add_argument("--acyclic", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)
    return ap


def run(argv: Sequence[str] | None = None) -> CommandResult:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return CommandResult(int(exc.code or 0))
    try:
        return args.func(args)
    except io.ParseError as exc:
        return CommandResult(EXIT_USAGE, summary=f"parse error: {exc}")
    except BudgetExceeded as exc:
        return CommandResult(EXIT_BUDGET, summary=f"refused: {exc}")
    except (SolveError, ConversionError) as exc:
        return CommandResult(EXIT_FAIL, summary=f"failed: {exc}")
    except (UsageError, ModelError, ReductionError, ValueError) as exc:
        return CommandResult(EXIT_USAGE, summary=f"refused: {exc}")


def main(argv: Sequence[str] | None = None) -> int:
    res = run(argv)
    if res.summary:
        stream = sys.stdout if res.status in (EXIT_OK, EXIT_FAIL) else sys.stderr
        print(res.summary, file=stream)
    for f in res.files:
        print(f"wrote\t{f}")
    return res.status


if __name__ == "__main__":
    sys.exit(main())

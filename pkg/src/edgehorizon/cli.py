"""Command-line entry point.

Every subcommand writes TSV (or the graph dump format) to standard output
or ``--out``. Exit status is 0 on success, 1 on bad input or usage, and 2
when ``--strict`` is given and a centrality computation did not converge.
"""
from __future__ import annotations

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from .centrality import BetaVector, CentralityVector, KatzParams, Kind, alt_centrality, compute_beta, katz_power
from .cfg import Cfg, CfgError, parse_cfg
from .graph import Digraph
from .horizon import (
    CoverageError,
    EdgeHorizonGraph,
    TraceFormatError,
    build_edge_horizon_graph,
    format_edge_horizon_graph,
    parse_edge_horizon_graph,
    parse_traces,
)
from .oracle import feasible_edges, kendall_tau, oracle_counts
from .scheduler import Mode, MutationStats, SchedulingError, parse_stats, rank_seeds
from .simulator import Strategy, format_program, generate_program, parse_program, run_campaign

EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
CENTRALITY_KINDS = ["katz"] + [k.value for k in Kind]


class InputError(Exception):
    """Bad input file or argument; the message is already user-facing."""


def _fmt(x: float) -> str:
    return format(x, ".12g")


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None


def _load(path: str, parser):
    try:
        return parser(_read(path))
    except (CfgError, TraceFormatError, SchedulingError) as exc:
        line = getattr(exc, "line", None)
        message = getattr(exc, "message", str(exc))
        where = f"{path}:{line}" if line is not None else path
        raise InputError(f"{where}: {message}") from None
    except (ValueError, OverflowError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _build(cfg: Cfg, traces_path: str, traces: dict[int, set[int]]) -> EdgeHorizonGraph:
    try:
        return build_edge_horizon_graph(cfg, traces)
    except CoverageError as exc:
        raise InputError(f"{traces_path}: {exc}") from None


def _katz_params(args: argparse.Namespace) -> KatzParams:
    # alpha = 1 is carried by the eigenvector variant, which ignores alpha.
    alpha = KatzParams.alpha if args.alpha == 1.0 else args.alpha
    try:
        return KatzParams(alpha, args.tolerance, args.max_iterations)
    except ValueError as exc:
        raise InputError(f"alpha must lie in [0, 1], got {args.alpha}" if "alpha" in str(exc) else str(exc)) from None


def _katz(args: argparse.Namespace, graph: Digraph, beta: BetaVector) -> CentralityVector:
    params = _katz_params(args)
    if args.alpha == 1.0:
        return alt_centrality(graph, Kind.EIGENVECTOR, params, beta)
    return katz_power(graph, params, beta)


def _write(args: argparse.Namespace, text: str) -> None:
    if getattr(args, "out", None):
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise InputError(f"{args.out}: {exc.strerror or exc}") from None
    else:
        sys.stdout.write(text)


def _check_converged(args: argparse.Namespace, converged: bool, iterations: int) -> int:
    if converged:
        return 0
    print(f"warning: centrality did not converge after {iterations} iterations", file=sys.stderr)
    return EXIT_NOT_CONVERGED if args.strict else 0


def _stats(args: argparse.Namespace) -> MutationStats:
    return _load(args.stats, parse_stats) if args.stats else MutationStats()


# -- subcommands ----------------------------------------------------------------


def cmd_graph(args: argparse.Namespace) -> int:
    cfg = _load(args.cfg, parse_cfg)
    traces = _load(args.traces, parse_traces)
    _write(args, format_edge_horizon_graph(_build(cfg, args.traces, traces)))
    return 0


def _graph_input(args: argparse.Namespace) -> tuple[Digraph, frozenset[int]]:
    """Graph and horizon for ``centrality``: a CFG, a dump, or CFG plus traces."""
    if args.graph:
        raw = _read(args.graph)
        is_cfg = any(line.split()[:1] == [b"entry"] for line in raw.splitlines())
        if is_cfg:
            return _load(args.graph, parse_cfg).graph, frozenset()
        ehg = _load(args.graph, parse_edge_horizon_graph)
        return ehg.graph, ehg.horizon_nodes
    if not (args.cfg and args.traces):
        raise InputError("centrality needs --graph, or --cfg together with --traces")
    cfg = _load(args.cfg, parse_cfg)
    ehg = _build(cfg, args.traces, _load(args.traces, parse_traces))
    return ehg.graph, ehg.horizon_nodes


def cmd_centrality(args: argparse.Namespace) -> int:
    graph, horizon = _graph_input(args)
    params = _katz_params(args)
    beta = compute_beta(horizon, _stats(args)) if horizon else BetaVector()
    if args.kind == "katz":
        c = _katz(args, graph, beta)
    else:
        if graph.n == 0:
            raise InputError(f"{args.kind} centrality of an empty graph is undefined")
        c = alt_centrality(graph, args.kind, params, beta)
    _write(args, "".join(f"{node}\t{_fmt(score)}\n" for node, score in c.ranked()))
    return _check_converged(args, c.converged, c.iterations_used)


def cmd_rank(args: argparse.Namespace) -> int:
    cfg = _load(args.cfg, parse_cfg)
    ehg = _build(cfg, args.traces, _load(args.traces, parse_traces))
    c = _katz(args, ehg.graph, compute_beta(ehg.horizon_nodes, _stats(args)))
    ranking = rank_seeds(ehg, c, args.mode)
    _write(args, "".join(f"{e.seed}\t{_fmt(e.score)}\t{_fmt(e.energy)}\n" for e in ranking))
    return _check_converged(args, c.converged, c.iterations_used)


def _parse_generate(spec: str) -> dict[str, float]:
    known = {"n": int, "seed": int, "branching": int, "depth_bias": float, "rare": int}
    out = {}
    for item in spec.split(","):
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise InputError(f"--generate: expected key=value with keys {', '.join(known)}, got {item!r}")
        try:
            out[key] = known[key](value)
        except ValueError:
            raise InputError(f"--generate: bad value for {key}: {value!r}") from None
    if "n" not in out:
        raise InputError("--generate: n=<nodes> is required")
    return out


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.program:
        program = _load(args.program, parse_program)
    else:
        g = _parse_generate(args.generate)
        try:
            program = generate_program(
                g["n"],
                g.get("branching", 2),
                g.get("depth_bias", 0.5),
                g.get("seed", 0),
                rare_regions=g.get("rare", 0),
            )
        except ValueError as exc:
            raise InputError(f"--generate: {exc}") from None
    if args.save_program:
        try:
            Path(args.save_program).write_text(format_program(program), encoding="utf-8")
        except OSError as exc:
            raise InputError(f"{args.save_program}: {exc.strerror or exc}") from None
    strategy = args.strategy
    if strategy == Strategy.KATZ.value and args.alpha == 1.0:
        strategy = Strategy.EIGENVECTOR.value
    try:
        result, _ = run_campaign(
            program,
            strategy,
            args.rounds,
            args.budget,
            args.rng_seed,
            mode=args.mode,
            params=_katz_params(args),
            rebuild_interval=args.rebuild_interval,
            max_mutations=args.max_mutations,
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _write(args, result.to_tsv())
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    cfg = _load(args.cfg, parse_cfg)
    traces = _load(args.traces, parse_traces)
    ehg = _build(cfg, args.traces, traces)
    c = _katz(args, ehg.graph, compute_beta(ehg.horizon_nodes, _stats(args)))
    feasible = None
    if args.reference:
        reference = _load(args.reference, parse_traces)
        covered = set().union(*traces.values(), *reference.values())
        feasible = feasible_edges(ehg, covered)
    counts = oracle_counts(ehg, feasible)
    scores = {s: c[ehg.seed_nodes[s]] for s in ehg.seeds}
    order = sorted(scores, key=lambda s: (-scores[s], s))
    lines = [f"{s}\t{_fmt(scores[s])}\t{counts[s]}\n" for s in order]
    if len(scores) >= 2:
        agreement = kendall_tau(scores, counts)
        lines.append(f"# tau={_fmt(agreement.tau)} p={_fmt(agreement.p_value)}\n")
    else:
        lines.append("# tau=nan p=nan\n")
    _write(args, "".join(lines))
    return _check_converged(args, c.converged, c.iterations_used)


# -- argument parsing ---------------------------------------------------------------


def _add_katz_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.5, help="Katz decay factor, in [0, 1]; 1 selects eigenvector centrality")
    p.add_argument("--tolerance", type=float, default=1e-9, help="L-infinity convergence threshold")
    p.add_argument("--max-iterations", type=int, default=1000, help="power iteration cap")
    p.add_argument("--strict", action="store_true", help="exit 2 if the iteration does not converge")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", "-o", help="output file (default: standard output)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="edgehorizon",
        description="Rank fuzzing seeds by Katz centrality over the edge horizon graph.",
        formatter_class=fmt,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("graph", help="dump the edge horizon graph", formatter_class=fmt)
    p.add_argument("--cfg", required=True, help="CFG file")
    p.add_argument("--traces", required=True, help="coverage trace file")
    _add_out(p)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("centrality", help="per-node centrality scores", formatter_class=fmt)
    p.add_argument("--graph", help="CFG file or edge horizon graph dump")
    p.add_argument("--cfg", help="CFG file (with --traces, instead of --graph)")
    p.add_argument("--traces", help="coverage trace file")
    p.add_argument("--stats", help="mutation statistics file; sets beta on horizon nodes")
    p.add_argument("--kind", choices=CENTRALITY_KINDS, default="katz", help="centrality measure")
    _add_katz_options(p)
    _add_out(p)
    p.set_defaults(func=cmd_centrality)

    p = sub.add_parser("rank", help="seed ranking with energies", formatter_class=fmt)
    p.add_argument("--cfg", required=True, help="CFG file")
    p.add_argument("--traces", required=True, help="coverage trace file")
    p.add_argument("--stats", help="mutation statistics file")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.PROBABILISTIC.value, help="energy contract")
    _add_katz_options(p)
    _add_out(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("simulate", help="run one synthetic fuzzing campaign", formatter_class=fmt)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--program", help="program file (CFG plus traverse probabilities)")
    src.add_argument("--generate", help="generate a program, e.g. n=500,seed=3,branching=3,depth_bias=0.5,rare=2")
    p.add_argument("--save-program", help="also write the program to this file")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.KATZ.value, help="scheduling strategy")
    p.add_argument("--rounds", type=int, default=500, help="scheduling rounds")
    p.add_argument("--budget", type=int, default=20, help="base mutation budget per round")
    p.add_argument("--max-mutations", type=int, default=None, help="stop after this many mutations")
    p.add_argument("--rng-seed", type=int, default=0, help="campaign random seed")
    p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.PROBABILISTIC.value, help="energy contract")
    p.add_argument("--rebuild-interval", type=int, default=100, help="rounds between forced rebuilds")
    _add_katz_options(p)
    _add_out(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="centrality against reachable feasible edge counts", formatter_class=fmt)
    p.add_argument("--cfg", required=True, help="CFG file")
    p.add_argument("--traces", required=True, help="coverage trace file")
    p.add_argument("--stats", help="mutation statistics file")
    p.add_argument("--reference", help="traces of a reference run; edges it covers are feasible (default: all)")
    _add_katz_options(p)
    _add_out(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for non-convergence.
        return EXIT_INPUT if exc.code else 0
    try:
        return args.func(args)
    except InputError as exc:
        print(f"edgehorizon: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

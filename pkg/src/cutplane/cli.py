"""Command-line entry point.

Exit codes: 0 bound obtained (converged or stalled), 2 infeasible,
3 time limit, 4 input error, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from .caseio import CaseFormatError, PerturbationSpec, load_network, perturb_loads, write_network
from .cuts import ArchiveError, ArchiveWarning, load_archive, save_archive
from .driver import (CONVERGED, NUMERIC, STALLED, TIME_LIMIT, AlgorithmParams, RunReport,
                     parse_solution, solve_case, warm_start)
from .relaxation import BuildOptions

EXIT_OK, EXIT_INFEASIBLE, EXIT_TIME, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4, 5

_STATUS_EXIT = {CONVERGED: EXIT_OK, STALLED: EXIT_OK, TIME_LIMIT: EXIT_TIME,
                "infeasible": EXIT_INFEASIBLE, NUMERIC: EXIT_NUMERIC}

# flag -> AlgorithmParams field
_PARAM_FLAGS = {
    "time_limit": ("--time-limit", float, "wall-clock limit in seconds"),
    "ftol_rounds": ("--ftol-rounds", int, "stop after this many rounds without relative progress"),
    "ftol": ("--ftol", float, "relative improvement counted as progress"),
    "cut_age": ("--cut-age", int, "rounds a slack cut survives before it is dropped"),
    "eps_jabr": ("--eps-jabr", float, "violation tolerance for Jabr cones"),
    "eps_i2": ("--eps-i2", float, "violation tolerance for current cones"),
    "eps_lim": ("--eps-lim", float, "violation tolerance for thermal limits"),
    "eps_par": ("--eps-par", float, "reject cuts whose normal cosine exceeds 1 - eps"),
    "top_jabr": ("--top-jabr", float, "percent of violated Jabr cones cut per round"),
    "top_i2": ("--top-i2", float, "percent of violated current cones cut per round"),
    "top_lim": ("--top-lim", float, "percent of violated limits cut per round"),
    "threads": ("--threads", int, "threads used for separation"),
}


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(f"{self.prog}: error: {message}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    defaults = AlgorithmParams()
    g = p.add_argument_group("algorithm")
    for name, (flag, typ, text) in _PARAM_FLAGS.items():
        g.add_argument(flag, dest=name, type=typ, default=getattr(defaults, name),
                       help=f"{text} (default: %(default)s)")
    b = p.add_argument_group("relaxation")
    opts = BuildOptions()
    b.add_argument("--objective", choices=("qp", "pwl"), default=opts.objective,
                   help="exact quadratic costs or secant pwl costs (default: %(default)s)")
    b.add_argument("--pwl-segments", type=int, default=opts.pwl_segments,
                   help="segments per generator in pwl mode (default: %(default)s)")
    b.add_argument("--no-loss-rows", action="store_true",
                   help="omit the rows P_km + P_mk >= 0 (default: rows included)")
    b.add_argument("--free-c-lb", action="store_true",
                   help="allow c_km < 0 (default: c_km >= 0)")
    o = p.add_argument_group("output")
    o.add_argument("--report", type=Path, help="write the full text report here")
    o.add_argument("--csv", type=Path, help="write per-round CSV here")
    o.add_argument("--save-cuts", type=Path, help="write the cut archive here")


def _params(ns) -> AlgorithmParams:
    try:
        return AlgorithmParams(**{name: getattr(ns, name) for name in _PARAM_FLAGS})
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _opts(ns) -> BuildOptions:
    try:
        return BuildOptions(objective=ns.objective, pwl_segments=ns.pwl_segments,
                            loss_rows=not ns.no_loss_rows, c_lower_zero=not ns.free_c_lb)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cutplane", description="Cutting-plane lower bounds for ACOPF.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="bound a case from scratch")
    s.add_argument("case", type=Path)
    _add_run_flags(s)

    w = sub.add_parser("warmstart", help="bound a case starting from archived cuts")
    w.add_argument("case", type=Path)
    w.add_argument("--cuts", type=Path, required=True, help="cut archive to re-instate")
    _add_run_flags(w)

    q = sub.add_parser("perturb", help="write a case with randomly perturbed active loads")
    q.add_argument("case", type=Path)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--mean-scale", type=float, default=0.05, help="(default: %(default)s)")
    q.add_argument("--sd-scale", type=float, default=0.05, help="(default: %(default)s)")
    q.add_argument("-o", "--output", type=Path, required=True)

    d = sub.add_parser("decompose", help="loss ledger and path decomposition of a solution")
    d.add_argument("case", type=Path)
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--solution", type=Path, help="text report written by solve --report")
    src.add_argument("--resolve", action="store_true", help="solve the case first")
    d.add_argument("--paths", type=int, default=20, help="paths to list (default: %(default)s)")
    _add_run_flags(d)

    e = sub.add_parser("experiment", help="diagnostic experiments")
    esub = e.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    r = esub.add_parser("relax-one", help="relax one random branch per trial")
    r.add_argument("case", type=Path)
    r.add_argument("--trials", type=int, default=50, help="(default: %(default)s)")
    r.add_argument("--seed", type=int, default=0, help="(default: %(default)s)")
    r.add_argument("--restore", action="store_true",
                   help="also re-enable the branch after each trial and record the bound")
    _add_run_flags(r)
    return p


def _emit(rep: RunReport, ns, model=None) -> None:
    print(f"case: {rep.case}")
    print(f"status: {rep.status}")
    print(f"bound: {rep.bound:.2f}")
    print(f"rounds: {rep.n_rounds} (with new cuts: {rep.cut_rounds})")
    print(f"cuts computed/added: {rep.total_computed}/{rep.total_added}")
    if rep.warm:
        print(f"round-0 bound: {rep.round0_bound:.2f}")
    if rep.approximate:
        print("note: pwl objective; bound refers to the secant cost")
    if rep.message:
        print(f"message: {rep.message}")
    print(f"time: {rep.wall_time:.2f} s")
    if ns.report:
        ns.report.write_text(rep.to_text())
    if ns.csv:
        ns.csv.write_text(rep.to_csv())
    if ns.save_cuts and model is not None:
        save_archive(ns.save_cuts, model.cuts)


def _cmd_solve(ns) -> int:
    net = load_network(ns.case)
    rep, model = solve_case(net, _params(ns), _opts(ns))
    _emit(rep, ns, model)
    return _STATUS_EXIT.get(rep.status, EXIT_NUMERIC)


def _cmd_warmstart(ns) -> int:
    net = load_network(ns.case)
    arch = load_archive(ns.cuts)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ArchiveWarning)
        rep, model = warm_start(net, arch, _params(ns), _opts(ns))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _emit(rep, ns, model)
    return _STATUS_EXIT.get(rep.status, EXIT_NUMERIC)


def _cmd_perturb(ns) -> int:
    try:
        spec = PerturbationSpec(ns.seed, ns.mean_scale, ns.sd_scale)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    net = perturb_loads(load_network(ns.case), spec)
    write_network(net, ns.output)
    print(f"wrote {ns.output} (total load {net.total_load() * net.baseMVA:.4f} MW)")
    return EXIT_OK


def _cmd_decompose(ns) -> int:
    from .flowdecomp import ConservationError, decompose, decomposition_text, loss_report, \
        subdivide_and_orient

    net = load_network(ns.case)
    code = EXIT_OK
    if ns.resolve:
        rep, _ = solve_case(net, _params(ns), _opts(ns))
        if rep.point is None:
            print(f"status: {rep.status}", file=sys.stderr)
            return _STATUS_EXIT.get(rep.status, EXIT_NUMERIC)
        pt = rep.point
        code = _STATUS_EXIT.get(rep.status, EXIT_NUMERIC)
    else:
        try:
            pt = parse_solution(ns.solution.read_text())
        except ValueError as exc:
            raise InputError(f"{ns.solution}: {exc}") from None
        if len(pt.v2) != net.n_bus or len(pt.c) != net.n_branch:
            raise InputError("solution does not match the case dimensions")
    try:
        graph = subdivide_and_orient(net, pt)
    except ConservationError as exc:
        raise InputError(str(exc)) from None
    dec = decompose(graph)
    sys.stdout.write(loss_report(net, pt).to_text())
    sys.stdout.write("\n" + decomposition_text(net, graph, dec, ns.paths))
    return code


def _cmd_experiment(ns) -> int:
    from .flowdecomp import single_branch_relaxation_experiment

    if ns.trials < 1:
        raise InputError("--trials must be >= 1")
    net = load_network(ns.case)
    table = single_branch_relaxation_experiment(net, ns.trials, ns.seed, _params(ns), _opts(ns),
                                                restore=ns.restore)
    text = table.to_csv()
    if ns.csv:
        ns.csv.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {"solve": _cmd_solve, "warmstart": _cmd_warmstart, "perturb": _cmd_perturb,
             "decompose": _cmd_decompose, "experiment": _cmd_experiment}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except InputError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[ns.command](ns)
    except (InputError, CaseFormatError, ArchiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

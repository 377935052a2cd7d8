"""The outer cutting-plane loop, warm starts and run reports."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .backend import INFEASIBLE, OPTIMAL
from .cuts import CutArchive, CutManager
from .grid import Network
from .relaxation import BuildOptions, RelaxationModel, SolutionPoint, build_base_model
from .separation import FAMILIES, I2, JABR, LIMIT, find_violations

log = logging.getLogger(__name__)

CONVERGED = "converged"
STALLED = "stalled"
TIME_LIMIT = "time-limit"
NUMERIC = "numeric-failure"

_POINT_FIELDS = ("v2", "pg", "qg", "c", "s", "i2", "pkm", "pmk", "qkm", "qmk")


@dataclass(frozen=True)
class AlgorithmParams:
    time_limit: float = 1000.0
    ftol_rounds: int = 5
    ftol: float = 1e-5
    cut_age: int = 5
    eps_jabr: float = 1e-5
    eps_i2: float = 1e-5
    eps_lim: float = 1e-5
    eps_par: float = 1e-2
    top_jabr: float = 15.0
    top_i2: float = 15.0
    top_lim: float = 15.0
    threads: int = 1

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ValueError("time limit must be positive")
        if self.ftol_rounds < 0 or self.cut_age < 1:
            raise ValueError("ftol_rounds must be >= 0 and cut_age >= 1")
        for name in ("top_jabr", "top_i2", "top_lim"):
            if not 0 < getattr(self, name) <= 100:
                raise ValueError(f"{name} must lie in (0, 100]")
        for name in ("eps_jabr", "eps_i2", "eps_lim", "ftol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.eps_par < 1:
            raise ValueError("eps_par must lie in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def tolerances(self) -> dict[str, float]:
        return {JABR: self.eps_jabr, I2: self.eps_i2, LIMIT: self.eps_lim}


@dataclass
class RoundLog:
    round: int
    z: float
    violated: tuple[int, int, int]
    max_violation: tuple[float, float, float]
    computed: int
    added: int
    dropped: int
    live_cuts: int
    solve_time: float
    elapsed: float


@dataclass
class RunReport:
    case: str
    status: str
    bound: float
    rounds: list[RoundLog] = field(default_factory=list)
    wall_time: float = 0.0
    warm: bool = False
    round0_bound: float = math.nan
    approximate: bool = False
    message: str = ""
    point: SolutionPoint | None = None

    @property
    def n_rounds(self) -> int:
        """Number of solves."""
        return len(self.rounds)

    @property
    def cut_rounds(self) -> int:
        """Solves that were followed by at least one new cut."""
        return sum(1 for r in self.rounds if r.added > 0)

    @property
    def total_computed(self) -> int:
        return sum(r.computed for r in self.rounds)

    @property
    def total_added(self) -> int:
        return sum(r.added for r in self.rounds)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "z", "computed", "added", "dropped", "time"])
        for r in self.rounds:
            w.writerow([r.round, repr(r.z), r.computed, r.added, r.dropped, f"{r.solve_time:.6f}"])
        return buf.getvalue()

    def to_text(self, include_point: bool = True) -> str:
        out = [
            "[run]",
            f"case={self.case}",
            f"status={self.status}",
            f"bound={self.bound!r}",
            f"rounds={self.n_rounds}",
            f"cut_rounds={self.cut_rounds}",
            f"computed={self.total_computed}",
            f"added={self.total_added}",
            f"wall_time={self.wall_time:.6f}",
            f"warm={str(self.warm).lower()}",
        ]
        if self.warm:
            out.append(f"round0_bound={self.round0_bound!r}")
        if self.approximate:
            out.append("objective=approximate-pwl")
        if self.message:
            out.append(f"message={self.message}")
        for r in self.rounds:
            out += [
                "",
                f"[round {r.round}]",
                f"z={r.z!r}",
                "violated=" + ",".join(map(str, r.violated)),
                "max_violation=" + ",".join(repr(v) for v in r.max_violation),
                f"computed={r.computed}",
                f"added={r.added}",
                f"dropped={r.dropped}",
                f"live_cuts={r.live_cuts}",
                f"solve_time={r.solve_time:.6f}",
                f"elapsed={r.elapsed:.6f}",
            ]
        if include_point and self.point is not None:
            out += ["", "[solution]", f"z={self.point.z!r}", f"round={self.point.round}"]
            for name in _POINT_FIELDS:
                out.append(f"{name}=" + ",".join(repr(float(v)) for v in getattr(self.point, name)))
        return "\n".join(out) + "\n"


def parse_solution(text: str) -> SolutionPoint:
    """Read the ``[solution]`` block written by :meth:`RunReport.to_text`."""
    lines = text.splitlines()
    try:
        start = lines.index("[solution]")
    except ValueError:
        raise ValueError("report has no [solution] block") from None
    vals: dict[str, str] = {}
    for line in lines[start + 1:]:
        if not line.strip() or line.startswith("["):
            break
        key, _, val = line.partition("=")
        vals[key] = val
    missing = [k for k in _POINT_FIELDS + ("z",) if k not in vals]
    if missing:
        raise ValueError(f"solution block lacks {', '.join(missing)}")

    def vec(s: str) -> np.ndarray:
        return np.array([float(t) for t in s.split(",")]) if s else np.zeros(0)

    return SolutionPoint(**{k: vec(vals[k]) for k in _POINT_FIELDS}, z=float(vals["z"]),
                         round=int(vals.get("round", 0)))


def _stalled(z: float, z0: float, ftol: float) -> bool:
    if z0 == 0:
        return abs(z - z0) < 1e-9
    return z - z0 < abs(z0) * ftol


def cutplane(model: RelaxationModel, params: AlgorithmParams | None = None,
             suppress: Iterable[int] = (), warm: bool = False) -> RunReport:
    """Run the cutting-plane loop on ``model`` until convergence, stall or timeout.

    ``suppress`` lists branches whose jabr and i2 cuts are never generated.
    """
    params = params or AlgorithmParams()
    mgr = model.cuts if isinstance(model.cuts, CutManager) else CutManager(model, params.eps_par)
    mgr.eps_par = params.eps_par
    for l in suppress:
        mgr.suppress(l)
    report = RunReport(model.net.name, STALLED, -math.inf, warm=warm,
                       approximate=model.approximate)
    t_start = time.perf_counter()
    r = 0
    z0 = None
    k = 0
    first = True
    while True:
        elapsed = time.perf_counter() - t_start
        if elapsed >= params.time_limit and k > 0:
            report.status = TIME_LIMIT
            break
        # the limit is checked between solves; a running solve is never cut short
        out = model.solve(warm=not first)
        first = False
        if out.status == INFEASIBLE:
            report.status = INFEASIBLE
            report.message = out.message or "relaxation infeasible"
            break
        if out.status != OPTIMAL:
            if out.message and "time" in out.message.lower():
                report.status = TIME_LIMIT
            else:
                report.status = NUMERIC
            report.message = f"{out.status}: {out.message}"
            break
        k += 1
        pt = model.snapshot(k)
        z = pt.z
        report.bound = z
        report.point = pt
        if warm and k == 1:
            report.round0_bound = z
        viol = find_violations(pt, model.net, params.eps_jabr, params.eps_i2, params.eps_lim,
                               threads=params.threads)
        viol = tuple(mgr.filter_suppressed(kind, v) for kind, v in zip(FAMILIES, viol))
        row = RoundLog(k, z, tuple(len(v) for v in viol),
                       tuple(v[0].violation if v else 0.0 for v in viol),
                       0, 0, 0, mgr.n_live, out.solve_time, 0.0)
        report.rounds.append(row)
        if not any(viol):
            report.status = CONVERGED
            row.elapsed = time.perf_counter() - t_start
            break
        if z0 is not None:
            r = r + 1 if _stalled(z, z0, params.ftol) else 0
        sel = mgr.select_and_add(pt, viol, params.top_jabr, params.top_i2, params.top_lim, k)
        row.computed, row.added = sel.computed, sel.added
        row.dropped = mgr.age_and_expire(pt, params.cut_age, params.tolerances)
        row.live_cuts = mgr.n_live
        row.elapsed = time.perf_counter() - t_start
        log.info("round %d z=%.8g violated=%s added=%d dropped=%d live=%d",
                 k, z, row.violated, row.added, row.dropped, row.live_cuts)
        z0 = z
        if r >= params.ftol_rounds:
            report.status = STALLED
            break
    report.wall_time = time.perf_counter() - t_start
    return report


def solve_case(net: Network, params: AlgorithmParams | None = None,
               opts: BuildOptions | None = None) -> tuple[RunReport, RelaxationModel]:
    model = build_base_model(net, opts)
    CutManager(model, (params or AlgorithmParams()).eps_par)
    return cutplane(model, params), model


def warm_start(net: Network, archive: CutArchive, params: AlgorithmParams | None = None,
               opts: BuildOptions | None = None) -> tuple[RunReport, RelaxationModel]:
    """Build M0 for ``net``, re-instate archived cuts, then run the loop."""
    params = params or AlgorithmParams()
    archive.check(net)
    model = build_base_model(net, opts)
    mgr = CutManager(model, params.eps_par)
    mgr.reinstate(archive.cuts, 0)
    return cutplane(model, params, warm=True), model

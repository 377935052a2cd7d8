"""Incremental LP / convex-QP engine adapters.

Two adapters are provided:

* ``highs`` wraps :mod:`highspy`. Rows and columns are buffered in Python and
  flushed to the engine right before a solve, so a round of cut additions and
  removals costs one ``addRows`` and one ``deleteRows`` call. Convex
  quadratic objectives are passed natively.
* ``scipy`` rebuilds a sparse LP and calls :func:`scipy.optimize.linprog`
  on every solve. Linear objectives only.

The adapter is chosen by :func:`make_backend`, which honours the
``CUTPLANE_BACKEND`` environment variable.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf
FEAS_TOL = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"
NUMERIC_FAILURE = "numeric-failure"


class BackendError(RuntimeError):
    pass


class QuadraticNotSupported(BackendError):
    """The engine cannot take quadratic objective terms; use a pwl objective."""


@dataclass
class SolveOutcome:
    status: str
    objective: float = math.nan
    primal: np.ndarray | None = None
    solve_time: float = 0.0
    iterations: int = 0
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _sense_bounds(sense: str, rhs: float) -> tuple[float, float]:
    if sense in ("<=", "L"):
        return -INF, rhs
    if sense in (">=", "G"):
        return rhs, INF
    if sense in ("=", "==", "E"):
        return rhs, rhs
    raise ValueError(f"unknown constraint sense {sense!r}")


@dataclass
class _Row:
    idx: np.ndarray
    val: np.ndarray
    lo: float
    hi: float


class LPBackend:
    """Common bookkeeping: variables, live rows, objective offset."""

    name = "abstract"
    supports_quadratic = False

    def __init__(self):
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._cost: list[float] = []
        self._qcost: list[float] = []
        self._names: list[str] = []
        self._rows: dict[int, _Row] = {}
        self._next_row = 0
        self.offset = 0.0

    # variables -----------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self._lb)

    @property
    def n_constraints(self) -> int:
        return len(self._rows)

    def add_variable(self, lb: float = 0.0, ub: float = INF, cost: float = 0.0,
                     qcost: float = 0.0, name: str | None = None) -> int:
        if lb > ub:
            raise ValueError(f"variable bounds out of order: {lb} > {ub}")
        if qcost < 0:
            raise ValueError("quadratic cost must be non-negative (convex)")
        if qcost > 0 and not self.supports_quadratic:
            raise QuadraticNotSupported(f"{self.name} backend has no quadratic objective support")
        vid = len(self._lb)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._cost.append(float(cost))
        self._qcost.append(float(qcost))
        self._names.append(name or f"x{vid}")
        self._on_add_variable(vid)
        return vid

    def set_bounds(self, vid: int, lb: float, ub: float) -> None:
        if lb > ub:
            raise ValueError(f"variable bounds out of order: {lb} > {ub}")
        self._check_var(vid)
        self._lb[vid], self._ub[vid] = float(lb), float(ub)
        self._on_bounds(vid)

    def bounds(self, vid: int) -> tuple[float, float]:
        return self._lb[vid], self._ub[vid]

    def set_objective_offset(self, value: float) -> None:
        self.offset = float(value)

    def _check_var(self, vid: int) -> None:
        if not 0 <= vid < len(self._lb):
            raise KeyError(f"unknown variable id {vid}")

    # constraints ---------------------------------------------------------
    def add_linear_constraint(self, terms: Iterable[tuple[int, float]], sense: str,
                              rhs: float) -> int:
        acc: dict[int, float] = {}
        for vid, coef in terms:
            self._check_var(vid)
            if not math.isfinite(coef):
                raise ValueError(f"non-finite coefficient {coef}")
            acc[vid] = acc.get(vid, 0.0) + coef
        lo, hi = _sense_bounds(sense, float(rhs))
        idx = np.fromiter(acc.keys(), dtype=np.int32, count=len(acc))
        val = np.fromiter(acc.values(), dtype=np.float64, count=len(acc))
        cid = self._next_row
        self._next_row += 1
        self._rows[cid] = _Row(idx, val, lo, hi)
        self._on_add_row(cid)
        return cid

    def remove_constraint(self, cid: int) -> None:
        if cid not in self._rows:
            raise KeyError(f"constraint {cid} is not live")
        del self._rows[cid]
        self._on_remove_row(cid)

    def remove_constraints(self, cids: Sequence[int]) -> None:
        for cid in cids:
            self.remove_constraint(cid)

    def is_live(self, cid: int) -> bool:
        return cid in self._rows

    def row(self, cid: int) -> tuple[dict[int, float], float, float]:
        r = self._rows[cid]
        return dict(zip(r.idx.tolist(), r.val.tolist())), r.lo, r.hi

    def row_activity(self, cid: int, x: np.ndarray) -> float:
        r = self._rows[cid]
        return float(np.dot(r.val, x[r.idx]))

    # hooks ---------------------------------------------------------------
    def _on_add_variable(self, vid: int) -> None: ...
    def _on_bounds(self, vid: int) -> None: ...
    def _on_add_row(self, cid: int) -> None: ...
    def _on_remove_row(self, cid: int) -> None: ...

    def solve(self, warm: bool = True, time_limit: float | None = None) -> SolveOutcome:
        raise NotImplementedError

    # debugging -----------------------------------------------------------
    def write_lp(self, path: str | os.PathLike) -> None:
        """Dump the current model in CPLEX LP syntax."""

        def term(coef, name, first):
            sign = "-" if coef < 0 else ("" if first else "+")
            return f"{sign} {abs(coef):.17g} {name}".strip()

        lines = ["\\ cutplane model", "Minimize", " obj:"]
        nonzero = [(j, c) for j, c in enumerate(self._cost) if c != 0]
        objterms = [term(c, self._names[j], k == 0) for k, (j, c) in enumerate(nonzero)]
        quad = [f"{2 * q:.17g} {self._names[j]} ^ 2" for j, q in enumerate(self._qcost) if q > 0]
        body = " ".join(objterms) if objterms else "0"
        if quad:
            body += " + [ " + " + ".join(quad) + " ] / 2"
        lines[-1] += " " + body
        lines.append("Subject To")
        for cid, r in self._rows.items():
            lhs = " ".join(term(v, self._names[j], k == 0)
                           for k, (j, v) in enumerate(zip(r.idx.tolist(), r.val.tolist()))) or "0 x0"
            if r.lo == r.hi:
                lines.append(f" r{cid}: {lhs} = {r.lo:.17g}")
            else:
                if r.hi < INF:
                    lines.append(f" r{cid}: {lhs} <= {r.hi:.17g}")
                if r.lo > -INF:
                    lines.append(f" r{cid}_lo: {lhs} >= {r.lo:.17g}")
        lines.append("Bounds")
        for j, (lo, hi) in enumerate(zip(self._lb, self._ub)):
            lo_s = "-inf" if lo == -INF else f"{lo:.17g}"
            hi_s = "+inf" if hi == INF else f"{hi:.17g}"
            lines.append(f" {lo_s} <= {self._names[j]} <= {hi_s}")
        lines.append("End")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


class HighsBackend(LPBackend):
    name = "highs"
    supports_quadratic = True

    def __init__(self, threads: int = 1, verbose: bool = False):
        import highspy

        super().__init__()
        self._hp = highspy
        self.h = highspy.Highs()
        if not verbose:
            self.h.silent()
        self.h.setOptionValue("primal_feasibility_tolerance", FEAS_TOL)
        self.h.setOptionValue("dual_feasibility_tolerance", FEAS_TOL)
        self.h.setOptionValue("threads", threads)
        # committed engine state
        self._ncols = 0
        self._order: list[int] = []          # live committed row ids, engine order
        self._pending: dict[int, None] = {}  # ids added since last flush
        self._doomed: set[int] = set()       # committed ids removed since last flush
        self._bounds_dirty: set[int] = set()
        self._hess_dirty = False
        self.cold_solver = "ipm"

    def _on_add_variable(self, vid):
        if self._qcost[vid] > 0:
            self._hess_dirty = True

    def _on_bounds(self, vid):
        if vid < self._ncols:
            self._bounds_dirty.add(vid)

    def _on_add_row(self, cid):
        self._pending[cid] = None

    def _on_remove_row(self, cid):
        if cid in self._pending:
            del self._pending[cid]
        else:
            self._doomed.add(cid)

    def _flush(self) -> None:
        h = self.h
        n = self.n_vars
        if n > self._ncols:
            k = n - self._ncols
            sl = slice(self._ncols, n)
            h.addCols(k, np.array(self._cost[sl]), np.array(self._lb[sl]), np.array(self._ub[sl]),
                      0, np.zeros(0, np.int32), np.zeros(0, np.int32), np.zeros(0))
            if any(q > 0 for q in self._qcost):
                self._hess_dirty = True
            self._ncols = n
        if self._bounds_dirty:
            ids = np.array(sorted(self._bounds_dirty), dtype=np.int32)
            h.changeColsBounds(len(ids), ids, np.array([self._lb[i] for i in ids]),
                               np.array([self._ub[i] for i in ids]))
            self._bounds_dirty.clear()
        if self._doomed:
            pos = [i for i, cid in enumerate(self._order) if cid in self._doomed]
            h.deleteRows(len(pos), np.array(pos, dtype=np.int32))
            self._order = [cid for cid in self._order if cid not in self._doomed]
            self._doomed.clear()
        if self._pending:
            rows = [self._rows[cid] for cid in self._pending]
            lo = np.array([r.lo for r in rows])
            hi = np.array([r.hi for r in rows])
            starts = np.zeros(len(rows), dtype=np.int32)
            total = 0
            for i, r in enumerate(rows):
                starts[i] = total
                total += len(r.idx)
            idx = np.concatenate([r.idx for r in rows]) if total else np.zeros(0, np.int32)
            val = np.concatenate([r.val for r in rows]) if total else np.zeros(0)
            h.addRows(len(rows), lo, hi, total, starts, idx.astype(np.int32), val)
            self._order.extend(self._pending)
            self._pending = {}
        if self._hess_dirty:
            q = np.array(self._qcost)
            nz = np.nonzero(q > 0)[0]
            start = np.zeros(n + 1, dtype=np.int32)
            # triangular column format; each diagonal entry holds 2*q
            counts = np.zeros(n, dtype=np.int32)
            counts[nz] = 1
            start[1:] = np.cumsum(counts)
            h.passHessian(n, len(nz), self._hp.HessianFormat.kTriangular, start[:n],
                          nz.astype(np.int32), 2.0 * q[nz])
            self._hess_dirty = False

    def _run(self, solver: str) -> None:
        if self._qcost and max(self._qcost) > 0:
            solver = "choose"
        self.h.setOptionValue("solver", solver)
        self.h.run()

    def solve(self, warm: bool = True, time_limit: float | None = None) -> SolveOutcome:
        # Cold solves go through the interior point method plus crossover,
        # which is several times faster than dual simplex on the larger
        # cases. Re-solves after cut changes use dual simplex from the
        # retained basis. A failed attempt is retried once the other way.
        h = self.h
        t0 = time.perf_counter()
        ms = self._hp.HighsModelStatus
        try:
            self._flush()
            h.changeObjectiveOffset(self.offset)
            h.setOptionValue("time_limit", float(time_limit) if time_limit else INF)
            if not warm:
                h.clearSolver()
            hot = warm and h.getBasis().valid
            self._run("simplex" if hot else self.cold_solver)
            if h.getModelStatus() not in (ms.kOptimal, ms.kInfeasible, ms.kTimeLimit):
                h.clearSolver()
                self._run(self.cold_solver if hot else "simplex")
        except Exception as exc:  # engine errors surface as a status
            return SolveOutcome(NUMERIC_FAILURE, solve_time=time.perf_counter() - t0,
                                message=str(exc))
        elapsed = time.perf_counter() - t0
        status = h.getModelStatus()
        info = h.getInfo()
        iters = int(info.simplex_iteration_count + info.ipm_iteration_count
                    + info.qp_iteration_count)
        if status == ms.kOptimal:
            x = np.array(h.getSolution().col_value)
            return SolveOutcome(OPTIMAL, float(info.objective_function_value), x, elapsed, iters)
        if status == ms.kInfeasible:
            out = INFEASIBLE
        elif status in (ms.kUnbounded, ms.kUnboundedOrInfeasible):
            out = UNBOUNDED if status == ms.kUnbounded else INFEASIBLE
        elif status in (ms.kIterationLimit, ms.kTimeLimit):
            out = ITERATION_LIMIT
        else:
            out = NUMERIC_FAILURE
        return SolveOutcome(out, solve_time=elapsed, iterations=iters,
                            message=h.modelStatusToString(status))


class ScipyBackend(LPBackend):
    name = "scipy"
    supports_quadratic = False

    def solve(self, warm: bool = True, time_limit: float | None = None) -> SolveOutcome:
        from scipy.optimize import linprog
        from scipy.sparse import csr_matrix

        t0 = time.perf_counter()
        n = self.n_vars
        ub_rows, eq_rows = [], []
        for r in self._rows.values():
            if r.lo == r.hi:
                eq_rows.append((r.idx, r.val, r.lo))
            else:
                if r.hi < INF:
                    ub_rows.append((r.idx, r.val, r.hi))
                if r.lo > -INF:
                    ub_rows.append((r.idx, -r.val, -r.lo))

        def assemble(rows):
            if not rows:
                return None, None
            data = np.concatenate([v for _, v, _ in rows])
            cols = np.concatenate([i for i, _, _ in rows])
            ptr = np.cumsum([0] + [len(i) for i, _, _ in rows])
            return (csr_matrix((data, cols, ptr), shape=(len(rows), n)),
                    np.array([b for _, _, b in rows]))

        a_ub, b_ub = assemble(ub_rows)
        a_eq, b_eq = assemble(eq_rows)
        bounds = [(None if lo == -INF else lo, None if hi == INF else hi)
                  for lo, hi in zip(self._lb, self._ub)]
        opts = {"primal_feasibility_tolerance": FEAS_TOL, "dual_feasibility_tolerance": FEAS_TOL}
        if time_limit:
            opts["time_limit"] = float(time_limit)
        try:
            res = linprog(np.array(self._cost), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                          bounds=bounds, method="highs", options=opts)
        except Exception as exc:
            return SolveOutcome(NUMERIC_FAILURE, solve_time=time.perf_counter() - t0,
                                message=str(exc))
        elapsed = time.perf_counter() - t0
        status = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(
            res.status, NUMERIC_FAILURE)
        if status == OPTIMAL:
            return SolveOutcome(OPTIMAL, float(res.fun) + self.offset, np.asarray(res.x),
                                elapsed, int(getattr(res, "nit", 0)))
        return SolveOutcome(status, solve_time=elapsed, message=res.message)


BACKENDS = {"highs": HighsBackend, "scipy": ScipyBackend}


def make_backend(name: str | None = None, **kwargs) -> LPBackend:
    name = (name or os.environ.get("CUTPLANE_BACKEND") or "highs").lower()
    try:
        cls = BACKENDS[name]
    except KeyError:
        raise BackendError(f"unknown backend {name!r}; choose from {sorted(BACKENDS)}") from None
    return cls(**kwargs) if cls is HighsBackend else cls()

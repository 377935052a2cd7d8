"""Linearly constrained base relaxation of ACOPF.

Variables per bus: ``v2``; per generator: ``pg, qg``; per branch:
``c, s, i2, pkm, pmk, qkm, qmk``. The rotated cones on ``(c, s, v2)`` and
``(P, Q, v2, i2)`` and the thermal disks are *not* in the base model; they
are enforced later through cuts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backend import INF, LPBackend, SolveOutcome, make_backend
from .grid import BranchAdmittance, GeneratorCost, Network, branch_admittance

# Variable roles a cut may reference, resolved per branch.
ROLES = ("c", "s", "vk2", "vm2", "i2", "Pkm", "Qkm", "Pmk", "Qmk")


@dataclass(frozen=True)
class BuildOptions:
    objective: str = "qp"          # "qp" or "pwl"
    pwl_segments: int = 32
    loss_rows: bool = True
    c_lower_zero: bool = True
    backend: str | None = None
    threads: int = 1
    native_qp: bool = False        # hand c2 terms to the engine instead of tangents
    tangent_points: int = 8

    def __post_init__(self):
        if self.objective not in ("qp", "pwl"):
            raise ValueError(f"objective mode must be 'qp' or 'pwl', got {self.objective!r}")
        if self.pwl_segments < 1:
            raise ValueError("pwl_segments must be >= 1")


@dataclass
class SolutionPoint:
    v2: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    c: np.ndarray
    s: np.ndarray
    i2: np.ndarray
    pkm: np.ndarray
    pmk: np.ndarray
    qkm: np.ndarray
    qmk: np.ndarray
    z: float
    round: int = 0

    def role_values(self, net: Network, role: str) -> np.ndarray:
        """Per-branch values of a cut role."""
        if role == "vk2":
            return self.v2[[br.f for br in net.branches]]
        if role == "vm2":
            return self.v2[[br.t for br in net.branches]]
        return getattr(self, _ROLE_ATTR[role])

    def role_value(self, net: Network, role: str, branch: int) -> float:
        if role == "vk2":
            return float(self.v2[net.branches[branch].f])
        if role == "vm2":
            return float(self.v2[net.branches[branch].t])
        return float(getattr(self, _ROLE_ATTR[role])[branch])

    def losses(self) -> np.ndarray:
        return self.pkm + self.pmk


def _quad(coeffs: tuple[float, float, float], p: float) -> float:
    c2, c1, c0 = coeffs
    return c2 * p * p + c1 * p + c0


_ROLE_ATTR = {"c": "c", "s": "s", "i2": "i2", "Pkm": "pkm", "Qkm": "qkm",
              "Pmk": "pmk", "Qmk": "qmk"}


def pwl_objective(cost: GeneratorCost, segments: int, pmin_mw: float,
                  pmax_mw: float) -> GeneratorCost:
    """Secant interpolation of a quadratic cost on ``[pmin, pmax]`` (MW).

    The result over-estimates the quadratic everywhere on the interval.
    """
    if cost.kind != "quadratic":
        return cost
    if segments < 1:
        raise ValueError("segments must be >= 1")
    c2, c1, c0 = cost.coeffs
    if c2 == 0 or pmax_mw <= pmin_mw:
        segments = 1
    if pmax_mw <= pmin_mw:
        pmax_mw = pmin_mw + 1.0
    xs = np.linspace(pmin_mw, pmax_mw, segments + 1)
    pts = tuple((float(x), float(c2 * x * x + c1 * x + c0)) for x in xs)
    return GeneratorCost("pwl", points=pts, startup=cost.startup, shutdown=cost.shutdown)


class RelaxationModel:
    """Base model M0 on a backend plus the variable registry."""

    def __init__(self, net: Network, backend: LPBackend, opts: BuildOptions):
        self.net = net
        self.backend = backend
        self.opts = opts
        self.adm: list[BranchAdmittance] = [branch_admittance(br) for br in net.branches]
        self.base_rows: list[int] = []
        self.approximate = False
        self.last: SolveOutcome | None = None
        self.cuts = None  # CutManager attaches itself here
        nb, nl, ng = net.n_bus, net.n_branch, len(net.generators)
        self.v2 = np.zeros(nb, dtype=np.int64)
        self.pg = np.zeros(ng, dtype=np.int64)
        self.qg = np.zeros(ng, dtype=np.int64)
        self.c = np.zeros(nl, dtype=np.int64)
        self.s = np.zeros(nl, dtype=np.int64)
        self.i2 = np.zeros(nl, dtype=np.int64)
        self.pkm = np.zeros(nl, dtype=np.int64)
        self.pmk = np.zeros(nl, dtype=np.int64)
        self.qkm = np.zeros(nl, dtype=np.int64)
        self.qmk = np.zeros(nl, dtype=np.int64)
        self.cost_vars: list[int] = []
        self.loss_row: dict[int, int] = {}
        self._epigraphs: list[tuple[int, int]] = []
        self._epi_pieces: dict[int, list[tuple[float, float]]] = {}
        # generator index -> (epigraph var, (c2, c1, c0)) for lazily refined costs
        self._tangent: dict[int, tuple[int, tuple[float, float, float]]] = {}
        self.tangent_tol = 1e-7

    # ------------------------------------------------------------------
    def var(self, role: str, branch: int) -> int:
        br = self.net.branches[branch]
        if role == "vk2":
            return int(self.v2[br.f])
        if role == "vm2":
            return int(self.v2[br.t])
        return int(getattr(self, _ROLE_ATTR[role])[branch])

    @property
    def n_base_rows(self) -> int:
        return len(self.base_rows)

    def solve(self, warm: bool = True, time_limit: float | None = None) -> SolveOutcome:
        """Solve, refining tangent cost epigraphs until they are exact.

        Every intermediate value under-estimates the quadratic cost, so the
        returned objective is a valid bound even if refinement stops early.
        """
        out = self.backend.solve(warm=warm, time_limit=time_limit)
        total_time, total_iter = out.solve_time, out.iterations
        while out.optimal and self._tangent:
            x = out.primal
            tol = self.tangent_tol * max(1.0, abs(out.objective)) / len(self._tangent)
            added = 0
            for gi, (t, coeffs) in self._tangent.items():
                p = float(x[self.pg[gi]])
                if _quad(coeffs, p * self.net.baseMVA) - x[t] > tol:
                    self._add_tangent(gi, p)
                    added += 1
            if not added:
                break
            out = self.backend.solve(warm=True, time_limit=time_limit)
            total_time += out.solve_time
            total_iter += out.iterations
        out.solve_time, out.iterations = total_time, total_iter
        self.last = out
        return out

    def _add_tangent(self, gi: int, pg: float) -> int:
        t, (c2, c1, c0) = self._tangent[gi]
        base = self.net.baseMVA
        p0 = pg * base
        slope = 2 * c2 * p0 + c1
        # t >= f(p0) + f'(p0) (base * pg - p0)
        cid = self.backend.add_linear_constraint(
            [(t, 1.0), (int(self.pg[gi]), -slope * base)], ">=", c0 - c2 * p0 * p0)
        self.base_rows.append(cid)
        self._epi_pieces[gi].append((slope, c0 - c2 * p0 * p0))
        return cid

    def snapshot(self, round_index: int = 0) -> SolutionPoint:
        out = self.last
        if out is None or not out.optimal:
            raise RuntimeError("snapshot requires an optimal solve")
        x = out.primal
        return SolutionPoint(
            v2=x[self.v2].copy(), pg=x[self.pg].copy(), qg=x[self.qg].copy(),
            c=x[self.c].copy(), s=x[self.s].copy(), i2=x[self.i2].copy(),
            pkm=x[self.pkm].copy(), pmk=x[self.pmk].copy(),
            qkm=x[self.qkm].copy(), qmk=x[self.qmk].copy(),
            z=out.objective, round=round_index,
        )

    def point_vector(self, pt: SolutionPoint) -> np.ndarray:
        """Inverse of :meth:`snapshot`: a full primal vector for ``pt``.

        Cost epigraph variables are set to their tightest feasible value.
        """
        x = np.zeros(self.backend.n_vars)
        for name in ("v2", "pg", "qg", "c", "s", "i2", "pkm", "pmk", "qkm", "qmk"):
            x[getattr(self, name)] = getattr(pt, name)
        base = self.net.baseMVA
        for gi, t in self._epigraphs:
            p = x[self.pg[gi]] * base
            if gi in self._tangent:
                x[t] = _quad(self._tangent[gi][1], p)
            else:
                x[t] = max(a * p + b for a, b in self._epi_pieces[gi])
        return x

    def objective_at(self, pt: SolutionPoint) -> float:
        """True generation cost of ``pt``."""
        base = self.net.baseMVA
        return math.fsum(g.cost.evaluate(p * base) for g, p in zip(self.net.generators, pt.pg))

    def max_base_violation(self, x: np.ndarray) -> float:
        """Largest violation of base rows and variable bounds at ``x``."""
        be = self.backend
        worst = 0.0
        for cid in self.base_rows:
            act = be.row_activity(cid, x)
            _, lo, hi = be.row(cid)
            worst = max(worst, lo - act, act - hi)
        for j in range(be.n_vars):
            lo, hi = be.bounds(j)
            worst = max(worst, lo - x[j], x[j] - hi)
        return worst


def build_base_model(net: Network, opts: BuildOptions | None = None,
                     backend: LPBackend | None = None) -> RelaxationModel:
    opts = opts or BuildOptions()
    be = backend if backend is not None else make_backend(opts.backend, threads=opts.threads)
    model = RelaxationModel(net, be, opts)
    base = net.baseMVA
    buses, branches = net.buses, net.branches

    for k, bus in enumerate(buses):
        model.v2[k] = be.add_variable(bus.Vmin**2, bus.Vmax**2, name=f"v2_{bus.id}")

    offset = 0.0
    for g in net.generators:
        cost = g.cost
        lin = quad = 0.0
        pieces = None
        if cost.kind == "quadratic":
            c2, c1, c0 = cost.coeffs
            if opts.objective == "pwl" and c2 > 0:
                model.approximate = True
                pieces = pwl_objective(cost, opts.pwl_segments, g.Pmin * base,
                                       g.Pmax * base).segments()
            elif c2 > 0 and not opts.native_qp:
                pieces = []
            elif c2 > 0:
                quad, lin, offset = c2 * base * base, c1 * base, offset + c0
            else:
                lin, offset = c1 * base, offset + c0
        else:
            pieces = cost.segments()
        model.pg[g.index] = be.add_variable(g.Pmin, g.Pmax, lin, quad, name=f"pg_{g.index}")
        model.qg[g.index] = be.add_variable(g.Qmin, g.Qmax, name=f"qg_{g.index}")
        if pieces is not None:
            t = be.add_variable(-INF, INF, 1.0, name=f"cost_{g.index}")
            model.cost_vars.append(t)
            model._epigraphs.append((g.index, t))
            model._epi_pieces[g.index] = pieces
            if cost.kind == "quadratic" and not pieces:
                model._tangent[g.index] = (t, cost.coeffs)
                n = max(2, opts.tangent_points)
                for p in np.linspace(g.Pmin, g.Pmax, n) if g.Pmax > g.Pmin else [g.Pmin]:
                    model._add_tangent(g.index, float(p))
                continue
            for a, b in pieces:
                # t >= a * (base * pg) + b
                model.base_rows.append(
                    be.add_linear_constraint([(t, 1.0), (int(model.pg[g.index]), -a * base)], ">=", b))
    be.set_objective_offset(offset)

    for br in branches:
        l = br.index
        vmax_k, vmax_m = buses[br.f].Vmax, buses[br.t].Vmax
        prod = vmax_k * vmax_m
        c_lo = 0.0 if opts.c_lower_zero else -prod
        model.c[l] = be.add_variable(c_lo, prod, name=f"c_{l}")
        model.s[l] = be.add_variable(-prod, prod, name=f"s_{l}")
        vmin_k = buses[br.f].Vmin
        i2_ub = (br.U / vmin_k) ** 2 if br.has_limit and vmin_k > 0 else INF
        model.i2[l] = be.add_variable(0.0, i2_ub, name=f"i2_{l}")
        u = br.U if br.has_limit else INF
        for name in ("pkm", "pmk", "qkm", "qmk"):
            getattr(model, name)[l] = be.add_variable(-u, u, name=f"{name}_{l}")

    for br, adm in zip(branches, model.adm):
        l = br.index
        vk, vm = int(model.v2[br.f]), int(model.v2[br.t])
        c, s = int(model.c[l]), int(model.s[l])
        rows = [
            (int(model.pkm[l]), [(vk, -adm.Gkk), (c, -adm.Gkm), (s, -adm.Bkm)]),
            (int(model.pmk[l]), [(vm, -adm.Gmm), (c, -adm.Gmk), (s, adm.Bmk)]),
            (int(model.qkm[l]), [(vk, adm.Bkk), (c, adm.Bkm), (s, -adm.Gkm)]),
            (int(model.qmk[l]), [(vm, adm.Bmm), (c, adm.Bmk), (s, adm.Gmk)]),
            (int(model.i2[l]), [(vk, -adm.alpha), (vm, -adm.beta), (c, -adm.gamma), (s, -adm.zeta)]),
        ]
        for lhs, terms in rows:
            model.base_rows.append(be.add_linear_constraint([(lhs, 1.0)] + terms, "=", 0.0))
        if opts.loss_rows and adm.Gkk >= 0 and adm.Gmm >= 0:
            cid = be.add_linear_constraint(
                [(int(model.pkm[l]), 1.0), (int(model.pmk[l]), 1.0)], ">=", 0.0)
            model.base_rows.append(cid)
            model.loss_row[l] = cid

    for k, bus in enumerate(buses):
        p_terms, q_terms = [], []
        for l in net.incidence[k]:
            br = branches[l]
            if br.f == k:
                p_terms.append((int(model.pkm[l]), 1.0))
                q_terms.append((int(model.qkm[l]), 1.0))
            if br.t == k:
                p_terms.append((int(model.pmk[l]), 1.0))
                q_terms.append((int(model.qmk[l]), 1.0))
        for gi in net.gens_at[k]:
            p_terms.append((int(model.pg[gi]), -1.0))
            q_terms.append((int(model.qg[gi]), -1.0))
        if bus.Gs:
            p_terms.append((int(model.v2[k]), bus.Gs))
        if bus.Bs:
            q_terms.append((int(model.v2[k]), -bus.Bs))
        model.base_rows.append(be.add_linear_constraint(p_terms, "=", -bus.Pd))
        model.base_rows.append(be.add_linear_constraint(q_terms, "=", -bus.Qd))

    return model

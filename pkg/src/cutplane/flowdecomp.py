"""Active-power flow decomposition and loss accounting.

Each branch ``{k, m}`` is subdivided by a node ``n_km``. The arc between
``k`` and ``n_km`` points away from ``k`` when ``P_km >= 0`` and carries
``|P_km|``; likewise for ``m``. A subdivision node therefore absorbs the
branch loss ``P_km + P_mk`` when it is positive and supplies it when it is
negative. Generation enters each bus from a generator node and demand
(including the shunt conductance term ``Gs v^2``) leaves through a load
node, so that path sources are generators or negative-loss branches and
path sinks are loads or positive-loss branches.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .caseio import SplitMix64
from .cuts import CutManager
from .driver import AlgorithmParams, cutplane, solve_case
from .grid import Network
from .relaxation import SolutionPoint, build_base_model

BUS, SUBDIV, GEN, LOAD = "bus", "branch", "generator", "load"


class ConservationError(ValueError):
    pass


@dataclass
class DirectedFlowGraph:
    node_kind: list[str]
    node_ref: list[int]              # bus or branch index behind each node
    tail: np.ndarray
    head: np.ndarray
    flow: np.ndarray
    imbalance: np.ndarray            # outflow - inflow (net supply)
    conservation_error: float = 0.0
    worst_node: int = -1

    @property
    def n_nodes(self) -> int:
        return len(self.node_kind)

    @property
    def n_arcs(self) -> int:
        return len(self.flow)

    def label(self, node: int) -> str:
        return f"{self.node_kind[node]}:{self.node_ref[node]}"


@dataclass
class FlowPath:
    nodes: list[int]
    arcs: list[int]
    flow: float
    source: str
    sink: str


@dataclass
class PathDecomposition:
    paths: list[FlowPath] = field(default_factory=list)
    cycles: list[FlowPath] = field(default_factory=list)
    residual: float = 0.0

    def arc_totals(self, n_arcs: int) -> np.ndarray:
        out = np.zeros(n_arcs)
        for p in self.paths + self.cycles:
            out[p.arcs] += p.flow
        return out

    def flow_from(self, kind: str) -> float:
        return math.fsum(p.flow for p in self.paths if p.source == kind)


@dataclass
class LossReport:
    generation: float
    load: float
    positive_losses: float
    negative_losses: float           # magnitude
    branch_losses: list[float]
    n_negative: int
    q_generation: float = 0.0
    q_shunt: float = 0.0
    q_load: float = 0.0
    q_losses: float = 0.0

    @property
    def total_loss(self) -> float:
        return self.positive_losses - self.negative_losses

    @property
    def identity_residual(self) -> float:
        """``(gen + |neg losses|) - (load + pos losses)``."""
        return (self.generation + self.negative_losses) - (self.load + self.positive_losses)

    @property
    def reactive_residual(self) -> float:
        return (self.q_generation + self.q_shunt) - (self.q_load + self.q_losses)

    def to_text(self) -> str:
        return "\n".join([
            "[losses]",
            f"generation={self.generation!r}",
            f"load={self.load!r}",
            f"positive_losses={self.positive_losses!r}",
            f"negative_losses={self.negative_losses!r}",
            f"total_loss={self.total_loss!r}",
            f"negative_branches={self.n_negative}",
            f"identity_residual={self.identity_residual!r}",
            "",
            "[reactive]",
            f"generation={self.q_generation!r}",
            f"shunt={self.q_shunt!r}",
            f"load={self.q_load!r}",
            f"losses={self.q_losses!r}",
            f"residual={self.reactive_residual!r}",
        ]) + "\n"


def _bus_injections(net: Network, pt: SolutionPoint) -> tuple[np.ndarray, np.ndarray]:
    gen = np.zeros(net.n_bus)
    for g in net.generators:
        gen[g.bus] += pt.pg[g.index]
    load = np.array([b.Pd + b.Gs * pt.v2[b.index] for b in net.buses])
    return gen, load


def subdivide_and_orient(net: Network, pt: SolutionPoint, tol: float = 1e-6) -> DirectedFlowGraph:
    nb, nl = net.n_bus, net.n_branch
    kind = [BUS] * nb + [SUBDIV] * nl
    ref = list(range(nb)) + list(range(nl))
    tail, head, flow = [], [], []

    def arc(u: int, v: int, f: float) -> None:
        # orient by sign, skip exact zeros
        if f > 0:
            tail.append(u), head.append(v), flow.append(f)
        elif f < 0:
            tail.append(v), head.append(u), flow.append(-f)

    for br in net.branches:
        n = nb + br.index
        arc(br.f, n, float(pt.pkm[br.index]))
        arc(br.t, n, float(pt.pmk[br.index]))
    gen, load = _bus_injections(net, pt)
    for k in range(nb):
        if gen[k] != 0:
            kind.append(GEN), ref.append(k)
            arc(len(kind) - 1, k, float(gen[k]))
        if load[k] != 0:
            kind.append(LOAD), ref.append(k)
            arc(k, len(kind) - 1, float(load[k]))

    tail_a = np.array(tail, dtype=np.int64)
    head_a = np.array(head, dtype=np.int64)
    flow_a = np.array(flow, dtype=float)
    imb = np.zeros(len(kind))
    np.add.at(imb, tail_a, flow_a)
    np.subtract.at(imb, head_a, flow_a)
    bus_err = np.abs(imb[:nb])
    worst = int(np.argmax(bus_err)) if nb else -1
    g = DirectedFlowGraph(kind, ref, tail_a, head_a, flow_a, imb,
                          float(bus_err[worst]) if nb else 0.0, worst)
    if g.conservation_error > tol:
        raise ConservationError(
            f"flow conservation violated by {g.conservation_error:.3e} at bus "
            f"{net.buses[worst].id} (index {worst})")
    return g


def decompose(g: DirectedFlowGraph, tol: float | None = None) -> PathDecomposition:
    """Split arc flows into source-to-sink paths and then cycles."""
    if g.n_arcs == 0:
        return PathDecomposition()
    scale = float(g.flow.max())
    tol = 1e-13 * max(scale, 1.0) if tol is None else tol
    rem = g.flow.copy()
    excess = g.imbalance.copy()
    out_arcs: list[list[int]] = [[] for _ in range(g.n_nodes)]
    for a, u in enumerate(g.tail.tolist()):
        out_arcs[u].append(a)
    result = PathDecomposition()

    def best_arc(u: int) -> int:
        best, fb = -1, tol
        for a in out_arcs[u]:
            if rem[a] > fb:
                best, fb = a, rem[a]
        return best

    def take_cycle(nodes: list[int], arcs: list[int], start: int) -> None:
        cyc_arcs = arcs[start:]
        f = float(min(rem[a] for a in cyc_arcs))
        rem[cyc_arcs] -= f
        result.cycles.append(FlowPath(nodes[start:] + [nodes[start]], list(cyc_arcs), f, "", ""))

    while True:
        src = int(np.argmax(excess))
        if excess[src] <= tol:
            break
        nodes, arcs, pos = [src], [], {src: 0}
        u = src
        while True:
            if excess[u] < -tol and u != src:
                break
            a = best_arc(u)
            if a < 0:
                break  # stranded by round-off; close the path here
            v = int(g.head[a])
            if v in pos:
                arcs.append(a)
                i = pos[v]
                nodes.append(v)
                take_cycle(nodes[:-1], arcs, i)
                for w in nodes[i + 1:-1]:
                    pos.pop(w, None)
                nodes, arcs = nodes[:i + 1], arcs[:i]
                u = v
                continue
            arcs.append(a)
            nodes.append(v)
            pos[v] = len(nodes) - 1
            u = v
        if not arcs:
            excess[src] = 0.0
            continue
        sink = nodes[-1]
        f = min(float(excess[src]), float(min(rem[a] for a in arcs)))
        if excess[sink] < -tol:
            f = min(f, -float(excess[sink]))
        rem[arcs] -= f
        excess[src] -= f
        excess[sink] += f
        result.paths.append(FlowPath(nodes, arcs, f, _end_kind(g, src, True),
                                     _end_kind(g, sink, False)))

    # what remains is a circulation
    for a0 in range(g.n_arcs):
        while rem[a0] > tol:
            nodes, arcs, pos = [int(g.tail[a0])], [], {int(g.tail[a0]): 0}
            a = a0
            while True:
                v = int(g.head[a])
                arcs.append(a)
                if v in pos:
                    nodes.append(v)
                    take_cycle(nodes[:-1], arcs, pos[v])
                    break
                nodes.append(v)
                pos[v] = len(nodes) - 1
                a = best_arc(v)
                if a < 0:
                    # stranded by round-off: drop the weakest arc of the walk
                    rem[min(arcs, key=lambda b: rem[b])] = 0.0
                    break
    result.residual = float(rem.max()) if len(rem) else 0.0
    return result


def _end_kind(g: DirectedFlowGraph, node: int, source: bool) -> str:
    k = g.node_kind[node]
    if k == SUBDIV:
        return "negative-loss" if source else "loss"
    return k


def loss_report(net: Network, pt: SolutionPoint) -> LossReport:
    losses = pt.pkm + pt.pmk
    gen, load = _bus_injections(net, pt)
    pos = math.fsum(max(x, 0.0) for x in losses)
    neg = math.fsum(-min(x, 0.0) for x in losses)
    qshunt = math.fsum(b.Bs * pt.v2[b.index] for b in net.buses)
    return LossReport(
        generation=math.fsum(gen), load=math.fsum(load),
        positive_losses=pos, negative_losses=neg,
        branch_losses=[float(x) for x in losses],
        n_negative=int(np.sum(losses < 0)),
        q_generation=math.fsum(pt.qg), q_shunt=qshunt,
        q_load=math.fsum(b.Qd for b in net.buses),
        q_losses=math.fsum(pt.qkm + pt.qmk),
    )


def decomposition_text(net: Network, g: DirectedFlowGraph, dec: PathDecomposition,
                       limit: int = 20) -> str:
    out = ["[decomposition]",
           f"paths={len(dec.paths)}",
           f"cycles={len(dec.cycles)}",
           f"residual={dec.residual!r}",
           f"from_generators={dec.flow_from(GEN)!r}",
           f"from_negative_losses={dec.flow_from('negative-loss')!r}"]
    top = sorted(dec.paths, key=lambda p: -p.flow)[:limit]
    for i, p in enumerate(top):
        route = " > ".join(g.label(n) for n in p.nodes)
        out.append(f"path{i}={p.flow!r} {p.source}->{p.sink} {route}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# single-branch relaxation experiment

@dataclass
class TrialResult:
    trial: int
    branch: int
    status: str
    objective: float
    total_loss: float
    branch_loss: float
    restored: float = math.nan


@dataclass
class ExperimentTable:
    case: str
    baseline_objective: float
    baseline_loss: float
    trials: list[TrialResult]
    first_baseline: float = math.nan   # bound of the baseline run before pooling

    @property
    def avg_loss(self) -> float:
        return float(np.mean([t.total_loss for t in self.trials]))

    @property
    def avg_branch_loss(self) -> float:
        return float(np.mean([t.branch_loss for t in self.trials]))

    @property
    def avg_objective(self) -> float:
        return float(np.mean([t.objective for t in self.trials]))

    def to_csv(self, per_trial: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        buf.write("# single-branch relaxation (cutting-plane adaptation): per trial one random "
                  "branch loses its jabr and i2 cuts, its loss row and its i2 >= 0 bound\n")
        w.writerow(["Case", "SOC Loss", "Avg Loss", "Avg br. Loss", "SOC Obj", "relSOC Obj",
                    "Run Obj"])
        w.writerow([self.case, repr(self.baseline_loss), repr(self.avg_loss),
                    repr(self.avg_branch_loss), repr(self.baseline_objective),
                    repr(self.avg_objective), repr(self.first_baseline)])
        if per_trial:
            w.writerow([])
            w.writerow(["trial", "branch", "status", "objective", "total_loss", "branch_loss",
                        "restored"])
            for t in self.trials:
                w.writerow([t.trial, t.branch, t.status, repr(t.objective),
                            repr(t.total_loss), repr(t.branch_loss), repr(t.restored)])
        return buf.getvalue()


def pick_branch(seed: int, trial: int, n_branch: int) -> int:
    return SplitMix64(seed, trial).next_u64() % n_branch


def relax_branch(model, branch: int) -> None:
    """Remove every base-model consequence of the branch's cones.

    Drops the loss row ``P_km + P_mk >= 0`` and frees ``i2 >= 0``; both are
    outer envelopes of the branch's Jabr and current cones.
    """
    row = model.loss_row.pop(branch, None)
    if row is not None:
        model.backend.remove_constraint(row)
        model.base_rows.remove(row)
    vid = int(model.i2[branch])
    model.backend.set_bounds(vid, -math.inf, model.backend.bounds(vid)[1])


def restore_branch(model, branch: int) -> None:
    vid = int(model.i2[branch])
    model.backend.set_bounds(vid, 0.0, model.backend.bounds(vid)[1])
    adm = model.adm[branch]
    if model.opts.loss_rows and adm.Gkk >= 0 and adm.Gmm >= 0 and branch not in model.loss_row:
        cid = model.backend.add_linear_constraint(
            [(int(model.pkm[branch]), 1.0), (int(model.pmk[branch]), 1.0)], ">=", 0.0)
        model.base_rows.append(cid)
        model.loss_row[branch] = cid
    model.cuts.release(branch)


def single_branch_relaxation_experiment(net: Network, trials: int, seed: int,
                                        params: AlgorithmParams | None = None, opts=None,
                                        restore: bool = False) -> ExperimentTable:
    """Weaken one random branch per trial and record objective and losses.

    Each trial starts from the baseline run's live cuts minus the chosen
    branch's jabr and i2 cuts (see :func:`relax_branch` for the base rows
    that go with them) and continues the cutting-plane loop with that
    branch's cone separation switched off. Its limit cuts are kept. With
    ``restore`` the branch is re-enabled afterwards and the loop resumed,
    which should bring the objective back to the baseline.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    params = params or AlgorithmParams()
    base_rep, base_model = solve_case(net, params, opts)
    if base_rep.point is None:
        raise RuntimeError(f"baseline run failed: {base_rep.status}")
    base_cuts = [mc.cut for mc in base_model.cuts.live_cuts()]
    results = []
    found: list = []
    for t in range(trials):
        l = pick_branch(seed, t, net.n_branch)
        model = build_base_model(net, opts)
        mgr = CutManager(model, params.eps_par)
        mgr.suppressed.update({("jabr", l), ("i2", l)})
        mgr.reinstate(c for c in base_cuts if not (c.branch == l and c.kind != "limit"))
        relax_branch(model, l)
        rep = cutplane(model, params, suppress=[l])
        pt = rep.point
        found += [mc.cut for mc in mgr.live_cuts()]
        res = TrialResult(
            t, l, rep.status, rep.bound,
            float(pt.losses().sum()) if pt is not None else math.nan,
            float(pt.pkm[l] + pt.pmk[l]) if pt is not None else math.nan)
        if restore and pt is not None:
            restore_branch(model, l)
            res.restored = cutplane(model, params).bound
        results.append(res)

    # Trial cuts are valid for the full relaxation too, so the baseline is
    # re-solved with all of them. Its model then contains every trial model,
    # which makes the comparison a true relaxation ordering.
    model = base_model
    for cut in found:
        model.cuts.add(cut, base_rep.n_rounds + 1, check_parallel=False)
    out = model.solve()
    if not out.optimal:
        raise RuntimeError(f"pooled baseline solve failed: {out.status}")
    pt = model.snapshot(base_rep.n_rounds + 1)
    return ExperimentTable(net.name, pt.z, float(pt.losses().sum()), results,
                           first_baseline=base_rep.bound)

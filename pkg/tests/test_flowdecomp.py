import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cutplane.cuts import CutManager
from cutplane.driver import AlgorithmParams
from cutplane.flowdecomp import (BUS, GEN, SUBDIV, ConservationError, DirectedFlowGraph,
                                 decompose, decomposition_text, loss_report, pick_branch,
                                 relax_branch, restore_branch, single_branch_relaxation_experiment,
                                 subdivide_and_orient)
from cutplane.grid import Branch, Bus, Generator, GeneratorCost, Network
from cutplane.relaxation import BuildOptions, SolutionPoint, build_base_model


def _graph(n, arcs):
    tail = np.array([a for a, _, _ in arcs], dtype=np.int64)
    head = np.array([b for _, b, _ in arcs], dtype=np.int64)
    flow = np.array([f for _, _, f in arcs], dtype=float)
    imb = np.zeros(n)
    np.add.at(imb, tail, flow)
    np.subtract.at(imb, head, flow)
    return DirectedFlowGraph([BUS] * n, list(range(n)), tail, head, flow, imb)


def _check_complete(g, dec, tol=1e-8):
    assert np.allclose(dec.arc_totals(g.n_arcs), g.flow, atol=tol * max(1.0, g.flow.max()))
    assert len(dec.paths) + len(dec.cycles) <= g.n_arcs + g.n_nodes
    for p in dec.paths + dec.cycles:
        assert p.flow > 0
        for a, (u, v) in zip(p.arcs, zip(p.nodes, p.nodes[1:])):
            assert (g.tail[a], g.head[a]) == (u, v)
    for p in dec.paths:
        assert g.imbalance[p.nodes[0]] > 0 and g.imbalance[p.nodes[-1]] < 0
    for c in dec.cycles:
        assert c.nodes[0] == c.nodes[-1]


def test_single_path():
    g = _graph(3, [(0, 1, 1.0), (1, 2, 1.0)])
    dec = decompose(g)
    assert len(dec.paths) == 1 and not dec.cycles
    assert dec.paths[0].nodes == [0, 1, 2] and dec.paths[0].flow == 1.0


def test_circulation_triangle():
    g = _graph(3, [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)])
    dec = decompose(g)
    assert not dec.paths and len(dec.cycles) == 1 and dec.cycles[0].flow == 1.0
    assert dec.residual == 0


def test_path_with_cycle_on_the_way():
    g = _graph(4, [(0, 1, 2.0), (1, 2, 3.0), (2, 1, 1.0), (2, 3, 2.0)])
    dec = decompose(g)
    _check_complete(g, dec)
    assert sum(p.flow for p in dec.paths) == pytest.approx(2.0)
    assert sum(c.flow for c in dec.cycles) == pytest.approx(1.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_graphs_decompose_completely(seed):
    """Flows built as sums of random paths and cycles are reconstructed."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    acc: dict[tuple[int, int], float] = {}
    for _ in range(int(rng.integers(1, 15))):
        k = int(rng.integers(2, n + 1))
        walk = [int(v) for v in rng.permutation(n)[:k]]
        if rng.random() < 0.3:
            walk.append(walk[0])
        f = float(rng.uniform(0.01, 5))
        for u, v in zip(walk, walk[1:]):
            acc[(u, v)] = acc.get((u, v), 0.0) + f
    arcs = [(u, v, f) for (u, v), f in acc.items()]
    g = _graph(n, arcs)
    _check_complete(g, decompose(g))


def _net(n_branch=1):
    cost = GeneratorCost("quadratic", coeffs=(0, 1, 0))
    buses = tuple(Bus(i, i + 1, 0.0, 0.0) for i in range(n_branch + 1))
    brs = tuple(Branch(l, l, l + 1, 0.01, 0.1) for l in range(n_branch))
    return Network(100.0, buses, brs, (Generator(0, 0, 0, 1, -1, 1, cost),))


def _pt(net, pkm, pmk, pg=0.0, pd_ok=True):
    L = net.n_branch
    z = np.zeros(L)
    return SolutionPoint(v2=np.ones(net.n_bus), pg=np.array([pg]), qg=np.zeros(1), c=np.ones(L),
                         s=z, i2=z, pkm=np.array(pkm, float), pmk=np.array(pmk, float), qkm=z,
                         qmk=z, z=0.0)


def test_orientation_rules():
    net = _net()
    net = Network(100.0, (net.buses[0], Bus(1, 2, 0.48, 0.0)), net.branches, net.generators)
    g = subdivide_and_orient(net, _pt(net, [0.5], [-0.48], pg=0.5))
    arcs = {(g.label(u), g.label(v)): f for u, v, f in zip(g.tail, g.head, g.flow)}
    assert arcs[("bus:0", "branch:0")] == 0.5
    assert arcs[("branch:0", "bus:1")] == 0.48
    assert g.imbalance[2] == pytest.approx(-0.02)
    assert ("generator:0", "bus:0") in arcs and ("bus:1", "load:1") in arcs


def test_zero_flows_skipped():
    net = _net()
    g = subdivide_and_orient(net, _pt(net, [0.0], [0.0]))
    assert g.n_arcs == 0 and not decompose(g).paths


def test_negative_loss_branch_supplies():
    net = _net()
    net = Network(100.0, tuple(Bus(i, i + 1, 0.1, 0.0) for i in range(2)), net.branches,
                  net.generators)
    g = subdivide_and_orient(net, _pt(net, [-0.1], [-0.1]))
    sub = g.node_kind.index(SUBDIV)
    assert g.imbalance[sub] == pytest.approx(0.2)
    dec = decompose(g)
    assert {p.source for p in dec.paths} == {"negative-loss"}
    rep = loss_report(net, _pt(net, [-0.1], [-0.1]))
    assert rep.negative_losses == pytest.approx(0.2) and rep.n_negative == 1
    assert rep.identity_residual == pytest.approx(0, abs=1e-12)


def test_conservation_error_names_bus():
    net = _net()
    with pytest.raises(ConservationError, match="bus 1"):
        subdivide_and_orient(net, _pt(net, [0.5], [-0.48], pg=0.0))


def test_lossless_point():
    net = _net()
    net = Network(100.0, (net.buses[0], Bus(1, 2, 0.3, 0.0)), net.branches, net.generators)
    rep = loss_report(net, _pt(net, [0.3], [-0.3], pg=0.3))
    assert rep.positive_losses == rep.negative_losses == 0
    assert rep.generation == pytest.approx(rep.load)


def test_case14_converged_decomposition(case14, case14_run):
    rep, _ = case14_run
    pt = rep.point
    g = subdivide_and_orient(case14, pt)
    dec = decompose(g)
    _check_complete(g, dec)
    # [DERIVED] generator-sourced flow equals total generation
    assert dec.flow_from(GEN) == pytest.approx(float(pt.pg.sum()), abs=1e-6)
    lr = loss_report(case14, pt)
    assert abs(lr.identity_residual) <= 1e-6
    assert abs(lr.reactive_residual) <= 1e-6
    # [PAPER] SOC loss
    assert lr.total_loss == pytest.approx(0.0918, abs=0.002)
    text = decomposition_text(case14, g, dec, 5)
    assert text.startswith("[decomposition]") and text.count("path") >= 5
    assert "identity_residual=" in lr.to_text()


def test_m0_without_loss_rows_is_balanced(case14):
    # observational: negative losses are allowed here, the ledger still balances
    m = build_base_model(case14, BuildOptions(loss_rows=False))
    m.solve(False)
    lr = loss_report(case14, m.snapshot())
    assert abs(lr.identity_residual) <= 1e-6
    assert lr.negative_losses >= 0


def test_pick_branch_deterministic():
    a = [pick_branch(1, t, 20) for t in range(50)]
    assert a == [pick_branch(1, t, 20) for t in range(50)]
    assert len(set(a)) > 5 and all(0 <= b < 20 for b in a)


def test_relax_and_restore_model_state(case14, case14_run):
    """Relaxing then restoring a branch returns the same model and bound."""
    _, base = case14_run
    model = build_base_model(case14)
    mgr = CutManager(model)
    mgr.reinstate(c for c in base.cuts.all_cuts())
    z0 = model.solve(False).objective
    l = 3
    relax_branch(model, l)
    mgr.suppress(l)
    z_relaxed = model.solve().objective
    assert z_relaxed <= z0 * (1 + 1e-6)
    assert model.backend.bounds(int(model.i2[l]))[0] == -math.inf
    restore_branch(model, l)
    mgr.reinstate(c for c in base.cuts.all_cuts() if c.branch == l and c.kind != "limit")
    assert model.solve().objective == pytest.approx(z0, rel=1e-5)
    assert l in model.loss_row and not mgr.suppressed


def test_experiment_small(case14):
    params = AlgorithmParams(ftol_rounds=3)
    table = single_branch_relaxation_experiment(case14, 3, 1, params)
    assert len(table.trials) == 3
    for t in table.trials:
        assert t.branch == pick_branch(1, t.trial, 20)
        assert t.objective <= table.baseline_objective * (1 + 1e-6)
    csv = table.to_csv().splitlines()
    assert csv[0].startswith("#")
    assert csv[1] == "Case,SOC Loss,Avg Loss,Avg br. Loss,SOC Obj,relSOC Obj,Run Obj"
    assert csv[2].startswith("case14,")
    with pytest.raises(ValueError):
        single_branch_relaxation_experiment(case14, 0, 1)


def test_experiment_trial_with_unlimited_branch(case14):
    # a branch without a thermal limit; the relaxed run may not beat the full one
    l = next(br.index for br in case14.branches if not br.has_limit)
    seed = next(s for s in range(10_000) if pick_branch(s, 0, 20) == l)
    table = single_branch_relaxation_experiment(case14, 1, seed, AlgorithmParams(ftol_rounds=3))
    assert table.trials[0].branch == l
    assert table.trials[0].objective <= table.baseline_objective * (1 + 1e-6)


def test_restore_flag_records_bound(case14):
    table = single_branch_relaxation_experiment(case14, 1, 2, AlgorithmParams(ftol_rounds=3),
                                                restore=True)
    t = table.trials[0]
    assert math.isfinite(t.restored) and t.restored >= t.objective - 1e-6 * abs(t.objective)

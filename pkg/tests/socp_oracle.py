"""Independent conic reference: the same relaxation with the cones imposed
exactly, solved by an interior-point SOCP solver through cvxpy."""

from __future__ import annotations

import cmath
import math

import numpy as np


def _branch_y(br):
    # textbook pi-model with the complex tap on the from side
    ys = 1 / complex(br.r, br.x)
    tap = br.tau * cmath.exp(1j * br.sigma)
    ytt = ys + complex(br.g_sh, br.b) / 2
    return ytt / (tap * tap.conjugate()), -ys / tap.conjugate(), -ys / tap, ytt


def solve_socp(net, loss_rows=True, cones=("jabr", "i2", "limit")):
    import cvxpy as cp

    nb, nl, ng = net.n_bus, net.n_branch, len(net.generators)
    base = net.baseMVA
    w = cp.Variable(nb)
    pg, qg = cp.Variable(ng), cp.Variable(ng)
    c, s = cp.Variable(nl), cp.Variable(nl)
    cons = []
    cons += [w >= np.array([b.Vmin ** 2 for b in net.buses]),
             w <= np.array([b.Vmax ** 2 for b in net.buses])]
    cons += [pg >= [g.Pmin for g in net.generators], pg <= [g.Pmax for g in net.generators],
             qg >= [g.Qmin for g in net.generators], qg <= [g.Qmax for g in net.generators]]
    f = [br.f for br in net.branches]
    t = [br.t for br in net.branches]
    pkm, qkm, pmk, qmk = [], [], [], []
    for l, br in enumerate(net.branches):
        yff, yft, ytf, ytt = _branch_y(br)
        # S_km = conj(I_km) V_k with V_k conj(V_m) = c + j s
        skm_re = yff.real * w[br.f] + yft.real * c[l] + yft.imag * s[l]
        skm_im = -yff.imag * w[br.f] - yft.imag * c[l] + yft.real * s[l]
        smk_re = ytt.real * w[br.t] + ytf.real * c[l] - ytf.imag * s[l]
        smk_im = -ytt.imag * w[br.t] - ytf.imag * c[l] - ytf.real * s[l]
        pkm.append(skm_re), qkm.append(skm_im), pmk.append(smk_re), qmk.append(smk_im)
        vmk, vmm = net.buses[br.f].Vmax, net.buses[br.t].Vmax
        cons += [c[l] >= 0, c[l] <= vmk * vmm, s[l] >= -vmk * vmm, s[l] <= vmk * vmm]
        if "jabr" in cones:
            cons.append(cp.SOC(w[br.f] + w[br.t], cp.hstack([2 * c[l], 2 * s[l], w[br.f] - w[br.t]])))
        if "i2" in cones:
            # |I_km|^2 = |yff V_k + yft V_m|^2 expanded in w, c, s
            i2 = (abs(yff) ** 2 * w[br.f] + abs(yft) ** 2 * w[br.t]
                  + 2 * ((yff * yft.conjugate()).real * c[l] - (yff * yft.conjugate()).imag * s[l]))
            cons.append(cp.SOC(w[br.f] + i2, cp.hstack([2 * skm_re, 2 * skm_im, w[br.f] - i2])))
        if "limit" in cones and math.isfinite(br.U):
            cons.append(cp.SOC(br.U, cp.hstack([skm_re, skm_im])))
            cons.append(cp.SOC(br.U, cp.hstack([smk_re, smk_im])))
        if loss_rows and yff.real >= 0 and ytt.real >= 0:
            cons.append(skm_re + smk_re >= 0)
    for k, bus in enumerate(net.buses):
        pin = sum(pkm[l] for l in range(nl) if f[l] == k) + sum(pmk[l] for l in range(nl) if t[l] == k)
        qin = sum(qkm[l] for l in range(nl) if f[l] == k) + sum(qmk[l] for l in range(nl) if t[l] == k)
        gens = list(net.gens_at[k])
        cons.append(pin == (cp.sum(pg[gens]) if gens else 0) - bus.Pd - bus.Gs * w[k])
        cons.append(qin == (cp.sum(qg[gens]) if gens else 0) - bus.Qd + bus.Bs * w[k])
    obj = 0
    for g in net.generators:
        cost = g.cost
        if cost.kind == "quadratic":
            c2, c1, c0 = cost.coeffs
            obj += c2 * base ** 2 * cp.square(pg[g.index]) + c1 * base * pg[g.index] + c0
        else:
            tvar = cp.Variable()
            for a, b0 in cost.segments():
                cons.append(tvar >= a * base * pg[g.index] + b0)
            obj += tvar
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, {"pkm": np.array([float(e.value) for e in pkm]),
                        "pmk": np.array([float(e.value) for e in pmk])}

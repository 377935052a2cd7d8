"""Per-unit network data model, branch admittances and loss arithmetic."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Sequence

INF = math.inf


@dataclass(frozen=True)
class GeneratorCost:
    """Convex generator cost applied to power in MW.

    ``kind`` is ``"quadratic"`` with ``coeffs = (c2, c1, c0)`` or
    ``"pwl"`` with ``points = ((p1, f1), (p2, f2), ...)`` in MW / $.
    """

    kind: str
    coeffs: tuple[float, float, float] = (0.0, 0.0, 0.0)
    points: tuple[tuple[float, float], ...] = ()
    startup: float = 0.0
    shutdown: float = 0.0

    def __post_init__(self):
        if self.kind == "quadratic":
            if self.coeffs[0] < 0:
                raise ValueError(f"non-convex quadratic cost c2={self.coeffs[0]}")
        elif self.kind == "pwl":
            pts = self.points
            if len(pts) < 2:
                raise ValueError("piecewise-linear cost needs at least 2 points")
            slopes = []
            for (p0, f0), (p1, f1) in zip(pts, pts[1:]):
                if not p1 > p0:
                    raise ValueError("pwl breakpoints must be strictly increasing")
                slopes.append((f1 - f0) / (p1 - p0))
            for a, b in zip(slopes, slopes[1:]):
                if b < a - 1e-9 * max(1.0, abs(a)):
                    raise ValueError("pwl cost is not convex")
        else:
            raise ValueError(f"unknown cost kind {self.kind!r}")

    def segments(self) -> list[tuple[float, float]]:
        """Affine pieces ``(slope, intercept)`` in MW units for a pwl cost."""
        out = []
        for (p0, f0), (p1, f1) in zip(self.points, self.points[1:]):
            slope = (f1 - f0) / (p1 - p0)
            out.append((slope, f0 - slope * p0))
        return out

    def evaluate(self, p_mw: float) -> float:
        if self.kind == "quadratic":
            c2, c1, c0 = self.coeffs
            return c2 * p_mw * p_mw + c1 * p_mw + c0
        return max(a * p_mw + b for a, b in self.segments())


@dataclass(frozen=True)
class Bus:
    index: int
    id: int
    Pd: float
    Qd: float
    Gs: float = 0.0
    Bs: float = 0.0
    Vmin: float = 0.9
    Vmax: float = 1.1
    bus_type: int = 1
    base_kv: float = 0.0
    Vm: float = 1.0
    Va: float = 0.0


@dataclass(frozen=True)
class Branch:
    index: int
    f: int
    t: int
    r: float
    x: float
    b: float = 0.0
    tau: float = 1.0
    sigma: float = 0.0
    U: float = INF
    angmin: float = -2 * math.pi
    angmax: float = 2 * math.pi
    g_sh: float = 0.0

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)

    @property
    def shunt_admittance(self) -> complex:
        return complex(self.g_sh, self.b)

    @property
    def has_limit(self) -> bool:
        return math.isfinite(self.U)


@dataclass(frozen=True)
class Generator:
    index: int
    bus: int
    Pmin: float
    Pmax: float
    Qmin: float
    Qmax: float
    cost: GeneratorCost
    Pg: float = 0.0
    Qg: float = 0.0
    Vg: float = 1.0


@dataclass(frozen=True)
class Network:
    """Immutable per-unit grid. Bus, branch and generator indices are dense."""

    baseMVA: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    name: str = "case"
    incidence: tuple[tuple[int, ...], ...] = field(default=(), compare=False)
    gens_at: tuple[tuple[int, ...], ...] = field(default=(), compare=False)

    def __post_init__(self):
        nb = len(self.buses)
        inc: list[list[int]] = [[] for _ in range(nb)]
        gat: list[list[int]] = [[] for _ in range(nb)]
        for i, bus in enumerate(self.buses):
            if bus.index != i:
                raise ValueError(f"bus {bus.id} has index {bus.index}, expected {i}")
        for br in self.branches:
            if not (0 <= br.f < nb and 0 <= br.t < nb):
                raise ValueError(f"branch {br.index} references an unknown bus")
            inc[br.f].append(br.index)
            inc[br.t].append(br.index)
        for g in self.generators:
            if not 0 <= g.bus < nb:
                raise ValueError(f"generator {g.index} references an unknown bus")
            gat[g.bus].append(g.index)
        object.__setattr__(self, "incidence", tuple(tuple(x) for x in inc))
        object.__setattr__(self, "gens_at", tuple(tuple(x) for x in gat))

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    def total_load(self) -> float:
        return sum(b.Pd for b in self.buses)


@dataclass(frozen=True)
class BranchAdmittance:
    Gkk: float
    Bkk: float
    Gkm: float
    Bkm: float
    Gmk: float
    Bmk: float
    Gmm: float
    Bmm: float
    alpha: float
    beta: float
    gamma: float
    zeta: float

    @property
    def matrix(self) -> tuple[tuple[complex, complex], tuple[complex, complex]]:
        return (
            (complex(self.Gkk, self.Bkk), complex(self.Gkm, self.Bkm)),
            (complex(self.Gmk, self.Bmk), complex(self.Gmm, self.Bmm)),
        )


def branch_admittance(br: Branch) -> BranchAdmittance:
    """Pi-model admittance matrix with the tap on the from side, plus the
    coefficients expressing ``|I_km|^2`` linearly in ``(v_k^2, v_m^2, c, s)``."""
    y = br.series_admittance
    ysh = br.shunt_admittance
    tau, sigma = br.tau, br.sigma
    ytt = y + ysh / 2
    yff = ytt / tau**2
    yft = -y / (tau * cmath.exp(-1j * sigma))
    ytf = -y / (tau * cmath.exp(1j * sigma))

    g, b = y.real, y.imag
    gsh, bsh = ysh.real, ysh.imag
    mag2 = g * g + b * b
    cross_re = g * gsh + b * bsh
    cross_im = b * gsh - g * bsh
    cs, sn = math.cos(sigma), math.sin(sigma)
    alpha = (mag2 + cross_re + (gsh * gsh + bsh * bsh) / 4) / tau**4
    beta = mag2 / tau**2
    gamma = (cs * (-2 * mag2 - cross_re) + sn * cross_im) / tau**3
    zeta = (sn * (-2 * mag2 - cross_re) - cs * cross_im) / tau**3
    return BranchAdmittance(
        yff.real, yff.imag, yft.real, yft.imag,
        ytf.real, ytf.imag, ytt.real, ytt.imag,
        alpha, beta, gamma, zeta,
    )


def i2_value(adm: BranchAdmittance, vk2: float, vm2: float, c: float, s: float) -> float:
    return adm.alpha * vk2 + adm.beta * vm2 + adm.gamma * c + adm.zeta * s


def branch_flows(adm: BranchAdmittance, vk2: float, vm2: float, c: float, s: float):
    """Linearized ``(P_km, P_mk, Q_km, Q_mk)`` in terms of ``v^2, c, s``.

    Derived from ``S = V I*`` with ``V_k V_m* = c + js``.
    """
    pkm = adm.Gkk * vk2 + adm.Gkm * c + adm.Bkm * s
    pmk = adm.Gmm * vm2 + adm.Gmk * c - adm.Bmk * s
    qkm = -adm.Bkk * vk2 - adm.Bkm * c + adm.Gkm * s
    qmk = -adm.Bmm * vm2 - adm.Bmk * c - adm.Gmk * s
    return pkm, pmk, qkm, qmk


def branch_loss(pkm: float, pmk: float) -> float:
    return pkm + pmk


def total_loss(pkm: Sequence[float], pmk: Sequence[float]) -> float:
    return math.fsum(branch_loss(a, b) for a, b in zip(pkm, pmk))

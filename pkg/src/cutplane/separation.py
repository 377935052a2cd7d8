"""Maximum-distance separating hyperplanes for the branch cones and disks.

A rotated cone ``x^2 + y^2 <= w z`` (``w, z >= 0``) is the second-order cone
``||(2x, 2y, w - z)|| <= w + z``. Projecting a violating point onto that cone
and taking the tangent hyperplane at the projection gives the cut

    4x'x + 4y'y + ((w'-z') - n0) w + (-(w'-z') - n0) z <= 0,
    n0 = ||(2x', 2y', w'-z')||,

which every cone point satisfies and the generating point violates by
``n0 (n0 - (w' + z'))``. Jabr cones use ``(x, y, w, z) = (c, s, vk2, vm2)``;
current cones use ``(Pkm, Qkm, vk2, i2)``. Thermal disks ``P^2 + Q^2 <= U^2``
are cut by ``P'P + Q'Q <= U ||(P', Q')||``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .grid import Network

JABR, I2, LIMIT = "jabr", "i2", "limit"
FAMILIES = (JABR, I2, LIMIT)

# role tuples (x, y, w, z) for the two cone families; limit roles per end
CONE_ROLES = {JABR: ("c", "s", "vk2", "vm2"), I2: ("Pkm", "Qkm", "vk2", "i2")}
LIMIT_ROLES = {"km": ("Pkm", "Qkm"), "mk": ("Pmk", "Qmk")}


class SeparationError(ValueError):
    pass


@dataclass(frozen=True)
class LinearCut:
    """``sum(coef * role) <= rhs`` on a single branch."""

    kind: str
    branch: int
    terms: tuple[tuple[str, float], ...]
    rhs: float
    violation: float = 0.0   # lhs - rhs at the generating point
    sense = "<="

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown cut family {self.kind!r}")
        if not any(c != 0 for _, c in self.terms):
            raise ValueError("cut has a zero coefficient vector")

    @property
    def norm(self) -> float:
        return math.hypot(*(c for _, c in self.terms))

    def normalized(self) -> "LinearCut":
        n = self.norm
        if n == 1.0:
            return self
        return LinearCut(self.kind, self.branch, tuple((r, c / n) for r, c in self.terms),
                         self.rhs / n, self.violation / n)

    def coeff(self, role: str) -> float:
        return sum(c for r, c in self.terms if r == role)

    def lhs(self, values: dict[str, float]) -> float:
        return math.fsum(c * values[r] for r, c in self.terms)

    def lhs_at(self, pt, net: Network) -> float:
        return math.fsum(c * pt.role_value(net, r, self.branch) for r, c in self.terms)


class Violation(NamedTuple):
    branch: int
    violation: float
    end: str = "km"


# --------------------------------------------------------------------------
# closed forms

def project_to_soc(xprime: Sequence[float], sprime: float) -> tuple[np.ndarray, float]:
    """Euclidean projection of ``(x', s')`` onto ``{(x, s): ||x|| <= s}``."""
    x = np.asarray(xprime, dtype=float)
    nx = float(np.linalg.norm(x))
    if not sprime > 0:
        raise SeparationError(f"projection needs s' > 0, got {sprime}")
    if nx <= sprime:
        raise SeparationError("point is inside the cone; nothing to project")
    s0 = (nx + sprime) / 2
    return s0 * x / nx, s0


def rotated_cone_cut(x: float, y: float, w: float, z: float) -> tuple[float, float, float, float]:
    """Coefficients on ``(x, y, w, z)`` of the outer-envelope cut, rhs 0.

    Boundary points are accepted and give the supporting hyperplane there.
    """
    if x * x + y * y - w * z < 0:
        raise SeparationError("point satisfies the rotated cone")
    if not w + z > 0:
        raise SeparationError("rotated cone cut needs w' + z' > 0")
    d = w - z
    n0 = math.sqrt(4 * x * x + 4 * y * y + d * d)
    assert n0 > 0
    return 4 * x, 4 * y, d - n0, -d - n0


def _cone_cut(kind: str, branch: int, x: float, y: float, w: float, z: float) -> LinearCut:
    coefs = rotated_cone_cut(x, y, w, z)
    lhs = coefs[0] * x + coefs[1] * y + coefs[2] * w + coefs[3] * z
    return LinearCut(kind, branch, tuple(zip(CONE_ROLES[kind], coefs)), 0.0, lhs)


def jabr_cut(c: float, s: float, vk: float, vm: float, branch: int = 0) -> LinearCut:
    return _cone_cut(JABR, branch, c, s, vk, vm)


def i2_cut(p: float, q: float, vk: float, i2: float, branch: int = 0) -> LinearCut:
    return _cone_cut(I2, branch, p, q, vk, i2)


def limit_cut(p: float, q: float, U: float, branch: int = 0, end: str = "km") -> LinearCut:
    if not math.isfinite(U):
        raise SeparationError("branch has no thermal limit")
    n = math.hypot(p, q)
    if not n > U:
        raise SeparationError("point lies inside the thermal disk")
    roles = LIMIT_ROLES[end]
    return LinearCut(LIMIT, branch, ((roles[0], p), (roles[1], q)), U * n, n * n - U * n)


# --------------------------------------------------------------------------
# violation search

def _sorted(branches: np.ndarray, amounts: np.ndarray, ends=None) -> list[Violation]:
    order = np.lexsort((branches, -amounts))
    if ends is None:
        return [Violation(int(branches[i]), float(amounts[i])) for i in order]
    return [Violation(int(branches[i]), float(amounts[i]), ends[i]) for i in order]


def jabr_violations(pt, net: Network, eps: float) -> list[Violation]:
    vk, vm = pt.role_values(net, "vk2"), pt.role_values(net, "vm2")
    res = pt.c ** 2 + pt.s ** 2 - vk * vm
    idx = np.nonzero(res > eps)[0]
    return _sorted(idx, res[idx])


def i2_violations(pt, net: Network, eps: float) -> list[Violation]:
    vk = pt.role_values(net, "vk2")
    res = pt.pkm ** 2 + pt.qkm ** 2 - vk * pt.i2
    idx = np.nonzero(res > eps)[0]
    return _sorted(idx, res[idx])


def limit_violations(pt, net: Network, eps: float) -> list[Violation]:
    u = np.array([br.U for br in net.branches])
    lim = np.isfinite(u)
    u2 = np.where(lim, u, 0.0) ** 2
    res_km = np.where(lim, pt.pkm ** 2 + pt.qkm ** 2 - u2, -np.inf)
    res_mk = np.where(lim, pt.pmk ** 2 + pt.qmk ** 2 - u2, -np.inf)
    res = np.maximum(res_km, res_mk)
    idx = np.nonzero(res > eps)[0]
    ends = ["km" if res_km[i] >= res_mk[i] else "mk" for i in idx]
    return _sorted(idx, res[idx], ends)


def find_violations(pt, net: Network, eps_jabr: float = 1e-5, eps_i2: float = 1e-5,
                    eps_lim: float = 1e-5, threads: int = 1):
    """Violated branches per family, largest residual first (ties by branch)."""
    jobs = ((jabr_violations, eps_jabr), (i2_violations, eps_i2), (limit_violations, eps_lim))
    if threads > 1:
        with ThreadPoolExecutor(min(threads, 3)) as pool:
            futs = [pool.submit(fn, pt, net, eps) for fn, eps in jobs]
            return tuple(f.result() for f in futs)
    return tuple(fn(pt, net, eps) for fn, eps in jobs)


def separate(kind: str, v: Violation, pt, net: Network) -> LinearCut:
    """Cut separating ``pt`` on the branch and end recorded in ``v``."""
    l = v.branch
    if kind == LIMIT:
        if v.end == "km":
            p, q = pt.pkm[l], pt.qkm[l]
        else:
            p, q = pt.pmk[l], pt.qmk[l]
        return limit_cut(float(p), float(q), net.branches[l].U, l, v.end)
    vals = [pt.role_value(net, r, l) for r in CONE_ROLES[kind]]
    return _cone_cut(kind, l, *vals)

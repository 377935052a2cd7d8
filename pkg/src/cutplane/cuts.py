"""Live cut registry: selection, parallel rejection, aging, and archives.

Archive format (one record per line)::

    cutarchive v1 <nbus> <nbranch> <data-hash>
    <family> <branch> <role:coeff>... rhs=<value> round=<n>

Floats are written with 17 significant digits so a load reproduces every
coefficient exactly.
"""

from __future__ import annotations

import hashlib
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .grid import Network
from .relaxation import ROLES, RelaxationModel, SolutionPoint
from .separation import FAMILIES, I2, JABR, LinearCut, Violation, separate

ARCHIVE_VERSION = "v1"


class ArchiveError(ValueError):
    """Unreadable archive or one that does not fit the network."""


class ArchiveWarning(UserWarning):
    """Archive was written for different network data with the same topology."""


@dataclass
class ManagedCut:
    cut: LinearCut
    cid: int | None
    round_added: int
    age: int = 0
    last_slack: float = math.nan

    @property
    def live(self) -> bool:
        return self.cid is not None


class Selection(NamedTuple):
    computed: int
    added: int


def cosine(c: LinearCut, d: LinearCut) -> float:
    """Cosine between cut normals over the union of their variables."""
    if c.branch != d.branch:
        return 0.0
    a, b = dict(c.terms), dict(d.terms)
    dot = math.fsum(v * b.get(r, 0.0) for r, v in a.items())
    return dot / (c.norm * d.norm)


def is_parallel(c: LinearCut, d: LinearCut, eps_par: float) -> bool:
    return cosine(c, d) > 1.0 - eps_par


def top_count(p: float, n: int) -> int:
    """``ceil(p% of n)`` guarded against float noise such as 15% of 20."""
    return min(n, math.ceil(round(p * n / 100.0, 9)))


class CutManager:
    """Owns every cut added to a :class:`RelaxationModel`."""

    def __init__(self, model: RelaxationModel, eps_par: float = 1e-2):
        if not 0 < eps_par < 1:
            raise ValueError("eps_par must lie in (0, 1)")
        self.model = model
        self.eps_par = eps_par
        self.live: dict[tuple[str, int], list[ManagedCut]] = {}
        self.dormant: list[ManagedCut] = []
        self.suppressed: set[tuple[str, int]] = set()
        model.cuts = self

    # registry ------------------------------------------------------------
    def live_cuts(self) -> list[ManagedCut]:
        return [mc for group in self.live.values() for mc in group]

    @property
    def n_live(self) -> int:
        return sum(len(g) for g in self.live.values())

    def all_cuts(self) -> list[LinearCut]:
        """Live cuts first, then dormant ones, each in insertion order."""
        return [mc.cut for mc in self.live_cuts()] + [mc.cut for mc in self.dormant]

    def add(self, cut: LinearCut, round_index: int = 0, check_parallel: bool = True) -> ManagedCut | None:
        """Normalize, test against same-branch cuts and install ``cut``."""
        cut = cut.normalized()
        key = (cut.kind, cut.branch)
        group = self.live.setdefault(key, [])
        if check_parallel and any(is_parallel(cut, mc.cut, self.eps_par) for mc in group):
            return None
        m = self.model
        terms = [(m.var(r, cut.branch), c) for r, c in cut.terms]
        cid = m.backend.add_linear_constraint(terms, "<=", cut.rhs)
        mc = ManagedCut(cut, cid, round_index)
        group.append(mc)
        return mc

    def retire(self, mc: ManagedCut) -> None:
        """Remove a live cut from the engine and keep it for archiving."""
        self.model.backend.remove_constraint(mc.cid)
        self.live[(mc.cut.kind, mc.cut.branch)].remove(mc)
        mc.cid = None
        self.dormant.append(mc)

    def suppress(self, branch: int, families: Iterable[str] = (JABR, I2)) -> int:
        """Stop separating ``families`` on ``branch`` and retire their live cuts."""
        n = 0
        for kind in families:
            self.suppressed.add((kind, branch))
            for mc in list(self.live.get((kind, branch), [])):
                self.retire(mc)
                n += 1
        return n

    def release(self, branch: int) -> None:
        self.suppressed = {k for k in self.suppressed if k[1] != branch}

    def filter_suppressed(self, kind: str, viol: Sequence[Violation]) -> list[Violation]:
        if not self.suppressed:
            return list(viol)
        return [v for v in viol if (kind, v.branch) not in self.suppressed]

    # algorithm steps -----------------------------------------------------
    def select_and_add(self, pt: SolutionPoint, violations: Sequence[Sequence[Violation]],
                       p_jabr: float = 15.0, p_i2: float = 15.0, p_lim: float = 15.0,
                       round_index: int = 0) -> Selection:
        """Cut off the top ``p`` percent of each family's violated branches."""
        net = self.model.net
        computed = added = 0
        for kind, viol, p in zip(FAMILIES, violations, (p_jabr, p_i2, p_lim)):
            viol = self.filter_suppressed(kind, viol)
            for v in viol[:top_count(p, len(viol))]:
                cut = separate(kind, v, pt, net)
                computed += 1
                if self.add(cut, round_index) is not None:
                    added += 1
        return Selection(computed, added)

    def age_and_expire(self, pt: SolutionPoint, T_age: int,
                       tolerances: dict[str, float]) -> int:
        """Update slack ages; move cuts slack for ``T_age`` rounds to the dormant pool."""
        net = self.model.net
        doomed = []
        for mc in self.live_cuts():
            slack = mc.cut.rhs - mc.cut.lhs_at(pt, net)
            mc.last_slack = slack
            if slack > tolerances[mc.cut.kind]:
                mc.age += 1
            else:
                mc.age = 0
            if mc.age >= T_age:
                doomed.append(mc)
        for mc in doomed:
            self.retire(mc)
        return len(doomed)

    def reinstate(self, cuts: Iterable[LinearCut], round_index: int = 0) -> int:
        """Install archived cuts, skipping ones parallel to cuts already live."""
        return sum(self.add(c, round_index) is not None for c in cuts)


# --------------------------------------------------------------------------
# archives

@dataclass(frozen=True)
class Fingerprint:
    n_bus: int
    n_branch: int
    digest: str


def fingerprint(net: Network) -> Fingerprint:
    h = hashlib.sha256()
    for b in net.buses:
        h.update(repr((b.id, b.Pd, b.Qd, b.Gs, b.Bs, b.Vmin, b.Vmax)).encode())
    for br in net.branches:
        h.update(repr((br.f, br.t, br.r, br.x, br.b, br.tau, br.sigma, br.U, br.g_sh)).encode())
    for g in net.generators:
        h.update(repr((g.bus, g.Pmin, g.Pmax, g.Qmin, g.Qmax, g.cost)).encode())
    return Fingerprint(net.n_bus, net.n_branch, h.hexdigest()[:16])


@dataclass
class CutArchive:
    fingerprint: Fingerprint
    cuts: list[LinearCut] = field(default_factory=list)
    rounds: list[int] = field(default_factory=list)
    version: str = ARCHIVE_VERSION

    def check(self, net: Network) -> None:
        """Raise on topology mismatch, warn when only the data differs."""
        fp = fingerprint(net)
        if (fp.n_bus, fp.n_branch) != (self.fingerprint.n_bus, self.fingerprint.n_branch):
            raise ArchiveError(
                f"archive topology {self.fingerprint.n_bus} buses/{self.fingerprint.n_branch} "
                f"branches does not match network {fp.n_bus}/{fp.n_branch}")
        if fp.digest != self.fingerprint.digest:
            warnings.warn("cut archive was written for different network data; "
                          "cuts remain valid but may be loose", ArchiveWarning, stacklevel=2)


def _f(v: float) -> str:
    return f"{v:.16e}"


def format_archive(fp: Fingerprint, cuts: Sequence[LinearCut],
                   rounds: Sequence[int] | None = None) -> str:
    rounds = list(rounds) if rounds is not None else [0] * len(cuts)
    lines = [f"cutarchive {ARCHIVE_VERSION} {fp.n_bus} {fp.n_branch} {fp.digest}"]
    for cut, rnd in zip(cuts, rounds):
        terms = " ".join(f"{r}:{_f(c)}" for r, c in cut.terms)
        lines.append(f"{cut.kind} {cut.branch} {terms} rhs={_f(cut.rhs)} round={rnd}")
    return "\n".join(lines) + "\n"


def save_archive(path: str | os.PathLike, manager: CutManager) -> CutArchive:
    """Write every live and dormant cut of ``manager``."""
    mcs = manager.live_cuts() + manager.dormant
    arch = CutArchive(fingerprint(manager.model.net), [mc.cut for mc in mcs],
                      [mc.round_added for mc in mcs])
    Path(path).write_text(format_archive(arch.fingerprint, arch.cuts, arch.rounds))
    return arch


def parse_archive(text: str) -> CutArchive:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ArchiveError("empty cut archive")
    head = lines[0].split()
    if len(head) != 5 or head[0] != "cutarchive":
        raise ArchiveError("missing cutarchive header")
    if head[1] != ARCHIVE_VERSION:
        raise ArchiveError(f"unsupported archive version {head[1]}")
    try:
        fp = Fingerprint(int(head[2]), int(head[3]), head[4])
    except ValueError:
        raise ArchiveError("malformed archive header") from None
    cuts, rounds = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        try:
            kind, branch = tok[0], int(tok[1])
            if kind not in FAMILIES:
                raise ValueError(f"unknown family {kind}")
            terms, rhs, rnd = [], None, 0
            for t in tok[2:]:
                if t.startswith("rhs="):
                    rhs = float(t[4:])
                elif t.startswith("round="):
                    rnd = int(t[6:])
                else:
                    role, val = t.split(":")
                    if role not in ROLES:
                        raise ValueError(f"unknown role {role}")
                    terms.append((role, float(val)))
            if rhs is None:
                raise ValueError("missing rhs")
            if branch < 0 or branch >= fp.n_branch:
                raise ValueError(f"branch {branch} out of range")
            cuts.append(LinearCut(kind, branch, tuple(terms), rhs))
            rounds.append(rnd)
        except (ValueError, IndexError) as exc:
            raise ArchiveError(f"line {lineno}: {exc}") from None
    return CutArchive(fp, cuts, rounds)


def load_archive(path: str | os.PathLike) -> CutArchive:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ArchiveError(f"cannot read cut archive: {exc}") from None
    return parse_archive(text)

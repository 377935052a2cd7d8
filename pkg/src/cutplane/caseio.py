"""MATPOWER case parsing, per-unit conversion, load perturbation and writing.

Load perturbations draw from SplitMix64 streams so that runs are reproducible
independently of numpy's generator versions. Each bus owns a stream keyed by
``(seed, bus index)``::

    key   = mix64((seed mod 2**64) ^ mix64(bus_index + 1))
    state = key;  next() = mix64(state += 0x9E3779B97F4A7C15)
    u     = (next() >> 11) * 2**-53                      # uniform in [0, 1)
    z     = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)           # Box-Muller

where ``mix64`` is the SplitMix64 finalizer.
"""

from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .grid import INF, Branch, Bus, Generator, GeneratorCost, Network

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# minimum column counts of MATPOWER version 2 tables
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}
_REQUIRED = ("bus", "gen", "branch")


class CaseFormatError(ValueError):
    """Malformed or inconsistent case data."""


@dataclass
class RawCase:
    baseMVA: float
    bus: list[list[float]]
    gen: list[list[float]]
    branch: list[list[float]]
    gencost: list[list[float]] = field(default_factory=list)
    name: str = "case"
    version: str = "2"


@dataclass(frozen=True)
class PerturbationSpec:
    seed: int
    mean_scale: float = 0.05
    sd_scale: float = 0.05

    def __post_init__(self):
        if self.sd_scale < 0:
            raise ValueError("sd_scale must be non-negative")


# --------------------------------------------------------------------------
# parsing

_FUNC_RE = re.compile(r"^\s*function\s+(?:\w+\s*=\s*)?(\w+)")
_SCALAR_RE = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^\[;]+?)\s*;")
_MATRIX_RE = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")


def _strip_comment(line: str) -> str:
    i = line.find("%")
    return line if i < 0 else line[:i]


def parse_matpower(text: str) -> RawCase:
    """Parse the text of a MATPOWER ``.m`` case."""
    name = "case"
    scalars: dict[str, str] = {}
    tables: dict[str, list[list[float]]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = lines[i]
        line = _strip_comment(raw)
        m = _FUNC_RE.match(line)
        if m:
            name = m.group(1)
            i += 1
            continue
        m = _MATRIX_RE.match(line)
        if m:
            tname = m.group(1)
            if tname in tables:
                raise CaseFormatError(f"line {i + 1}: table {tname} defined twice")
            rows: list[list[float]] = []
            rest = m.group(2)
            lineno = i + 1
            closed = False
            while True:
                body, sep, _ = rest.partition("]")
                for chunk in body.split(";"):
                    tokens = chunk.replace(",", " ").split()
                    if not tokens:
                        continue
                    try:
                        rows.append([float(tok) for tok in tokens])
                    except ValueError:
                        raise CaseFormatError(
                            f"line {lineno}: malformed row in table {tname}: {chunk.strip()!r}"
                        ) from None
                if sep:
                    closed = True
                    break
                i += 1
                if i >= len(lines):
                    break
                rest = _strip_comment(lines[i])
                lineno = i + 1
            if not closed:
                raise CaseFormatError(f"table {tname} is not terminated")
            tables[tname] = rows
            i += 1
            continue
        m = _SCALAR_RE.match(line)
        if m:
            scalars[m.group(1)] = m.group(2).strip().strip("'\"")
        i += 1

    for t in _REQUIRED:
        if t not in tables:
            raise CaseFormatError(f"missing table: {t}")
    if "baseMVA" not in scalars:
        raise CaseFormatError("missing table: baseMVA")
    base = float(scalars["baseMVA"])
    if not base > 0:
        raise CaseFormatError(f"baseMVA must be positive, got {base}")

    for t, rows in tables.items():
        if t not in _MIN_COLS or not rows:
            continue
        width = len(rows[0])
        if width < _MIN_COLS[t] and t != "gencost":
            raise CaseFormatError(f"table {t} has {width} columns, need {_MIN_COLS[t]}")
        for k, row in enumerate(rows):
            if len(row) != width:
                raise CaseFormatError(
                    f"table {t}, row {k + 1}: {len(row)} columns, expected {width}"
                )

    seen = set()
    for row in tables["bus"]:
        bid = int(row[0])
        if bid in seen:
            raise CaseFormatError(f"duplicate bus id {bid}")
        seen.add(bid)

    return RawCase(
        baseMVA=base,
        bus=tables["bus"],
        gen=tables["gen"],
        branch=tables["branch"],
        gencost=tables.get("gencost", []),
        name=name,
        version=scalars.get("version", "2"),
    )


def read_case(path: str | os.PathLike) -> RawCase:
    return parse_matpower(Path(path).read_text())


def load_network(path: str | os.PathLike) -> Network:
    return to_network(read_case(path))


def _cost_from_row(row: list[float]) -> GeneratorCost:
    model = int(row[0])
    startup, shutdown = row[1], row[2]
    n = int(row[3])
    vals = row[4:4 + (2 * n if model == 1 else n)]
    if model == 2:
        if len(vals) < n:
            raise CaseFormatError("gencost row shorter than its declared degree")
        coeffs = list(vals)
        while len(coeffs) > 3:
            if coeffs[0] != 0:
                raise CaseFormatError("polynomial costs above degree 2 are not supported")
            coeffs.pop(0)
        coeffs = [0.0] * (3 - len(coeffs)) + coeffs
        return GeneratorCost("quadratic", coeffs=tuple(coeffs), startup=startup, shutdown=shutdown)
    if model == 1:
        pts = tuple((vals[2 * j], vals[2 * j + 1]) for j in range(n))
        return GeneratorCost("pwl", points=pts, startup=startup, shutdown=shutdown)
    raise CaseFormatError(f"unknown gencost model {model}")


def to_network(raw: RawCase) -> Network:
    """Convert raw MATPOWER tables into a per-unit :class:`Network`."""
    base = raw.baseMVA
    idmap: dict[int, int] = {}
    buses = []
    for row in raw.bus:
        if int(row[1]) == 4:
            continue
        bid = int(row[0])
        vmax, vmin = row[11], row[12]
        if vmin > vmax:
            raise CaseFormatError(f"bus {bid}: Vmin {vmin} > Vmax {vmax}")
        idx = len(buses)
        idmap[bid] = idx
        buses.append(Bus(
            index=idx, id=bid, Pd=row[2] / base, Qd=row[3] / base,
            Gs=row[4] / base, Bs=row[5] / base, Vmin=vmin, Vmax=vmax,
            bus_type=int(row[1]), base_kv=row[9], Vm=row[7], Va=row[8],
        ))
    all_ids = {int(r[0]) for r in raw.bus}

    branches = []
    for k, row in enumerate(raw.branch):
        f, t = int(row[0]), int(row[1])
        for end in (f, t):
            if end not in all_ids:
                raise CaseFormatError(f"branch {k + 1} references unknown bus {end}")
        if row[10] <= 0 or f not in idmap or t not in idmap:
            continue
        ratio = row[8]
        rate = row[5]
        angmin = math.radians(row[11]) if len(row) > 11 else -2 * math.pi
        angmax = math.radians(row[12]) if len(row) > 12 else 2 * math.pi
        branches.append(Branch(
            index=len(branches), f=idmap[f], t=idmap[t], r=row[2], x=row[3], b=row[4],
            tau=ratio if ratio != 0 else 1.0, sigma=math.radians(row[9]),
            U=rate / base if rate != 0 else INF, angmin=angmin, angmax=angmax,
        ))
        if branches[-1].r == 0 and branches[-1].x == 0:
            raise CaseFormatError(f"branch {k + 1} has zero series impedance")

    if raw.gencost and len(raw.gencost) < len(raw.gen):
        raise CaseFormatError("gencost has fewer rows than gen")
    gens = []
    for k, row in enumerate(raw.gen):
        bid = int(row[0])
        if bid not in all_ids:
            raise CaseFormatError(f"generator {k + 1} references unknown bus {bid}")
        if row[7] <= 0 or bid not in idmap:
            continue
        pmax, pmin, qmax, qmin = row[8], row[9], row[3], row[4]
        if pmin > pmax:
            raise CaseFormatError(f"generator {k + 1}: Pmin {pmin} > Pmax {pmax}")
        if qmin > qmax:
            raise CaseFormatError(f"generator {k + 1}: Qmin {qmin} > Qmax {qmax}")
        cost = _cost_from_row(raw.gencost[k]) if raw.gencost else GeneratorCost("quadratic")
        gens.append(Generator(
            index=len(gens), bus=idmap[bid], Pmin=pmin / base, Pmax=pmax / base,
            Qmin=qmin / base, Qmax=qmax / base, cost=cost,
            Pg=row[1] / base, Qg=row[2] / base, Vg=row[5],
        ))

    return Network(base, tuple(buses), tuple(branches), tuple(gens), name=raw.name)


# --------------------------------------------------------------------------
# perturbation

def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int, stream: int = 0):
        self.state = _mix64((seed & _MASK64) ^ _mix64((stream + 1) & _MASK64))

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix64(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        u1, u2 = self.uniform(), self.uniform()
        return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)


def perturb_loads(net: Network, spec: PerturbationSpec) -> Network:
    """Add ``N(mean_scale * Pd, (sd_scale * |Pd|)^2)`` to every active load.

    Positive loads that turn negative are clamped to zero; reactive loads
    are left untouched.
    """
    buses = []
    for bus in net.buses:
        pd = bus.Pd
        if pd != 0.0:
            z = SplitMix64(spec.seed, bus.index).normal()
            new = pd + spec.mean_scale * pd + spec.sd_scale * abs(pd) * z
            if pd > 0 and new < 0:
                new = 0.0
            bus = replace(bus, Pd=new)
        buses.append(bus)
    return replace(net, buses=tuple(buses))


# --------------------------------------------------------------------------
# writing

def _fmt(v: float) -> str:
    if math.isinf(v):
        return "Inf" if v > 0 else "-Inf"
    return f"{v:.17g}"


def _row(vals) -> str:
    return "\t" + "\t".join(_fmt(float(v)) for v in vals) + ";"


def format_network(net: Network) -> str:
    base = net.baseMVA
    out = [
        f"function mpc = {net.name}",
        "%% MATPOWER Case Format : Version 2",
        "mpc.version = '2';",
        f"mpc.baseMVA = {_fmt(base)};",
        "",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        "mpc.bus = [",
    ]
    for b in net.buses:
        out.append(_row([b.id, b.bus_type, b.Pd * base, b.Qd * base, b.Gs * base,
                         b.Bs * base, 1, b.Vm, b.Va, b.base_kv, 1, b.Vmax, b.Vmin]))
    out += ["];", "", "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin", "mpc.gen = ["]
    for g in net.generators:
        out.append(_row([net.buses[g.bus].id, g.Pg * base, g.Qg * base, g.Qmax * base,
                         g.Qmin * base, g.Vg, base, 1, g.Pmax * base, g.Pmin * base]))
    out += ["];", "",
            "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax",
            "mpc.branch = ["]
    for br in net.branches:
        if br.g_sh != 0:
            log.warning("branch %d: shunt conductance cannot be written in MATPOWER format", br.index)
        rate = br.U * base if br.has_limit else 0.0
        out.append(_row([net.buses[br.f].id, net.buses[br.t].id, br.r, br.x, br.b,
                         rate, rate, rate, br.tau, math.degrees(br.sigma), 1,
                         math.degrees(br.angmin), math.degrees(br.angmax)]))
    out += ["];", "", "mpc.gencost = ["]
    for g in net.generators:
        c = g.cost
        if c.kind == "quadratic":
            out.append(_row([2, c.startup, c.shutdown, 3, *c.coeffs]))
        else:
            flat = [v for pt in c.points for v in pt]
            out.append(_row([1, c.startup, c.shutdown, len(c.points), *flat]))
    out += ["];", ""]
    return "\n".join(out)


def write_network(net: Network, path: str | os.PathLike) -> None:
    Path(path).write_text(format_network(net))

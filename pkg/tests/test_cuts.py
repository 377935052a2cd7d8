import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import case_path
from cutplane import load_network
from cutplane.caseio import PerturbationSpec, perturb_loads
from cutplane.cuts import (ArchiveError, ArchiveWarning, CutManager, cosine, fingerprint,
                           format_archive, is_parallel, load_archive, parse_archive, save_archive,
                           top_count)
from cutplane.relaxation import build_base_model
from cutplane.separation import JABR, LIMIT, LinearCut, find_violations


def _cut(coefs, branch=0):
    return LinearCut(JABR, branch, tuple(zip(("c", "s", "vk2", "vm2"), coefs)), 0.0).normalized()


def test_parallel_examples():
    c = _cut((4, 4, -2.83, -2.83))
    assert is_parallel(c, c, 1e-9)
    assert cosine(c, _cut((4, 4, -2.83, -2.83), branch=1)) == 0.0
    d = _cut((4, 3.9, -2.8, -2.86))
    # [DERIVED] direct dot product of the normalized vectors
    a = np.array([4, 4, -2.83, -2.83]); b = np.array([4, 3.9, -2.8, -2.86])
    ref = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    assert cosine(c, d) == pytest.approx(ref, abs=1e-15)
    assert is_parallel(c, d, 1e-2) == (ref > 1 - 1e-2)


def test_cosine_over_role_union():
    c = LinearCut(LIMIT, 0, (("Pkm", 1.0), ("Qkm", 0.0)), 1.0)
    d = LinearCut(LIMIT, 0, (("Pmk", 1.0), ("Qmk", 0.0)), 1.0)
    assert cosine(c, d) == 0.0


def test_top_count():
    assert top_count(15, 20) == 3
    assert top_count(100, 7) == 7
    assert top_count(15, 0) == 0
    assert top_count(15, 1) == 1


@pytest.fixture
def m0(case14):
    m = build_base_model(case14)
    mgr = CutManager(m, 1e-2)
    m.solve(False)
    return m, mgr, m.snapshot(1)


def test_select_and_duplicate_round(m0, case14):
    m, mgr, pt = m0
    viol = find_violations(pt, case14)
    sel = mgr.select_and_add(pt, viol, 100, 100, 100, 1)
    assert sel.added == sel.computed == sum(map(len, viol))
    again = mgr.select_and_add(pt, viol, 100, 100, 100, 1)
    assert again.computed == sel.computed and again.added == 0


def test_fifteen_percent_of_case14(m0, case14):
    m, mgr, pt = m0
    jab = find_violations(pt, case14)[0]
    sel = mgr.select_and_add(pt, (jab, [], []), 15, 15, 15, 1)
    assert sel.added <= math.ceil(0.15 * 20)
    assert sel.computed == top_count(15, len(jab))


def test_no_parallel_pairs_and_registry_consistency(m0, case14):
    m, mgr, pt = m0
    for k in range(2, 8):
        mgr.select_and_add(pt, find_violations(pt, case14), 50, 50, 50, k)
        assert m.solve().optimal
        pt = m.snapshot(k)
        mgr.age_and_expire(pt, 2, {"jabr": 1e-5, "i2": 1e-5, "limit": 1e-5})
        assert mgr.n_live == m.backend.n_constraints - m.n_base_rows
        for group in mgr.live.values():
            for i, a in enumerate(group):
                assert a.live
                for b in group[i + 1:]:
                    assert cosine(a.cut, b.cut) <= 1 - mgr.eps_par


def test_aging(m0, case14):
    m, mgr, pt = m0
    tol = {"jabr": 1e-5, "i2": 1e-5, "limit": 1e-5}
    slack = mgr.add(LinearCut(JABR, 0, (("c", 1.0),), pt.c[0] + 1e-4), 1)
    tight = mgr.add(LinearCut(JABR, 1, (("c", 1.0),), float(pt.c[1])), 1)
    z = m.solve().objective
    for _ in range(3):
        assert mgr.age_and_expire(pt, 10, tol) == 0
    assert slack.age == 3 and tight.age == 0
    assert mgr.age_and_expire(pt, 4, tol) == 1
    assert not slack.live and slack in mgr.dormant and tight.live
    # dropping a slack cut leaves the optimum in place
    assert m.solve().objective == pytest.approx(z, rel=1e-6)
    assert mgr.age_and_expire(pt, 1, tol) == 0


def test_suppress_and_filter(m0, case14):
    m, mgr, pt = m0
    viol = find_violations(pt, case14)
    mgr.select_and_add(pt, viol, 100, 100, 100, 1)
    b = viol[0][0].branch
    n = mgr.suppress(b)
    assert n >= 1 and not mgr.live.get((JABR, b))
    assert all(v.branch != b for v in mgr.filter_suppressed(JABR, viol[0]))
    mgr.release(b)
    assert mgr.filter_suppressed(JABR, viol[0]) == list(viol[0])


def test_manager_validation(case14):
    with pytest.raises(ValueError):
        CutManager(build_base_model(case14), 0.0)


# archives --------------------------------------------------------------------

@pytest.fixture
def archived(m0, case14, tmp_path):
    m, mgr, pt = m0
    mgr.select_and_add(pt, find_violations(pt, case14), 100, 100, 100, 1)
    mgr.retire(mgr.live_cuts()[0])
    path = tmp_path / "cuts.txt"
    arch = save_archive(path, mgr)
    return path, arch, mgr


def test_archive_round_trip(archived):
    path, arch, mgr = archived
    back = load_archive(path)
    assert back.cuts == [c.__class__(c.kind, c.branch, c.terms, c.rhs) for c in mgr.all_cuts()]
    assert len(back.cuts) == mgr.n_live + len(mgr.dormant)
    assert back.fingerprint == arch.fingerprint
    assert path.read_text().startswith("cutarchive v1 14 20 ")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False).filter(lambda v: v != 0), min_size=4,
                max_size=4), st.floats(-1e3, 1e3, allow_nan=False))
def test_archive_floats_bit_exact(coefs, rhs):
    cut = LinearCut(JABR, 2, tuple(zip(("c", "s", "vk2", "vm2"), coefs)), rhs)
    from cutplane.cuts import Fingerprint
    text = format_archive(Fingerprint(3, 4, "ab"), [cut], [7])
    back = parse_archive(text)
    assert back.cuts[0].terms == cut.terms and back.cuts[0].rhs == cut.rhs
    assert back.rounds == [7]


def test_archive_topology_mismatch(archived):
    path, _, _ = archived
    with pytest.raises(ArchiveError, match="topology"):
        load_archive(path).check(load_network(case_path("case118")))


def test_archive_data_mismatch_warns(archived, case14):
    path, _, _ = archived
    arch = load_archive(path)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        arch.check(case14)
    with pytest.warns(ArchiveWarning):
        arch.check(perturb_loads(case14, PerturbationSpec(3)))


@pytest.mark.parametrize("text,msg", [
    ("", "empty"),
    ("hello\n", "header"),
    ("cutarchive v9 1 1 x\n", "version"),
    ("cutarchive v1 14 20 x\njabr 0 c:1 s:1\n", "line 2: missing rhs"),
    ("cutarchive v1 14 20 x\nsdp 0 c:1 rhs=0\n", "unknown family"),
    ("cutarchive v1 14 20 x\njabr 0 q:1 rhs=0\n", "unknown role"),
    ("cutarchive v1 14 20 x\njabr 99 c:1 rhs=0\n", "out of range"),
])
def test_archive_parse_errors(text, msg):
    with pytest.raises(ArchiveError, match=msg):
        parse_archive(text)


def test_archive_unreadable(tmp_path):
    with pytest.raises(ArchiveError):
        load_archive(tmp_path / "nope.txt")


def test_fingerprint_sensitive_to_data(case14):
    a = fingerprint(case14)
    b = fingerprint(perturb_loads(case14, PerturbationSpec(1)))
    assert (a.n_bus, a.n_branch) == (b.n_bus, b.n_branch) and a.digest != b.digest

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cutplane.grid import (Branch, GeneratorCost, branch_admittance, branch_flows, i2_value,
                           total_loss)
from oracles import complex_flows, pi_model

finite = dict(allow_nan=False, allow_infinity=False)

branches = st.builds(
    lambda r, x, b, tau, sig, gsh: Branch(0, 0, 1, r, x, b, tau, sig, g_sh=gsh),
    st.floats(0, 0.2, **finite), st.floats(0.01, 0.6, **finite), st.floats(0, 0.8, **finite),
    st.floats(0.85, 1.15, **finite), st.floats(-0.6, 0.6, **finite), st.floats(0, 0.05, **finite))
phasors = st.builds(lambda m, a: m * cmath.exp(1j * a),
                    st.floats(0.85, 1.15, **finite), st.floats(-math.pi, math.pi, **finite))


def _wcs(vk, vm):
    w = vk * vm.conjugate()
    return abs(vk) ** 2, abs(vm) ** 2, w.real, w.imag


def test_admittance_matches_textbook_pi_model():
    br = Branch(0, 0, 1, 0.01, 0.1, 0.2, 0.98, math.radians(3))
    adm = branch_admittance(br)
    ref = pi_model(0.01, 0.1, 0.2, 0.98, math.radians(3))
    got = [adm.matrix[0][0], adm.matrix[0][1], adm.matrix[1][0], adm.matrix[1][1]]
    assert np.allclose(got, ref, rtol=1e-14, atol=0)


@settings(max_examples=300, deadline=None)
@given(branches, phasors, phasors)
def test_i2_value_is_squared_current(br, vk, vm):
    adm = branch_admittance(br)
    _, _, ikm2 = complex_flows(*pi_model(br.r, br.x, br.b, br.tau, br.sigma, br.g_sh), vk, vm)
    assert i2_value(adm, *_wcs(vk, vm)) == pytest.approx(ikm2, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(branches, phasors, phasors)
def test_linear_flows_match_complex_power(br, vk, vm):
    adm = branch_admittance(br)
    skm, smk, _ = complex_flows(*pi_model(br.r, br.x, br.b, br.tau, br.sigma, br.g_sh), vk, vm)
    pkm, pmk, qkm, qmk = branch_flows(adm, *_wcs(vk, vm))
    scale = max(1.0, abs(skm), abs(smk))
    assert abs(pkm - skm.real) < 1e-10 * scale
    assert abs(qkm - skm.imag) < 1e-10 * scale
    assert abs(pmk - smk.real) < 1e-10 * scale
    assert abs(qmk - smk.imag) < 1e-10 * scale


@settings(max_examples=200, deadline=None)
@given(branches, phasors, phasors)
def test_i2_cone_is_tight_at_physical_points(br, vk, vm):
    adm = branch_admittance(br)
    vk2, vm2, c, s = _wcs(vk, vm)
    pkm, _, qkm, _ = branch_flows(adm, vk2, vm2, c, s)
    assert pkm ** 2 + qkm ** 2 == pytest.approx(vk2 * i2_value(adm, vk2, vm2, c, s), rel=1e-9)
    assert c * c + s * s == pytest.approx(vk2 * vm2, rel=1e-12)


def test_plain_line_coefficients():
    # no tap, no shunt: |I|^2 = |y|^2 (vk2 + vm2 - 2c)
    br = Branch(0, 0, 1, 0.02, 0.06)
    adm = branch_admittance(br)
    y2 = abs(1 / complex(0.02, 0.06)) ** 2
    assert (adm.alpha, adm.beta, adm.gamma) == pytest.approx((y2, y2, -2 * y2), rel=1e-14)
    assert adm.zeta == pytest.approx(0.0, abs=1e-12)


def test_loss_is_sum_of_both_ends():
    assert total_loss([0.5, -0.1], [-0.48, -0.1]) == pytest.approx(-0.18)


def test_cost_validation():
    with pytest.raises(ValueError):
        GeneratorCost("quadratic", coeffs=(-1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        GeneratorCost("pwl", points=((0, 0), (1, 5), (2, 6)))  # concave
    with pytest.raises(ValueError):
        GeneratorCost("pwl", points=((0, 0), (0, 1)))
    c = GeneratorCost("pwl", points=((0, 0), (1, 1), (2, 3)))
    assert c.evaluate(1.5) == pytest.approx(2.0)

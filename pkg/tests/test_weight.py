import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brgkernel.errors import RadiusError, WeightError
from brgkernel.series import HbarSymbol, Jet
from brgkernel.weight import (
    QuadraticModel, Weight, bargmann_weight, coercivity_check, fbi_phase_to_weight,
    fubini_study_weight, heat_toeplitz_to_weyl, heat_weyl_to_toeplitz, levi_check,
    perturbed_weight, polarize, quadratic_exact_kernel, quadratic_weight,
)

B2 = (0j, 0j)


def test_bargmann_polarization():
    p = polarize(bargmann_weight())
    assert p.psi.to_table(1e-15) == {(1, 1): 0.5}
    assert p.is_symmetric()


def test_polarization_with_holomorphic_part():
    # |z|^2/2 + Re(z^2)/4 -> psi = xw/2 + x^2/8 + w^2/8
    w = quadratic_weight([[0.5]], [[0.25]])
    tab = polarize(w).psi.to_table(1e-15)
    assert tab == pytest.approx({(1, 1): 0.5, (2, 0): 0.125, (0, 2): 0.125})


def test_restriction_reproduces_weight():
    w = perturbed_weight()
    p = polarize(w)
    z = np.array([[0.3 + 0.2j], [-0.1j], [0.05]])
    assert np.allclose(p.value(z, np.conj(z)).real, w.value(z))
    assert np.allclose(p.value(z, np.conj(z)).imag, 0)


def test_levi_examples():
    assert levi_check(bargmann_weight()) == pytest.approx(0.5)
    w2 = Weight.from_table(2, [0, 0], 2, {((1, 0), (1, 0)): 1.0, ((0, 1), (0, 1)): 3.0})
    assert levi_check(w2) == pytest.approx(1.0)
    w4 = Weight.from_table(1, [0], 4, {((1,), (1,)): 0.5, ((2,), (2,)): 0.1})
    assert levi_check(w4) == pytest.approx(0.5)


def test_symmetry_violation_names_pair():
    with pytest.raises(WeightError, match=r"a=\(2,\), b=\(0,\)"):
        Weight.from_table(1, [0], 2, {((1,), (1,)): 0.5, ((2,), (0,)): 0.3})


def test_non_psh_rejected():
    with pytest.raises(WeightError):
        Weight.from_table(1, [0], 2, {((1,), (1,)): -0.5})


def test_weight_dict_round_trip():
    w = perturbed_weight()
    w2 = Weight.from_dict(w.to_dict())
    assert w2.phi.is_close(w.phi, atol=0) and w2.name == w.name


def test_coercivity_quadratic_is_exact():
    w = bargmann_weight()
    for r in (0.1, 1.0, 3.0):
        c = coercivity_check(polarize(w), w, r)
        assert c.c_lo == pytest.approx(0.5, abs=1e-12) and c.c_hi == pytest.approx(0.5, abs=1e-12)


def test_coercivity_perturbed_and_improving():
    w = perturbed_weight()
    p = polarize(w)
    assert coercivity_check(p, w, 0.3).c_lo >= w.levi_m - 0.2
    gaps = [w.levi_m - coercivity_check(p, w, r).c_lo for r in (0.4, 0.2, 0.1)]
    assert gaps[0] > gaps[1] > gaps[2] >= 0


def test_coercivity_refuses_large_radius():
    w = fubini_study_weight()
    with pytest.raises(RadiusError):
        coercivity_check(polarize(w), w, 10 * w.radius)


def test_fbi_weight_of_standard_phase():
    # phi = i (z - x)^2 / 2 gives Phi = (Im z)^2 / 2
    q = QuadraticModel(phi_xx=[[1j]], phi_xz=[[-1j]], phi_zz=[[1j]])
    w, c = fbi_phase_to_weight(q)
    z = np.array([[0.3 + 0.7j], [-1.2 + 0.1j]])
    assert np.allclose(w.value(z), z.imag[:, 0] ** 2 / 2)
    assert c == pytest.approx(1 / (math.sqrt(2) * math.pi ** 0.75))


def test_fbi_weight_is_homogeneous():
    q = QuadraticModel(phi_xx=[[1j]], phi_xz=[[-1j]], phi_zz=[[1j]])
    q3 = QuadraticModel(phi_xx=[[3j]], phi_xz=[[-3j]], phi_zz=[[3j]])
    z = np.array([[0.4 - 0.9j]])
    assert fbi_phase_to_weight(q3)[0].value(z) == pytest.approx(3 * fbi_phase_to_weight(q)[0].value(z))


def test_quadratic_exact_kernel_values():
    w = bargmann_weight()
    assert quadratic_exact_kernel(w, 1.0, [0j], [0j]) == pytest.approx(1 / math.pi)
    assert quadratic_exact_kernel(w, 0.5, [1 + 0j], [0j]) == pytest.approx(2 / math.pi)
    # on the diagonal psi(x, xbar) = Phi(x), so only the prefactor survives
    x = np.array([[0.3 + 0.4j]])
    assert quadratic_exact_kernel(w, 0.2, x, x)[0] == pytest.approx(1 / (math.pi * 0.2))


def _sym(table0, J):
    t0 = Jet.from_table(table0, 2, B2, 6)
    return HbarSymbol((t0,) + tuple(Jet.zeros(2, B2, 6) for _ in range(J)))


def test_heat_examples():
    w = bargmann_weight()
    one = HbarSymbol.constant(1.0, 2, B2, 6, J=2)
    assert heat_toeplitz_to_weyl(one, w)[1].max_abs() == 0
    b = heat_toeplitz_to_weyl(_sym({(1, 1): 1.0}, 2), w)
    assert b[1].to_table(1e-14) == pytest.approx({(0, 0): 0.5})
    b = heat_toeplitz_to_weyl(_sym({(2, 2): 1.0}, 3), w)
    assert b[1].to_table(1e-14) == pytest.approx({(1, 1): 2.0})
    assert b[2].to_table(1e-14) == pytest.approx({(0, 0): 0.5})
    assert b[3].max_abs() < 1e-14
    f = heat_weyl_to_toeplitz(_sym({(1, 1): 1.0}, 2), w)
    assert f[1].to_table(1e-14) == pytest.approx({(0, 0): -0.5})


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_heat_round_trip(vals):
    w = bargmann_weight()
    keys = [(0, 0), (1, 1), (2, 1), (1, 2), (2, 2), (3, 1)]
    f = _sym(dict(zip(keys, vals)), 3)
    back = heat_weyl_to_toeplitz(heat_toeplitz_to_weyl(f, w), w)
    for a, b in zip(back.terms, f.terms):
        assert a.is_close(b, atol=1e-12)


def test_fubini_study_truncation_is_inexact():
    w = fubini_study_weight(cap=12)
    assert not w.exact and w.radius < 1.0
    z = np.array([[0.2 + 0.1j]])
    assert w.value(z)[0] == pytest.approx(0.5 * math.log1p(0.05), rel=1e-8)

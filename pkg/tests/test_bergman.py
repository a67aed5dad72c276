import math

import numpy as np
import pytest

from brgkernel.bergman import (
    BergmanSymbol, ChiSpec, GridSpec, bergman_symbol, bump, bump_mass, kernel_eval,
    kernel_extract, kernel_matrix, peak_state, projection_matrix, smooth_step, truncate_aC,
)
from brgkernel.errors import BudgetError, GridError, RadiusError
from brgkernel.weight import bargmann_weight, perturbed_weight, quadratic_exact_kernel, quadratic_weight


@pytest.fixture(scope="module")
def bargmann():
    return bergman_symbol(bargmann_weight(), J=4)


@pytest.fixture(scope="module")
def perturbed():
    return bergman_symbol(perturbed_weight(), J=3)


def test_bargmann_symbol_is_one(bargmann):
    a = bargmann.a
    assert a[0].to_table(1e-14) == {(0, 0): 1.0}
    assert all(t.max_abs() < 1e-12 for t in a.terms[1:])


def test_quadratic_symbol_with_holomorphic_part_is_one():
    w = quadratic_weight([[0.5]], [[0.3 - 0.1j]])
    s = bergman_symbol(w, J=3)
    assert all(t.max_abs() < 1e-12 for t in s.a.terms[1:])
    rng = np.random.default_rng(0)
    x = rng.normal(size=(20, 1)) + 1j * rng.normal(size=(20, 1))
    y = rng.normal(size=(20, 1)) + 1j * rng.normal(size=(20, 1))
    got = kernel_eval(s, 0.3, x, y)
    ref = quadratic_exact_kernel(w, 0.3, x, y)
    assert np.max(np.abs(got / ref - 1)) < 1e-12


def test_bargmann_kernel_closed_form(bargmann):
    hbar = 0.25
    x, y = np.array([0.3 + 0.4j]), np.array([-0.2 + 0.1j])
    # gauge form: exp((2 x ybar - |x|^2 - |y|^2)/(2 hbar)) / (pi hbar)
    expect = np.exp((2 * x * np.conj(y) - abs(x) ** 2 - abs(y) ** 2) / (2 * hbar)) / (math.pi * hbar)
    assert kernel_eval(bargmann, hbar, x, y, gauge=True) == pytest.approx(expect[0], rel=1e-13)


def test_symbol_is_hermitian_and_starts_at_one(perturbed):
    assert perturbed.symmetry_defect() < 1e-12
    assert perturbed.provenance["a0_defect"] < 1e-12


def test_perturbed_low_orders_match_frozen_oracle_fit(perturbed):
    # a_1(0), a_2(0) frozen from a Gram-oracle fit of the diagonal density;
    # this pins the U_{1/2} constant, since c = -i/2 flips the sign of a_1
    a1 = perturbed.a[1].coeffs[0]
    a2 = perturbed.a[2].coeffs[0]
    assert a1 == pytest.approx(-0.02000001, abs=1e-3)
    assert a2 == pytest.approx(-0.00319873, abs=1e-3)
    assert abs(a1.imag) < 1e-14 and abs(a2.imag) < 1e-14


def test_budget_refusal():
    with pytest.raises(BudgetError):
        bergman_symbol(perturbed_weight(), J=3, degree=6, cap=10)


def test_symbol_dict_round_trip(perturbed):
    s2 = BergmanSymbol.from_dict(perturbed.to_dict())
    assert all(a.is_close(b, atol=0) for a, b in zip(s2.a.terms, perturbed.a.terms))


def test_truncation_rule(perturbed):
    full, flagged = truncate_aC(perturbed, 0.05)
    assert flagged
    a1, f1 = truncate_aC(perturbed, 0.4, C=1.0)  # floor(1/0.8) = 1
    assert not f1
    assert a1.is_close(perturbed.a[0] + perturbed.a[1] * 0.4, atol=1e-15)


def test_kernel_hermitian(perturbed):
    rng = np.random.default_rng(3)
    z = 0.05 * (rng.normal(size=6) + 1j * rng.normal(size=6))
    K = kernel_matrix(perturbed, 0.05, z, z)
    assert np.max(np.abs(K - K.conj().T)) < 1e-10 * np.abs(K).max()
    assert np.allclose(np.diag(K).imag, 0, atol=1e-10 * np.abs(K).max())


def test_kernel_refuses_outside_radius(perturbed):
    far = np.array([10 * perturbed.radius + 0j])
    with pytest.raises(RadiusError):
        kernel_eval(perturbed, 0.05, far, far)


def test_smooth_step_and_chi():
    assert smooth_step(0.0) == 0 and smooth_step(1.0) == 1
    assert smooth_step(0.5) == pytest.approx(0.5)
    chi = ChiSpec(1.0)
    assert chi(0.4) == 1.0 and chi(1.0) == 0.0 and 0 < chi(0.75) < 1
    assert ChiSpec()(5.0) == 1.0


def test_bump_mass_closed_form_check():
    # numerical mass matches a polar trapezoid of the bump
    r = np.linspace(0, 1, 20001)
    ref = 2 * math.pi * np.trapezoid(bump(r) * r, r)
    assert bump_mass() == pytest.approx(ref, rel=1e-8)


def test_grid_errors(bargmann):
    with pytest.raises(GridError):
        projection_matrix(bargmann, GridSpec(1.0), 0.1, chi=1.0)
    with pytest.raises(GridError):
        peak_state(0.9, 0.1, bargmann_weight(), *GridSpec(1.0, nodes=40).build(0.1))


@pytest.fixture(scope="module")
def bargmann_proj(bargmann):
    return projection_matrix(bargmann, GridSpec(3.0, nodes=60), 0.1)


def test_projection_hermitian(bargmann_proj):
    assert bargmann_proj.hermitian_defect() < 1e-10


def test_projection_reproduces_and_is_idempotent_inside(bargmann_proj):
    for j in range(4):
        assert bargmann_proj.reproducing_defect(j, radius=1.5) < 1e-6
    assert bargmann_proj.idempotency_defect(radius=1.5) < 1e-5


def test_peak_state_norm(bargmann_proj):
    p = bargmann_proj
    e = peak_state(0.2 + 0.1j, p.hbar, p.weight, p.nodes, p.weights)
    # |e|^2 e^{-2 Phi/hbar} = f^2 e^{|x - x0|^2/hbar}, and the exponential lies in [1, e]
    # on the support, so hbar |e|^2 / int(bump^2)/mass^2 lies in [1, e]
    r = np.linspace(0, 1, 20001)
    f2 = 2 * math.pi * np.trapezoid(bump(r) ** 2 * r, r) / bump_mass() ** 2
    ratio = e.norm_sq() * p.hbar / f2
    assert 0.95 < ratio < math.e


def test_kernel_extraction_matches_bargmann(bargmann):
    hbar = 0.1
    p = projection_matrix(bargmann, GridSpec(1.2, nodes=80), hbar)
    x0, y0 = 0.2 + 0.1j, -0.1 + 0.15j
    got = kernel_extract(p, x0, y0)
    expect = np.exp(x0 * np.conj(y0) / hbar) / (math.pi * hbar)
    assert abs(got / expect - 1) < 1e-3

import math

import numpy as np
import pytest

from brgkernel.bergman import GridSpec, bergman_symbol, kernel_eval
from brgkernel.errors import ConditioningError, InputError
from brgkernel.oracle import (
    compare_report, cp1_gram, cp1_study, decay_fit, default_domain_radius, exact_kernel,
    gauge_kernel_matrix, gram_matrix, log_linear_fit, near_diagonal_pairs, off_diagonal_pairs,
    oracle_projection, psh_radius,
)
from brgkernel.weight import bargmann_weight, perturbed_weight


@pytest.fixture(scope="module")
def bargmann_oracle():
    return gram_matrix(bargmann_weight(), 0.25, N=25, R=6.0)


def _true_gram(o):
    j = o.basis[:, 0]
    s = o.scale ** j
    return o.G * np.exp(o.log_shift) * np.outer(s, s)


def test_bargmann_gram_is_factorial_diagonal(bargmann_oracle):
    # <z^j, z^j> = int |z|^{2j} e^{-|z|^2/hbar} = pi hbar^{j+1} j!
    G = _true_gram(bargmann_oracle)
    j = np.arange(26)
    expect = np.array([math.pi * 0.25 ** (i + 1) * math.factorial(i) for i in j])
    assert np.max(np.abs(np.real(np.diag(G)) / expect - 1)) < 1e-10
    off = G / np.sqrt(np.outer(expect, expect))
    np.fill_diagonal(off, 0)
    assert np.abs(off).max() < 1e-10


def test_bargmann_oracle_kernel_on_diagonal(bargmann_oracle):
    # partial sum of e^{|x|^2/hbar}/(pi hbar); truncation error tiny near the origin
    x = np.array([0.1 + 0.2j, -0.3j, 0.4])
    got = exact_kernel(bargmann_oracle, x.reshape(-1, 1), x.reshape(-1, 1), gauge=True).real
    assert np.max(np.abs(got * math.pi * 0.25 - 1)) < 1e-8


def test_refinement_self_consistency():
    w = perturbed_weight()
    a = gram_matrix(w, 1 / 40, N=30)
    b = gram_matrix(w, 1 / 40, N=30, nr=120, nt=400)
    X, Y = near_diagonal_pairs()
    ka = exact_kernel(a, X, Y, gauge=True)
    kb = exact_kernel(b, X, Y, gauge=True)
    assert np.max(np.abs(ka - kb)) < 1e-8 * np.abs(kb).max()


def test_oracle_kernel_hermitian_and_reproducing():
    o = gram_matrix(perturbed_weight(), 1 / 20, N=20)
    z = 0.1 * np.exp(1j * np.arange(5))
    K = gauge_kernel_matrix(o, z, z)
    assert np.max(np.abs(K - K.conj().T)) < 1e-12 * np.abs(K).max()
    # reproducing: the quadrature Gram of the features is the identity
    R = o.domain["R"]
    t, wt = np.polynomial.legendre.leggauss(80)
    r = 0.5 * R * (t + 1)
    th = 2 * np.pi * np.arange(240) / 240
    zz = (r[:, None] * np.exp(1j * th)[None, :]).ravel()
    q = (0.5 * R * wt * r)[:, None].repeat(240, axis=1).ravel() * 2 * np.pi / 240
    F = o.features(zz) * np.sqrt(q)[:, None]
    assert np.max(np.abs(F.conj().T @ F - np.eye(o.dim))) < 1e-6


def test_default_domain_is_within_psh_region():
    w = perturbed_weight()
    r = default_domain_radius(w, 1 / 80, 40)
    assert 0 < r <= psh_radius(w) <= w.radius
    assert default_domain_radius(bargmann_weight(), 0.1, 10) == pytest.approx(
        math.sqrt(0.1 * (10 + math.log(1e12)) / 0.5))


def test_conditioning_refusal_names_safe_degree():
    w = perturbed_weight()
    o = gram_matrix(w, 1 / 20, N=20)
    with pytest.raises(ConditioningError, match=r"use basis degree N <= 1[0-9]$"):
        gram_matrix(w, 1 / 20, N=20, cond_max=o.cond / 2)


def test_cp1_closed_forms():
    o = cp1_gram(1)
    assert np.real(np.diag(o.G)) == pytest.approx([math.pi / 2, math.pi / 2])
    for k in (1, 5, 20):
        assert cp1_gram(k).dim == k + 1
    # K(x, ybar) = (k+1)/pi (1 + x ybar)^k
    k = 7
    o = cp1_gram(k)
    x, y = np.array([[0.3 + 0.1j]]), np.array([[-0.2 + 0.5j]])
    expect = (k + 1) / math.pi * (1 + x * np.conj(y)) ** k
    assert exact_kernel(o, x, y)[0] == pytest.approx(expect[0, 0], rel=1e-12)


def test_cp1_study_values():
    res = cp1_study(range(1, 21))
    assert res.dims == [k + 1 for k in range(1, 21)]
    assert max(res.density_spread) < 1e-10
    assert res.c0 == pytest.approx(1 / math.pi, rel=1e-10)
    assert res.c1 == pytest.approx(1 / math.pi, rel=1e-9)
    g = [(k + 1) / math.pi * 0.6 ** k for k in range(1, 21)]
    assert res.offdiag == pytest.approx(g, rel=1e-10)
    assert res.C_hat == pytest.approx(max(k / -math.log(v) for k, v in zip(range(1, 21), g)))
    assert res.C_hat == pytest.approx(2.6504432, abs=1e-6)
    with pytest.raises(InputError):
        cp1_study([])


def test_compare_bargmann_is_exact():
    s = bergman_symbol(bargmann_weight(), J=2)
    rep = compare_report(s, [1 / 10, 1 / 20], N=40)
    assert rep.status == "exact"
    assert max(rep.E) < 1e-8


def test_compare_higher_order_helps():
    w = perturbed_weight()
    hb = [1 / 40]
    e1 = compare_report(bergman_symbol(w, J=1), hb).E[0]
    e3 = compare_report(bergman_symbol(w, J=3), hb).E[0]
    assert e3 * 10 <= e1


def test_log_linear_fit_recovers_rate():
    x = np.array([10.0, 20.0, 40.0])
    fit = log_linear_fit(x, np.exp(-0.3 * x + 1.0))
    assert fit["slope"] == pytest.approx(0.3) and fit["intercept"] == pytest.approx(1.0)
    assert fit["r2"] == pytest.approx(1.0)


def test_decay_fit_bargmann_exact():
    hbar = 0.05
    s = bergman_symbol(bargmann_weight(), J=1)
    fit = decay_fit(lambda X, Y: kernel_eval(s, hbar, X, Y, gauge=True, check=False),
                    off_diagonal_pairs(), hbar)
    assert fit.slope == pytest.approx(0.5, abs=1e-10)
    assert fit.intercept == pytest.approx(hbar * math.log(math.pi * hbar), abs=1e-10)
    with pytest.raises(InputError):
        decay_fit(lambda X, Y: np.ones(len(X)), (np.zeros(3), np.zeros(3)), hbar)


def test_oracle_projection_is_idempotent():
    w = perturbed_weight()
    o = gram_matrix(w, 1 / 20, N=20)
    p = oracle_projection(o, GridSpec(o.domain["R"], nodes=60), w)
    assert p.hermitian_defect() < 1e-10
    # limited by the 60-node grid quadrature, not by the oracle
    assert p.idempotency_defect() < 1e-5

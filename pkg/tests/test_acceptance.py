"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line with its measured values and runtime.
The lines are printed in the terminal summary (see ``conftest.py``) and
when the module is run as a script.
"""

import math
import time

import numpy as np
import pytest

from brgkernel.bergman import ChiSpec, GridSpec, bergman_symbol, kernel_eval, projection_matrix
from brgkernel.oracle import (
    compare_report, cp1_study, decay_fit, gram_matrix, near_diagonal_pairs, off_diagonal_pairs,
    oracle_projection,
)
from brgkernel.quantize import kuranishi_data, symbol_forward, symbol_invert, u_half_apply
from brgkernel.series import HbarSymbol, Jet, growth_fit, layout
from brgkernel.weight import (
    bargmann_weight, coercivity_check, fubini_study_weight, perturbed_weight, polarize,
    quadratic_exact_kernel, quadratic_weight,
)

RESULTS: dict[int, str] = {}


class Criterion:
    """Times a criterion and records its PASS/FAIL line."""

    def __init__(self, num: int, title: str, limit: float):
        self.num, self.title, self.limit = num, title, limit
        self.checks: list[tuple[str, bool]] = []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def check(self, label: str, ok) -> None:
        self.checks.append((label, bool(ok)))

    def __exit__(self, exc_type, exc, tb):
        dt = time.perf_counter() - self.t0
        self.check(f"runtime {dt:.1f}s < {self.limit:g}s", dt < self.limit)
        if exc_type is not None:
            self.check(f"raised {exc_type.__name__}: {exc}", False)
        ok = all(c[1] for c in self.checks)
        detail = "; ".join(label for label, _ in self.checks)
        line = f"{'PASS' if ok else 'FAIL'} [{self.num}] {self.title}: {detail}"
        RESULTS[self.num] = line
        print(line)
        if exc_type is None:
            failed = [label for label, good in self.checks if not good]
            assert not failed, f"criterion {self.num} failed: {failed}"
        return False


def test_1_bargmann_exactness():
    with Criterion(1, "Bargmann exactness", 10) as c:
        w = bargmann_weight()
        s = bergman_symbol(w, J=6)
        a0 = s.a[0].coeffs
        a0_err = float(np.abs(a0 - np.eye(1, a0.size)[0]).max())
        tail = max(t.max_abs() for t in s.a.terms[1:])
        c.check(f"|a0 - 1| = {a0_err:.1e}", a0_err < 1e-11)
        c.check(f"max |a_j| (j=1..6) = {tail:.1e} < 1e-11", tail < 1e-11)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(100, 1)) + 1j * rng.normal(size=(100, 1))
        y = rng.normal(size=(100, 1)) + 1j * rng.normal(size=(100, 1))
        rel = 0.0
        for h in (0.5, 0.1):
            got = kernel_eval(s, h, x, y)
            ref = quadratic_exact_kernel(w, h, x, y)
            rel = max(rel, float(np.max(np.abs(got / ref - 1))))
        c.check(f"kernel rel err {rel:.1e} < 1e-12", rel < 1e-12)


def _random_elliptic(k, J, rng):
    lay = layout(2, k.cap)
    terms = []
    for j in range(J + 1):
        coef = 0.3 * (rng.normal(size=lay.size) + 1j * rng.normal(size=lay.size))
        if j == 0:
            coef[0] = 2.0 + 0.5j
        terms.append(Jet(2, k.xt_base, k.cap, coef))
    return HbarSymbol(tuple(terms))


def test_2_round_trip():
    with Criterion(2, "symbol_forward o symbol_invert = id", 30) as c:
        J = 4
        k = kuranishi_data(polarize(perturbed_weight()), cap=16)
        rng = np.random.default_rng(7)
        m = layout(2, k.cap - 2 * J).size
        worst = 0.0
        for _ in range(5):
            b = _random_elliptic(k, J, rng)
            back = symbol_forward(symbol_invert(b, k), k)
            err = max(float(np.abs(u.coeffs[:m] - v.coeffs[:m]).max())
                      for u, v in zip(back.terms, b.terms))
            worst = max(worst, err)
        c.check(f"J=4, 5 symbols, max coeff err {worst:.1e} < 1e-9", worst < 1e-9)


def test_3_oracle_agreement():
    with Criterion(3, "near-diagonal oracle agreement", 180) as c:
        s = bergman_symbol(perturbed_weight(), J=3)
        rep = compare_report(s, [1 / 20, 1 / 40, 1 / 80], near_diagonal_pairs(), N=40)
        E = rep.E
        c.check("E = [" + ", ".join(f"{e:.2e}" for e in E) + "] strictly decreasing", rep.monotone)
        c.check(f"rate {rep.fit['slope']:.4f} > 0", rep.fit["slope"] > 0)
        c.check(f"R2 {rep.fit['r2']:.3f} > 0.9", rep.fit["r2"] > 0.9)
        c.check(f"E(1/80) {E[-1]:.1e} < 1e-3", E[-1] < 1e-3)


def test_4_coercivity_and_decay():
    with Criterion(4, "coercivity and Gaussian decay", 60) as c:
        weights = [bargmann_weight(), perturbed_weight(), fubini_study_weight(),
                   quadratic_weight([[0.5]], [[0.3 - 0.1j]])]
        for w in weights:
            lo = coercivity_check(polarize(w), w, 0.2).c_lo
            c.check(f"c_lo({w.name}) = {lo:.3f} > 0", lo > 0)
        hbar = 0.05
        for w in (bargmann_weight(), perturbed_weight()):
            s = bergman_symbol(w, J=3)
            pairs = off_diagonal_pairs(complex(w.base[0]), radius=0.3, seps=(0.1, 0.2, 0.3, 0.4))
            fit = decay_fit(lambda X, Y: kernel_eval(s, hbar, X, Y, gauge=True), pairs, hbar)
            m_lo, m_hi = w.levi_range(0.6)
            c.check(f"decay slope({w.name}) {fit.slope:.4f} in [{m_lo - 0.2:.3f}, {m_hi + 0.2:.3f}]",
                    m_lo - 0.2 <= fit.slope <= m_hi + 0.2)


def test_5_projection_properties():
    with Criterion(5, "discretized projection", 180) as c:
        w = perturbed_weight()
        s = bergman_symbol(w, J=3)
        R = min(1.6, s.radius)
        r_in = 0.5 * R
        grid = GridSpec(R)
        chi = ChiSpec(0.9 * R)
        hbars = [0.2, 0.1, 0.05]
        herm, repro, dist = [], [], []
        for h in hbars:
            P = projection_matrix(s, grid, h, chi)
            herm.append(P.hermitian_defect())
            repro.append(max(P.reproducing_defect(j, r_in) for j in range(7)))
            Po = oracle_projection(gram_matrix(w, h, N=40), grid, w)
            mask = P.interior(r_in)
            dist.append(float(np.linalg.norm((P.M - Po.M)[np.ix_(mask, mask)], 2)))
        c.check(f"Hermitian defect {max(herm):.1e} < 1e-6", max(herm) < 1e-6)
        slope = float(np.polyfit(1 / np.array(hbars), np.log(repro), 1)[0])
        c.check("reproducing defect [" + ", ".join(f"{v:.1e}" for v in repro)
                + f"] decreasing, log-slope {slope:.3f} < 0",
                all(repro[i + 1] < repro[i] for i in range(2)) and slope < 0)
        c.check("|P - P_oracle| on interior [" + ", ".join(f"{v:.1e}" for v in dist) + "] decreasing",
                all(dist[i + 1] < dist[i] for i in range(2)))


def test_6_cp1():
    with Criterion(6, "CP1 desk model", 30) as c:
        res = cp1_study(range(1, 21), fit_from=8)
        c.check("dim = k+1 for k <= 20", res.dims == [k + 1 for k in range(1, 21)])
        spread = max(res.density_spread)
        c.check(f"density spread {spread:.1e} < 1e-10", spread < 1e-10)
        c.check(f"c0 k + c1 fit residual {res.fit_residual:.1e} < 1%", res.fit_residual < 0.01)
        ks = np.arange(1, 21)
        below = bool(np.all(np.array(res.offdiag) <= np.exp(-ks / res.C_hat) * (1 + 1e-12)))
        c.check(f"off-diagonal below exp(-k/C), C = {res.C_hat:.4f} finite",
                math.isfinite(res.C_hat) and below)


def test_7_growth():
    with Criterion(7, "coefficient growth", 60) as c:
        s = bergman_symbol(perturbed_weight(), J=6)
        fit = growth_fit(s.a, radius=0.1, seed=0)
        c.check(f"p = {fit.p:.3f} <= 1.3", not fit.degenerate and fit.p <= 1.3)


def test_8_u_half_group_law():
    with Criterion(8, "U_t group law and termination", 5) as c:
        rng = np.random.default_rng(3)
        base = (0j, 0j, 0j)
        cap, J = 6, 3
        lay = layout(3, cap)
        theta_deg = lay.exps[:, 2]
        worst, term = 0.0, True
        for d in range(4):
            for t in (0.5, 0.3, -1.2):
                coef = rng.normal(size=lay.size) + 1j * rng.normal(size=lay.size)
                coef[theta_deg > d] = 0
                s0 = Jet(3, base, cap, coef)
                s = HbarSymbol((s0,) + tuple(Jet.zeros(3, base, cap) for _ in range(J)))
                fwd = u_half_apply(s, t)
                back = u_half_apply(fwd, -t)
                worst = max(worst, max(float(np.abs(u.coeffs - v.coeffs).max())
                                       for u, v in zip(back.terms, s.terms)))
                term &= all(fwd[j].max_abs() == 0 for j in range(d + 1, J + 1))
        c.check(f"U_t U_-t identity, max err {worst:.1e}", worst < 1e-12)
        c.check("expansion stops at the theta-degree", term)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))

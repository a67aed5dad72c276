"""Change of quantization between the Brg and complex Weyl pictures.

The chain implemented here is

    a(x, w)  --pi*-->  a(x, w)  on (x, y, w)
             --W*-->   a(x, w(x, y, theta))
             --*J~-->  J~(x, y, theta) a(x, w(x, y, theta))
             --U-->    exp(c hbar d_theta . (d_x - d_y)) (...)
             --gamma*--> restriction to y = x,

where ``theta(x, y, w)`` comes from writing ``2 (psi(x, w) - psi(y, w))``
as ``i (x - y) . theta`` (Kuranishi's trick) and ``w(x, y, theta)`` is its
inverse in ``w``.  The scalar ``c`` is :data:`WEYL_SHIFT`.

Jets in ``(x, y, w)`` and ``(x, y, theta)`` order their variables as
``x_1..x_n, y_1..y_n, w_1..w_n`` (resp. ``theta``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, EllipticityError, JetShapeError
from .series import (HbarSymbol, Jet, jet_compose, jet_derive, jet_invert_map,
                     jet_reciprocal, jet_translate, layout)
from .weight import Polarization

#: ``c`` in ``U_{1/2} = exp(c hbar d_theta . (d_x - d_y))``.  With
#: ``D = -i d`` the generator ``(i/(2 hbar)) hbar D_theta . (hbar D_y - hbar D_x)``
#: equals ``(i hbar / 2) d_theta . (d_x - d_y)``.  Quadratic weights cannot
#: detect ``c`` (their symbol is 1 for any value); the Gram oracle on a
#: cubic weight does, and only ``c = i/2`` makes its error decay.
WEYL_SHIFT = 0.5j


@dataclass(frozen=True)
class KuranishiData:
    """Jets of the Kuranishi factorization about ``(x0, x0, conj x0)``.

    Attributes
    ----------
    theta : tuple of Jet
        ``theta(x, y, w)``, ``n`` jets in ``3n`` variables.
    w_of : tuple of Jet
        ``w(x, y, theta)``, ``n`` jets about ``(x0, x0, theta0)``.
    jtilde : Jet
        ``J~(x, y, theta)``.
    theta0 : tuple of complex
        ``(2/i) d_x psi(x0, conj x0)``.
    theta_diag : tuple of Jet
        ``theta(x, x, w) = (2/i) d_x psi(x, w)``, jets in ``(x, w)``.
    """

    n: int
    cap: int
    psi: Jet
    theta: tuple
    w_of: tuple
    jtilde: Jet
    theta0: tuple
    theta_diag: tuple

    @property
    def xw_base(self):
        return self.psi.base

    @property
    def xyw_base(self):
        n = self.n
        b = self.psi.base
        return b[:n] + b[:n] + b[n:]

    @property
    def xyt_base(self):
        n = self.n
        b = self.psi.base
        return b[:n] + b[:n] + self.theta0

    @property
    def xt_base(self):
        return self.psi.base[: self.n] + self.theta0


def _det(M):
    """Determinant of a small square matrix of jets (Leibniz expansion)."""
    n = len(M)
    if n == 1:
        return M[0][0]
    if n == 2:
        return M[0][0] * M[1][1] - M[0][1] * M[1][0]
    acc = None
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        term = M[0][perm[0]]
        for i in range(1, n):
            term = term * M[i][perm[i]]
        term = term if inv % 2 == 0 else -term
        acc = term if acc is None else acc + term
    return acc


def _working_psi(p: Polarization, cap: int, extra: int) -> Jet:
    """psi at ``cap + extra``; a polynomial weight pads exactly."""
    return p.psi.with_cap(cap + extra, exact=p.exact and p.psi.reliable == p.psi.cap)


def kuranishi_theta(p: Polarization, cap: int | None = None) -> tuple:
    """``theta(x, y, w) = (2/i) int_0^1 d_x psi((1-t) y + t x, w) dt``.

    Each monomial ``xi^alpha omega^beta`` of ``d_x psi`` is expanded
    binomially in ``xi -> (1-t) eta + t xi`` and integrated exactly with
    ``int_0^1 t^g (1-t)^(a-g) dt = g! (a-g)! / (a+1)!``.
    """
    n = p.n
    cap = p.psi.cap if cap is None else cap
    psi = _working_psi(p, cap, 1)
    base_xw = psi.base
    base = base_xw[:n] + base_xw[:n] + base_xw[n:]
    lay3 = layout(3 * n, cap)
    thetas = []
    for k in range(n):
        d = jet_derive(psi, k).with_cap(cap)
        out = np.zeros(lay3.size, dtype=complex)
        for alpha_beta, c in d.items():
            alpha = alpha_beta[:n]
            beta = alpha_beta[n:]
            a_tot = sum(alpha)
            for gamma in itertools.product(*[range(a + 1) for a in alpha]):
                g = sum(gamma)
                coef = math.prod(math.comb(a, gm) for a, gm in zip(alpha, gamma))
                coef *= math.factorial(g) * math.factorial(a_tot - g) / math.factorial(a_tot + 1)
                e = list(gamma) + [a - gm for a, gm in zip(alpha, gamma)] + list(beta)
                out[lay3.index(e)] += c * coef
        thetas.append(Jet(3 * n, base, cap, out * (2 / 1j), d.reliable))
    return tuple(thetas)


def invert_w(theta, n: int) -> tuple:
    """Solve ``theta = theta(x, y, w)`` for ``w`` with ``(x, y)`` passive.

    Inverts the map ``(x, y, w) -> (x, y, theta(x, y, w))`` in ``3n``
    variables and returns its last ``n`` components.
    """
    theta = list(theta)
    t0 = theta[0]
    coords = [Jet.coordinate(v, 3 * n, t0.base, t0.cap) for v in range(2 * n)]
    H = jet_invert_map(coords + theta)
    return tuple(H[2 * n:])


def _xy_coords(n, arity, base, cap, which="x"):
    off = 0 if which == "x" else n
    return [Jet.coordinate(off + v, arity, base, cap) for v in range(n)]


def jacobian_jtilde(p: Polarization, theta, w_of, cap: int) -> Jet:
    """``J~ = J(x, w(x,y,theta)) / det(d_w theta)(x, y, w(x,y,theta))``.

    ``J(x, w) = det((2/i) d_w d_x psi)``.
    """
    n = p.n
    psi = _working_psi(p, cap, 2)
    Jm = [[(jet_derive(jet_derive(psi, j), n + k) * (2 / 1j)).with_cap(cap)
           for k in range(n)] for j in range(n)]
    Jxw = _det(Jm)
    # one extra degree so that d_w theta stays exact up to cap
    theta_hi = kuranishi_theta(p, cap + 1)
    Dm = [[jet_derive(theta_hi[j], 2 * n + k).with_cap(cap) for k in range(n)]
          for j in range(n)]
    Dth = _det(Dm)
    xyt_base = w_of[0].base
    xs = _xy_coords(n, 3 * n, xyt_base, cap, "x")
    ys = _xy_coords(n, 3 * n, xyt_base, cap, "y")
    num = jet_compose(Jxw, xs + list(w_of))
    den = jet_compose(Dth, xs + ys + list(w_of))
    return num * jet_reciprocal(den)


def kuranishi_data(p: Polarization, cap: int | None = None) -> KuranishiData:
    """Build theta, its inverse in ``w`` and ``J~`` at working cap ``cap``."""
    n = p.n
    cap = p.psi.cap if cap is None else cap
    theta = kuranishi_theta(p, cap)
    w_of = invert_w(theta, n)
    jt = jacobian_jtilde(p, theta, w_of, cap)
    psi = _working_psi(p, cap, 1)
    diag = tuple((jet_derive(psi, k) * (2 / 1j)).with_cap(cap) for k in range(n))
    theta0 = tuple(complex(t.coeffs[0]) for t in theta)
    return KuranishiData(n=n, cap=cap, psi=psi.with_cap(cap), theta=theta, w_of=w_of,
                         jtilde=jt, theta0=theta0, theta_diag=diag)


# ---------------------------------------------------------------------------
# U_t


def weyl_generator(f: Jet, n: int) -> Jet:
    """``d_theta . (d_x - d_y) f`` for a jet in ``(x, y, theta)``."""
    acc = None
    for k in range(n):
        d = jet_derive(f, 2 * n + k)
        term = jet_derive(d, k) - jet_derive(d, n + k)
        acc = term if acc is None else acc + term
    return acc


def u_half_apply(s: HbarSymbol, t: float = 0.5, degree: int | None = None,
                 n: int | None = None) -> HbarSymbol:
    """Apply ``U_t = exp(2 t c hbar d_theta . (d_x - d_y))`` to ``s``.

    With ``t = 1/2`` this is ``U_{1/2}`` with ``c = WEYL_SHIFT``.  The
    result is truncated at the order of ``s``.

    Parameters
    ----------
    s : HbarSymbol
        Symbol in ``(x, y, theta)``, arity ``3n``.
    t : float
        Flow parameter; ``U_t U_{-t} = 1``.
    degree : int, optional
        Degree to which the output must be exact.  Each hbar order uses
        two derivatives, so ``reliable(s_j) - 2k >= degree`` is required for
        every contribution; otherwise :class:`BudgetError` is raised.
    """
    if n is None:
        if s.arity % 3:
            raise JetShapeError("u_half_apply needs a symbol in 3n variables")
        n = s.arity // 3
    c = 2 * t * WEYL_SHIFT
    J = s.J
    if degree is not None:
        worst = min(s.terms[j].reliable - 2 * (J - j) for j in range(J + 1))
        if worst < degree:
            raise BudgetError(
                f"cap budget too small: need reliable degree {degree} after "
                f"{J} hbar orders, have {worst}")
    powers = []
    for j in range(J + 1):
        row = [s.terms[j]]
        for _k in range(1, J - j + 1):
            row.append(weyl_generator(row[-1], n))
        powers.append(row)
    out = []
    for j in range(J + 1):
        acc = s.terms[j]
        for k in range(1, j + 1):
            acc = acc + powers[j - k][k] * (c ** k / math.factorial(k))
        out.append(acc)
    return HbarSymbol(tuple(out), s.order_m)


def u_half_moment(s: Jet, point, hbar: float, n: int | None = None) -> complex:
    """``U_{1/2} s`` at ``point`` from its oscillatory-integral form.

    ``U_{1/2} u (x, y, theta) = (pi hbar)^{-n} iint exp((2i/hbar) sigma . tau)
    u(x + sigma, y - sigma, theta + tau) dsigma dtau`` with the oscillatory
    moments ``(pi hbar)^{-1} iint e^{2 i s t / hbar} s^a t^b = delta_ab a! (i hbar/2)^a``.
    Only polynomial ``s`` make sense here (the stored coefficients are
    treated as the polynomial).
    """
    if n is None:
        n = s.arity // 3
    point = tuple(complex(v) for v in point)
    u = jet_translate(s, point)
    lay2 = layout(2 * n, s.cap)
    base2 = (0j,) * (2 * n)
    g = []
    for block, sign in ((0, 1.0), (1, -1.0), (2, 1.0)):
        for v in range(n):
            var = v if block < 2 else n + v
            c = np.zeros(lay2.size, dtype=complex)
            c[0] = point[block * n + v]
            c[1 + var] = sign
            g.append(Jet(2 * n, base2, s.cap, c))
    q = jet_compose(u, g)
    total = 0j
    for e, v in q.items():
        a, b = e[:n], e[n:]
        if a == b:
            total += v * math.prod(math.factorial(ai) for ai in a) * (0.5j * hbar) ** sum(a)
    return total


def kappa_t_matrix(n: int, t: float) -> np.ndarray:
    """Linear map of ``kappa_t`` on ``(x, y, theta; x*, y*, theta*)``."""
    I = np.eye(n)
    K = np.eye(6 * n)
    K[0:n, 5 * n:6 * n] = t * I
    K[n:2 * n, 5 * n:6 * n] = -t * I
    K[2 * n:3 * n, 3 * n:4 * n] = t * I
    K[2 * n:3 * n, 4 * n:5 * n] = -t * I
    return K


def kappa_t_apply(pt, t: float) -> np.ndarray:
    """``(x, y, th; x*, y*, th*) -> (x + t th*, y - t th*, th + t (x* - y*); x*, y*, th*)``."""
    pt = np.asarray(pt, dtype=complex)
    if pt.shape[-1] % 6:
        raise JetShapeError("phase-space points have 6n coordinates")
    n = pt.shape[-1] // 6
    return pt @ kappa_t_matrix(n, t).T


# ---------------------------------------------------------------------------
# symbol maps


def _check_symbol(a: HbarSymbol, arity: int, base, cap: int) -> HbarSymbol:
    if a.arity != arity:
        raise JetShapeError(f"symbol has arity {a.arity}, expected {arity}")
    if not np.allclose(a.base, base, atol=1e-12):
        raise JetShapeError(f"symbol base {a.base} differs from the expected {base}")
    if a.cap != cap:
        a = a.map(lambda t: t.with_cap(cap))
    return a


def _transport(a_j: Jet, k: KuranishiData) -> Jet:
    """``J~ (W* pi* a_j)``: a jet in ``(x, y, theta)``."""
    n = k.n
    xs = _xy_coords(n, 3 * n, k.xyt_base, k.cap, "x")
    return k.jtilde * jet_compose(a_j, xs + list(k.w_of))


def _restrict_diagonal(f: Jet, k: KuranishiData) -> Jet:
    """``gamma*``: set ``y = x`` in a jet on ``(x, y, theta)``."""
    n = k.n
    base = k.xt_base
    xs = [Jet.coordinate(v, 2 * n, base, k.cap) for v in range(n)]
    ts = [Jet.coordinate(n + v, 2 * n, base, k.cap) for v in range(n)]
    return jet_compose(f, xs + xs + ts)


def _pullback(r: Jet, k: KuranishiData) -> Jet:
    """``r(x, theta(x, x, w))``: from ``(x, theta)`` to ``(x, w)``."""
    n = k.n
    xs = [Jet.coordinate(v, 2 * n, k.xw_base, k.cap) for v in range(n)]
    return jet_compose(r, xs + list(k.theta_diag))


def _forward_orders(a: HbarSymbol, k: KuranishiData, J: int, skip_last: bool = False):
    """hbar-coefficients of ``gamma* U J~ W* pi* a`` up to order ``J``."""
    c = WEYL_SHIFT
    out = [None] * (J + 1)
    for j_a, a_j in enumerate(a.terms[: J + 1]):
        g = _transport(a_j, k)
        for m in range(0, J - j_a + 1):
            if m > 0:
                g = weyl_generator(g, k.n)
            term = _restrict_diagonal(g, k) * (c ** m / math.factorial(m))
            o = j_a + m
            out[o] = term if out[o] is None else out[o] + term
    return out


def symbol_forward(a: HbarSymbol, k: KuranishiData) -> HbarSymbol:
    """``b^w = gamma* U_{1/2} J~ W* pi* a``, an HbarSymbol in ``(x, theta)``."""
    n = k.n
    a = _check_symbol(a, 2 * n, k.xw_base, k.cap)
    out = _forward_orders(a, k, a.J)
    return HbarSymbol(tuple(out), a.order_m)


def symbol_invert(b: HbarSymbol, k: KuranishiData, degree: int | None = None,
                  tol: float = 1e-12) -> HbarSymbol:
    """Solve ``symbol_forward(a) = b`` order by order.

    ``a_0`` is the pullback of ``b_0`` by ``(x, w) -> (x, theta(x, x, w))``;
    at order ``j`` the pullback is applied to ``b_j`` minus the order-``j``
    part of ``symbol_forward(a_0 + ... + a_{j-1} hbar^{j-1})``.

    Raises
    ------
    EllipticityError
        If ``b_0`` vanishes at the base point.
    BudgetError
        If ``degree`` is given and ``cap - 2J < degree``.
    """
    n = k.n
    b = _check_symbol(b, 2 * n, k.xt_base, k.cap)
    if abs(b.terms[0].coeffs[0]) <= tol:
        raise EllipticityError("leading symbol vanishes at the base point")
    J = b.J
    if degree is not None and min(t.reliable for t in b.terms) - 2 * J < degree:
        raise BudgetError(f"cap {k.cap} cannot give degree {degree} at order {J}")
    c = WEYL_SHIFT
    a_terms = []
    # chains[i] holds the latest P^m (J~ W* a_i)
    chains = []
    for j in range(J + 1):
        r = b.terms[j]
        for i in range(j):
            m = j - i
            chains[i] = weyl_generator(chains[i], n)
            r = r - _restrict_diagonal(chains[i], k) * (c ** m / math.factorial(m))
        a_j = _pullback(r, k)
        a_terms.append(a_j)
        if j < J:
            chains.append(_transport(a_j, k))
    return HbarSymbol(tuple(a_terms), b.order_m)


__all__ = [
    "WEYL_SHIFT", "KuranishiData", "kuranishi_theta", "invert_w", "jacobian_jtilde",
    "kuranishi_data", "weyl_generator", "u_half_apply", "u_half_moment",
    "kappa_t_matrix", "kappa_t_apply", "symbol_forward", "symbol_invert",
]

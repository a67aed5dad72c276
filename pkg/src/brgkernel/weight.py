"""Weights, their polarizations and the exactly solvable quadratic model.

A weight ``Phi`` on C^n is stored as a jet in the 2n variables
``(zeta, zetabar)`` about ``(x0, conj(x0))``.  Real-valuedness is the
Hermitian symmetry ``coeff(a, b) = conj(coeff(b, a))`` of its table.
Replacing ``zetabar`` by an independent variable ``w`` gives the
holomorphic polarization ``psi(x, w)`` with ``psi(x, conj(x)) = Phi(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import CoercivityError, RadiusError, WeightError
from .series import HbarSymbol, Jet, jet_derive

SYMMETRY_TOL = 1e-12
DEFAULT_MAX_RADIUS = 10.0


def _swap_halves(exps, n):
    return np.concatenate([exps[:, n:], exps[:, :n]], axis=1)


class Weight:
    """Real-analytic weight ``Phi`` given by a finite ``(z, zbar)`` table.

    Parameters
    ----------
    phi : Jet
        Jet in ``2n`` variables about ``(x0, conj(x0))``.
    name : str
        Identifier used in reports.
    exact : bool
        Whether the table is the weight itself (a polynomial) rather than a
        truncated Taylor series.  Only affects the reliable radius.
    """

    def __init__(self, phi: Jet, name: str = "weight", exact: bool = True,
                 max_radius: float = DEFAULT_MAX_RADIUS):
        if phi.arity % 2:
            raise WeightError("a weight jet needs an even number of variables")
        n = phi.arity // 2
        x0 = np.array(phi.base[:n])
        if not np.allclose(np.array(phi.base[n:]), np.conj(x0), atol=1e-14):
            raise WeightError("the zbar half of the base must be conj(x0)")
        self.n = n
        self.base = tuple(complex(b) for b in x0)
        self.phi = phi
        self.name = name
        self.exact = exact
        self.max_radius = max_radius
        self._check_symmetry()
        self.levi_m = levi_check(self)

    # construction -----------------------------------------------------------

    @classmethod
    def from_table(cls, n, base, cap, table, name="weight", exact=True, **kw):
        """``table`` maps ``(a, b)`` (z- and zbar-exponents) to coefficients."""
        base = tuple(complex(b) for b in base)
        flat = {}
        for (a, b), v in table.items():
            a, b = tuple(a), tuple(b)
            if len(a) != n or len(b) != n:
                raise WeightError(f"index pair {a}, {b} does not match n = {n}")
            flat[a + b] = flat.get(a + b, 0) + v
        full_base = base + tuple(np.conj(base))
        phi = Jet.from_table(flat, 2 * n, full_base, cap)
        return cls(phi, name=name, exact=exact, **kw)

    @classmethod
    def from_dict(cls, d: dict, name=None) -> "Weight":
        n = int(d["n"])
        base = [complex(re, im) for re, im in d.get("base", [[0.0, 0.0]] * n)]
        cap = int(d["cap"])
        table = {}
        for e in d["phi"]:
            key = (tuple(int(v) for v in e["a"]), tuple(int(v) for v in e["b"]))
            if sum(key[0]) + sum(key[1]) > cap:
                raise WeightError(f"index pair {key} exceeds cap {cap}")
            table[key] = table.get(key, 0) + complex(float(e.get("re", 0.0)), float(e.get("im", 0.0)))
        return cls.from_table(n, base, cap, table, name=name or d.get("name", "weight"),
                              exact=bool(d.get("exact", True)))

    def to_dict(self) -> dict:
        n = self.n
        rows = [{"a": list(al[:n]), "b": list(al[n:]), "re": v.real, "im": v.imag}
                for al, v in self.phi.items()]
        return {"name": self.name, "n": n, "base": [[b.real, b.imag] for b in self.base],
                "cap": self.phi.cap, "exact": self.exact, "phi": rows}

    # invariants -------------------------------------------------------------

    def _check_symmetry(self):
        lay = self.phi.layout
        mirror = lay.lookup(_swap_halves(lay.exps, self.n))
        c = self.phi.coeffs
        bad = np.abs(c - np.conj(c[mirror])) > SYMMETRY_TOL * max(1.0, np.abs(c).max())
        if bad.any():
            i = int(np.nonzero(bad)[0][0])
            e = lay.exps[i]
            a, b = tuple(int(v) for v in e[: self.n]), tuple(int(v) for v in e[self.n:])
            raise WeightError(
                f"Hermitian symmetry violated at index pair a={a}, b={b}: "
                f"coeff(a,b)={complex(c[i])}, coeff(b,a)={complex(c[mirror[i]])}")

    # evaluation -------------------------------------------------------------

    @property
    def full_base(self):
        return self.phi.base

    def value(self, z) -> np.ndarray:
        """``Phi(z)`` for ``z`` of shape ``(n,)`` or ``(P, n)``."""
        z = np.asarray(z, dtype=complex)
        single = z.ndim == 1
        z = z.reshape(-1, self.n)
        v = self.phi.evaluate(np.concatenate([z, np.conj(z)], axis=1)).real
        return v[0] if single else v

    def levi_matrix(self, z=None) -> np.ndarray:
        """Levi matrix ``d^2 Phi / dz_j dzbar_k`` at ``z`` (default: the base)."""
        n = self.n
        if z is None:
            M = np.empty((n, n), dtype=complex)
            for j in range(n):
                for k in range(n):
                    e = [0] * (2 * n)
                    e[j] += 1
                    e[n + k] += 1
                    M[j, k] = self.phi.coeff(e)
            return M
        z = np.asarray(z, dtype=complex).reshape(-1, n)
        pts = np.concatenate([z, np.conj(z)], axis=1)
        out = np.empty((len(z), n, n), dtype=complex)
        for j in range(n):
            dj = jet_derive(self.phi, j)
            for k in range(n):
                out[:, j, k] = jet_derive(dj, n + k).evaluate(pts)
        return out

    def levi_range(self, radius, samples=512, seed=0) -> tuple[float, float]:
        """Smallest and largest Levi eigenvalues sampled over ``B(x0, radius)``."""
        pts = ball_points(self.base, radius, samples, seed)
        ev = np.linalg.eigvalsh(self.levi_matrix(pts))
        return float(ev.min()), float(ev.max())

    @property
    def radius(self) -> float:
        """Radius of the ball on which the weight's jet is trusted."""
        if self.exact:
            return self.max_radius
        return min(self.max_radius, 0.5 * self.phi.radius_estimate(default=2 * self.max_radius))

    def is_quadratic(self) -> bool:
        return self.phi.degree() <= 2

    def __repr__(self):
        return f"Weight(name={self.name!r}, n={self.n}, cap={self.phi.cap}, m={self.levi_m:.4g})"


@dataclass(frozen=True)
class Polarization:
    """Holomorphic extension ``psi(x, w)`` of a weight."""

    psi: Jet
    n: int
    exact: bool = True

    def value(self, x, w) -> np.ndarray:
        x = np.asarray(x, dtype=complex).reshape(-1, self.n)
        w = np.asarray(w, dtype=complex).reshape(-1, self.n)
        return self.psi.evaluate(np.concatenate([x, w], axis=1))

    def matrix(self, xs, ws) -> np.ndarray:
        """``psi(x_i, w_j)`` for all pairs."""
        return self.psi.bilinear(xs, ws, self.n)

    def restrict_diagonal(self) -> Jet:
        """Coefficients of ``psi(x, conj(x))`` as a ``(z, zbar)`` table."""
        return self.psi

    def is_symmetric(self, tol=SYMMETRY_TOL) -> bool:
        lay = self.psi.layout
        mirror = lay.lookup(_swap_halves(lay.exps, self.n))
        c = self.psi.coeffs
        return bool(np.all(np.abs(c - np.conj(c[mirror])) <= tol))


def polarize(w: Weight) -> Polarization:
    """Rename ``zetabar`` to the holomorphic variable ``w``.

    The coefficient table is reused unchanged; the expansion point becomes
    ``(x0, conj(x0))`` in ``(x, w)``.
    """
    return Polarization(w.phi, w.n, w.exact)


def levi_check(w: Weight) -> float:
    """Smallest eigenvalue of the Levi matrix at the base point.

    Raises
    ------
    WeightError
        If the weight is not strictly plurisubharmonic at the base.
    """
    M = w.levi_matrix()
    M = 0.5 * (M + M.conj().T)
    m = float(np.linalg.eigvalsh(M).min())
    if m <= 0:
        raise WeightError(f"Levi form is not positive definite at the base (min eigenvalue {m:.3g})")
    return m


def ball_points(center, radius, samples, seed=0) -> np.ndarray:
    """Deterministic quasi-random points filling ``B(center, radius)`` in C^n."""
    n = len(center)
    sob = qmc.Sobol(d=2 * n, scramble=True, seed=seed)
    pts = []
    count = 0
    while count < samples:
        u = 2.0 * sob.random(max(64, 2 * samples)) - 1.0
        u = u[(u ** 2).sum(axis=1) <= 1.0]
        pts.append(u)
        count += len(u)
    u = np.concatenate(pts)[:samples]
    return np.array(center) + radius * (u[:, :n] + 1j * u[:, n:])


@dataclass(frozen=True)
class CoercivityResult:
    c_lo: float
    c_hi: float
    argmin: tuple
    samples: int


def phase_gap(p: Polarization, w: Weight, x, y) -> np.ndarray:
    """``Q(x, y) = Phi(x) + Phi(y) - 2 Re psi(x, conj(y))`` pairwise."""
    return w.value(x) + w.value(y) - 2.0 * p.value(x, np.conj(y)).real


def coercivity_check(p: Polarization, w: Weight, r: float, N: int = 512,
                     seed: int = 0) -> CoercivityResult:
    """Range of ``Q(x, y)/|x - y|^2`` over sampled pairs in ``B(x0, r)^2``.

    Raises
    ------
    RadiusError
        If ``r`` exceeds the weight's reliable radius.
    CoercivityError
        If the ratio is not positive somewhere; the offending pair is
        attached to the exception.
    """
    if r > w.radius:
        raise RadiusError(f"radius {r} exceeds the reliable radius {w.radius:.4g}")
    n = w.n
    pts = ball_points(tuple(w.base) * 2, r, N, seed)
    x = pts[:, :n]
    y = pts[:, n:]
    # the 2n-ball sample puts both points inside B(x0, r)
    d2 = (np.abs(x - y) ** 2).sum(axis=1)
    keep = d2 > 1e-18
    x, y, d2 = x[keep], y[keep], d2[keep]
    ratio = phase_gap(p, w, x, y) / d2
    i = int(np.argmin(ratio))
    pair = (tuple(x[i]), tuple(y[i]))
    if ratio[i] <= 0:
        raise CoercivityError(
            f"Q/|x-y|^2 = {ratio[i]:.3g} <= 0 at x={pair[0]}, y={pair[1]}", pair)
    return CoercivityResult(float(ratio.min()), float(ratio.max()), pair, int(len(ratio)))


# ---------------------------------------------------------------------------
# standard weights


def bargmann_weight(n: int = 1, scale: float = 0.5) -> Weight:
    """``Phi = scale * |z|^2`` on C^n."""
    table = {}
    for j in range(n):
        e = [0] * n
        e[j] = 1
        table[(tuple(e), tuple(e))] = scale
    return Weight.from_table(n, [0] * n, 2, table, name="bargmann" if n == 1 else f"bargmann{n}")


def perturbed_weight(eps: float = 0.1) -> Weight:
    """``Phi = |z|^2/2 + eps (z^2 zbar + z zbar^2)/2`` on C, i.e. ``r^2/2 + eps r^3 cos t``."""
    table = {((1,), (1,)): 0.5, ((2,), (1,)): eps / 2, ((1,), (2,)): eps / 2}
    return Weight.from_table(1, [0], 3, table, name=f"cubic_eps{eps:g}")


def fubini_study_weight(cap: int = 16) -> Weight:
    """Taylor table of ``Phi = log(1 + |z|^2)/2`` truncated at total degree ``cap``."""
    table = {((k,), (k,)): 0.5 * (-1) ** (k + 1) / k for k in range(1, cap // 2 + 1)}
    return Weight.from_table(1, [0], cap, table, name=f"fubini_study_cap{cap}", exact=False)


def quadratic_weight(levi, holo=None, base=None, name="quadratic") -> Weight:
    """``Phi = zbar^T L z + Re(z^T Q z)`` about ``base`` (local coordinates)."""
    L = np.atleast_2d(np.asarray(levi, dtype=complex))
    n = L.shape[0]
    Q = np.zeros((n, n), dtype=complex) if holo is None else np.atleast_2d(np.asarray(holo, dtype=complex))
    Q = 0.5 * (Q + Q.T)
    base = [0] * n if base is None else base
    table: dict = {}

    def put(a, b, v):
        key = (tuple(a), tuple(b))
        table[key] = table.get(key, 0) + v

    for j in range(n):
        for k in range(n):
            a = [0] * n
            b = [0] * n
            a[j] += 1
            b[k] += 1
            put(a, b, L[j, k])
            a2 = [0] * n
            a2[j] += 1
            a2[k] += 1
            put(a2, [0] * n, Q[j, k] / 2)
            put([0] * n, a2, np.conj(Q[j, k]) / 2)
    return Weight.from_table(n, base, 2, table, name=name)


# ---------------------------------------------------------------------------
# quadratic model


@dataclass(frozen=True)
class QuadraticModel:
    """Holomorphic quadratic FBI phase ``phi(z, x)``.

    ``phi = z^T A z / 2 + x^T B z + x^T C x / 2`` with ``A = phi_zz``,
    ``B[j, k] = d^2 phi / dx_j dz_k`` and ``C = phi_xx``.
    """

    phi_xx: np.ndarray
    phi_xz: np.ndarray
    phi_zz: np.ndarray

    def __post_init__(self):
        for name in ("phi_xx", "phi_xz", "phi_zz"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=complex)))
        C = self.phi_xx
        if not np.allclose(C, C.T) or not np.allclose(self.phi_zz, self.phi_zz.T):
            raise WeightError("phi_xx and phi_zz must be symmetric")
        if np.linalg.eigvalsh(0.5 * (C.imag + C.imag.T)).min() <= 0:
            raise WeightError("Im phi_xx is not positive definite")
        if abs(np.linalg.det(self.phi_xz)) < 1e-14:
            raise WeightError("phi_xz is singular")

    @property
    def n(self) -> int:
        return self.phi_xx.shape[0]

    def phase(self, z, x):
        z = np.asarray(z, dtype=complex)
        x = np.asarray(x, dtype=complex)
        return 0.5 * z @ self.phi_zz @ z + x @ self.phi_xz @ z + 0.5 * x @ self.phi_xx @ x

    def c_phi(self) -> float:
        n = self.n
        return float(abs(np.linalg.det(self.phi_xz))
                     / (2 ** (n / 2) * math.pi ** (3 * n / 4) * np.linalg.det(self.phi_xx.imag) ** 0.25))

    def kappa(self) -> np.ndarray:
        """Matrix of ``kappa_phi: (x, xi) -> (z, zeta)``.

        ``xi = -d_x phi(z, x)`` and ``zeta = d_z phi(z, x)``.
        """
        A, B, C = self.phi_zz, self.phi_xz, self.phi_xx
        Binv = np.linalg.inv(B)
        n = self.n
        K = np.zeros((2 * n, 2 * n), dtype=complex)
        K[:n, :n] = -Binv @ C
        K[:n, n:] = -Binv
        K[n:, :n] = B.T - A @ Binv @ C
        K[n:, n:] = -A @ Binv
        return K


def fbi_phase_to_weight(q: QuadraticModel) -> tuple[Weight, float]:
    """Weight ``Phi(z) = max_x -Im phi(z, x)`` of a quadratic phase and ``c_phi``.

    With ``C = phi_xx`` the critical point is ``x* = -(Im C)^{-1} Im(B z)``,
    which gives ``Phi = -Im(z^T A z)/2 + Im(Bz)^T (Im C)^{-1} Im(Bz) / 2``.
    """
    n = q.n
    A, B, C = q.phi_zz, q.phi_xz, q.phi_xx
    S = np.linalg.inv(C.imag)
    # Im(Bz) = (Bz - conj(B) zbar)/(2i); expand the quadratic form in (z, zbar)
    P = B / 2j
    Pc = -np.conj(B) / 2j
    # Phi = -(z^T A z - zbar^T Abar zbar)/(4i) + (Pz + Pc zbar)^T S (Pz + Pc zbar)/2
    zz = -A / 4j + 0.5 * P.T @ S @ P
    bb = np.conj(A) / 4j + 0.5 * Pc.T @ S @ Pc
    zb = P.T @ S @ Pc  # coefficient of z_j zbar_k
    table: dict = {}
    for j in range(n):
        for k in range(n):
            a = [0] * n
            b = [0] * n
            a[j] += 1
            b[k] += 1
            key = (tuple(a), tuple(b))
            table[key] = table.get(key, 0) + zb[j, k]
            a2 = [0] * n
            a2[j] += 1
            a2[k] += 1
            key = (tuple(a2), (0,) * n)
            table[key] = table.get(key, 0) + zz[j, k]
            key = ((0,) * n, tuple(a2))
            table[key] = table.get(key, 0) + bb[j, k]
    # symmetrize rounding noise so the Hermitian check sees exact conjugates
    lay_table = {}
    for (a, b), v in table.items():
        v2 = table.get((b, a), 0)
        lay_table[(a, b)] = 0.5 * (v + np.conj(v2))
    w = Weight.from_table(n, [0] * n, 2, lay_table, name="fbi_quadratic")
    return w, q.c_phi()


def quadratic_exact_kernel(w: Weight, hbar: float, x, y) -> np.ndarray:
    """Exact Bergman kernel density of a quadratic weight.

    ``(2^n det(L) / (pi hbar)^n) * exp(2 (psi(x, conj y) - Phi(y)) / hbar)``
    where ``L`` is the (constant) Levi matrix.  Accepts single points or
    matching batches of points.
    """
    if not w.is_quadratic():
        raise WeightError("quadratic_exact_kernel needs a weight of degree at most 2")
    n = w.n
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    single = x.ndim <= 1 and x.size == n
    x = x.reshape(-1, n)
    y = y.reshape(-1, n)
    p = polarize(w)
    det = np.linalg.det(w.levi_matrix()).real
    pref = 2 ** n * det / (math.pi * hbar) ** n
    out = pref * np.exp(2.0 * (p.value(x, np.conj(y)) - w.value(y)) / hbar)
    return out[0] if single else out


def _heat_operator(f: Jet, w: Weight) -> Jet:
    n = w.n
    Minv = np.linalg.inv(w.levi_matrix())
    acc = None
    for l in range(n):
        for j in range(n):
            if Minv[l, j] == 0:
                continue
            term = jet_derive(jet_derive(f, j), n + l) * Minv[l, j]
            acc = term if acc is None else acc + term
    return acc if acc is not None else f * 0


def _heat(f: HbarSymbol, w: Weight, sign: float) -> HbarSymbol:
    if not w.is_quadratic():
        raise WeightError("heat maps are defined for quadratic weights only")
    if f.arity != 2 * w.n:
        raise WeightError("symbol must live in the (z, zbar) variables of the weight")
    J = f.J
    out = []
    for j in range(J + 1):
        acc = f.terms[j]
        for k in range(1, j + 1):
            g = f.terms[j - k]
            for _ in range(k):
                g = _heat_operator(g, w)
            acc = acc + g * ((sign / 4.0) ** k / math.factorial(k))
        out.append(acc)
    return HbarSymbol(tuple(out), f.order_m)


def heat_toeplitz_to_weyl(f: HbarSymbol, w: Weight) -> HbarSymbol:
    """Apply ``exp((hbar/4) <L^{-1} d_z, d_zbar>)`` order by order in hbar."""
    return _heat(f, w, +1.0)


def heat_weyl_to_toeplitz(b: HbarSymbol, w: Weight) -> HbarSymbol:
    """Formal inverse of :func:`heat_toeplitz_to_weyl`."""
    return _heat(b, w, -1.0)


__all__ = [
    "Weight", "Polarization", "polarize", "levi_check", "coercivity_check",
    "CoercivityResult", "phase_gap", "ball_points", "bargmann_weight",
    "perturbed_weight", "fubini_study_weight", "quadratic_weight", "QuadraticModel",
    "fbi_phase_to_weight", "quadratic_exact_kernel", "heat_toeplitz_to_weyl",
    "heat_weyl_to_toeplitz",
]

"""Bergman symbol, truncated kernel and the cutoff projection on a grid.

The kernel of the Brg quantization of a symbol ``a`` is

    k(x, y) = (2/(pi hbar))^n exp(2 (psi(x, ybar) - Phi(y)) / hbar)
              a(x, ybar) det(d_x d_w psi)(x, ybar)

against Lebesgue measure, and the Bergman symbol is the ``a`` whose Weyl
symbol is 1.  Kernels are also offered in the bounded *gauge* form
``exp(-(Phi(x) + Phi(y))/hbar) K(x, ybar)`` with ``K = k exp(2 Phi(y)/hbar)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import BudgetError, GridError, RadiusError
from .quantize import WEYL_SHIFT, KuranishiData, kuranishi_data, symbol_invert
from .series import HbarSymbol, Jet, jet_derive, truncation_orders
from .weight import Polarization, Weight, polarize

DEFAULT_DEGREE = 6


@dataclass(frozen=True)
class BergmanSymbol:
    """Bergman symbol ``a(x, w; hbar)`` of a weight.

    Attributes
    ----------
    weight : Weight
    a : HbarSymbol
        Jets in ``(x, w)`` about ``(x0, conj x0)``; ``a[j]`` holds only its
        trusted coefficients.
    J : int
    provenance : dict
        Cap budget, degrees and convention constants used.
    """

    weight: Weight
    a: HbarSymbol
    J: int
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.weight.n

    @property
    def polarization(self) -> Polarization:
        return polarize(self.weight)

    @property
    def det_jet(self) -> Jet:
        """``det(d_x d_w psi)`` as a jet in ``(x, w)``."""
        return _det_mixed(self.weight, self.a.cap)

    @property
    def radius(self) -> float:
        """Radius around ``x0`` inside which kernel evaluation is trusted."""
        est = [t.radius_estimate(default=np.inf) for t in self.a.terms[1:]]
        est = [e for e in est if np.isfinite(e)]
        r = 0.5 * min(est) if est else np.inf
        return float(min(self.weight.radius, r))

    def symmetry_defect(self) -> float:
        """Largest ``|a_j(x, w) - conj(a_j(wbar, xbar))|`` over coefficients."""
        n = self.n
        worst = 0.0
        for t in self.a.terms:
            lay = t.layout
            swapped = np.concatenate([lay.exps[:, n:], lay.exps[:, :n]], axis=1)
            mirror = lay.lookup(swapped)
            worst = max(worst, float(np.abs(t.coeffs - np.conj(t.coeffs[mirror])).max()))
        return worst

    def to_dict(self) -> dict:
        return {"weight": self.weight.to_dict(), "J": self.J, "a": self.a.to_dict(),
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "BergmanSymbol":
        return cls(Weight.from_dict(d["weight"]), HbarSymbol.from_dict(d["a"]), int(d["J"]),
                   dict(d.get("provenance", {})))


def _det_mixed(w: Weight, cap: int) -> Jet:
    n = w.n
    psi = w.phi.with_cap(cap + 2, exact=w.exact)
    M = [[jet_derive(jet_derive(psi, j), n + k).with_cap(cap) for k in range(n)]
         for j in range(n)]
    if n == 1:
        return M[0][0]
    from .quantize import _det
    return _det(M)


def bergman_symbol(w: Weight, J: int, degree: int = DEFAULT_DEGREE,
                   cap: int | None = None, kdata: KuranishiData | None = None) -> BergmanSymbol:
    """Bergman symbol of ``w`` to order ``J``, exact up to total degree ``degree``.

    Solves ``symbol_forward(a) = 1`` order by order.  Each order consumes two
    degrees, so the working cap must be at least ``degree + 2J``.

    Raises
    ------
    BudgetError
        If ``cap < degree + 2J``.
    """
    need = degree + 2 * J
    cap = need if cap is None else cap
    if cap < need:
        raise BudgetError(f"cap {cap} < degree {degree} + 2J = {need}")
    p = polarize(w)
    k = kuranishi_data(p, cap) if kdata is None else kdata
    one = HbarSymbol.constant(1.0, 2 * w.n, k.xt_base, cap, J)
    a = symbol_invert(one, k, degree=degree)
    a = a.map(lambda t: t.trusted())
    a0_err = float(np.abs(a.terms[0].coeffs - np.eye(1, a.terms[0].coeffs.size)[0]).max())
    prov = {
        "cap": cap, "degree": degree, "J": J,
        "reliable": [t.reliable for t in a.terms],
        "weyl_shift_c": [WEYL_SHIFT.real, WEYL_SHIFT.imag],
        "a0_defect": a0_err,
    }
    s = BergmanSymbol(w, a, J, prov)
    prov["symmetry_defect"] = s.symmetry_defect()
    return s


def truncate_aC(s: BergmanSymbol, hbar: float, C: float | None = None,
                rule: str = "half") -> tuple[Jet, bool]:
    """Partial sum ``sum_{j <= 1/(2 C hbar)} a_j hbar^j``.

    ``rule="e"`` uses ``1/(e C hbar)`` instead.  With ``C=None`` the whole
    stored expansion is used.  The flag is ``True`` when the full expansion
    was used because the rule asked for at least ``J`` orders.
    """
    if C is None:
        jmax, flagged = s.J, True
    else:
        jmax, flagged = truncation_orders(hbar, C, s.J, rule)
    acc = s.a.terms[0]
    for j in range(1, jmax + 1):
        acc = acc + s.a.terms[j] * hbar ** j
    return acc, flagged


def _check_radius(s: BergmanSymbol, *pts):
    r = s.radius
    x0 = np.array(s.weight.base)
    for p in pts:
        d = np.sqrt((np.abs(np.asarray(p).reshape(-1, s.n) - x0) ** 2).sum(axis=1))
        if d.size and d.max() > r * (1 + 1e-12):
            raise RadiusError(f"point at distance {d.max():.4g} outside the reliable radius {r:.4g}")


def kernel_eval(s: BergmanSymbol, hbar: float, x, y, C: float | None = None,
                gauge: bool = False, check: bool = True):
    """Brg kernel of the (truncated) Bergman symbol at matching point batches.

    Parameters
    ----------
    s : BergmanSymbol
    hbar : float
    x, y : array_like
        Points of shape ``(n,)`` or ``(P, n)``.
    C : float, optional
        Truncation constant for :func:`truncate_aC`; ``None`` keeps all orders.
    gauge : bool
        Return ``exp(-(Phi(x) + Phi(y))/hbar) K(x, ybar)`` instead of ``k(x, y)``.
    """
    n = s.n
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    single = x.ndim <= 1 and x.size == n
    x = x.reshape(-1, n)
    y = y.reshape(-1, n)
    if check:
        _check_radius(s, x, y)
    aC, _ = truncate_aC(s, hbar, C)
    w = s.weight
    p = s.polarization
    xw = np.concatenate([x, np.conj(y)], axis=1)
    psi = p.psi.evaluate(xw)
    amp = aC.evaluate(xw) * s.det_jet.evaluate(xw) * (2.0 / (math.pi * hbar)) ** n
    if gauge:
        out = amp * np.exp((2.0 * psi - w.value(x) - w.value(y)) / hbar)
    else:
        out = amp * np.exp(2.0 * (psi - w.value(y)) / hbar)
    return out[0] if single else out


def kernel_matrix(s: BergmanSymbol, hbar: float, xs, ys, C: float | None = None,
                  check: bool = True) -> np.ndarray:
    """Gauge kernel ``exp(-(Phi(x_i)+Phi(y_j))/hbar) K(x_i, conj y_j)`` for all pairs."""
    n = s.n
    xs = np.asarray(xs, dtype=complex).reshape(-1, n)
    ys = np.asarray(ys, dtype=complex).reshape(-1, n)
    if check:
        _check_radius(s, xs, ys)
    aC, _ = truncate_aC(s, hbar, C)
    w = s.weight
    ysb = np.conj(ys)
    psi = s.polarization.matrix(xs, ysb)
    amp = aC.bilinear(xs, ysb, n) * s.det_jet.bilinear(xs, ysb, n)
    expo = (2.0 * psi - w.value(xs)[:, None] - w.value(ys)[None, :]) / hbar
    return (2.0 / (math.pi * hbar)) ** n * amp * np.exp(expo)


# ---------------------------------------------------------------------------
# grids, cutoffs and the discretized projection


def smooth_step(u):
    """C-infinity step: 0 for ``u <= 0``, 1 for ``u >= 1``."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class ChiSpec:
    """Even cutoff ``chi(x - y)``: 1 for ``|t| <= plateau * radius``, 0 beyond ``radius``.

    ``radius=None`` means ``chi = 1`` everywhere.
    """

    radius: float | None = None
    plateau: float = 0.5

    def __call__(self, t):
        t = np.abs(np.asarray(t))
        if self.radius is None:
            return np.ones_like(t, dtype=float)
        r0 = self.plateau * self.radius
        return smooth_step((self.radius - t) / (self.radius - r0))


@dataclass(frozen=True)
class GridSpec:
    """Tensor Gauss-Legendre grid on the square around ``B(center, R)``.

    Nodes outside the disc are dropped.  ``nodes`` defaults to
    ``max(40, ceil(8 R / sqrt(hbar)))`` per axis.
    """

    R: float
    center: complex = 0j
    nodes: int | None = None

    def per_axis(self, hbar: float) -> int:
        if self.nodes is not None:
            return int(self.nodes)
        return max(40, math.ceil(8 * self.R / math.sqrt(hbar)))

    def build(self, hbar: float):
        m = self.per_axis(hbar)
        t, wt = np.polynomial.legendre.leggauss(m)
        X, Y = np.meshgrid(self.R * t, self.R * t, indexing="ij")
        Wt = np.outer(wt, wt) * self.R ** 2
        z = (X + 1j * Y).ravel()
        q = Wt.ravel()
        keep = np.abs(z) <= self.R
        if not keep.any():
            raise GridError("empty grid")
        return self.center + z[keep], q[keep]


@dataclass
class ProjectionMatrix:
    """Discretized projection in the unitary (gauge) picture.

    ``M = D^{1/2} P D^{-1/2}`` with ``D = diag(q e^{-2 Phi/hbar})``, so the
    weighted inner product becomes the Euclidean one and self-adjointness
    in ``L^2_Phi`` is ordinary Hermitian symmetry of ``M``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    phi: np.ndarray
    M: np.ndarray
    hbar: float
    chi_radius: float | None
    R: float
    center: complex = 0j
    label: str = "symbol"
    weight: Weight | None = None

    @property
    def P(self) -> np.ndarray:
        """Matrix acting on plain samples ``u(x_i)``."""
        d = np.sqrt(self.weights) * np.exp(-self.phi / self.hbar)
        return self.M * (1.0 / d)[:, None] * d[None, :]

    def to_gauge(self, u) -> np.ndarray:
        return np.sqrt(self.weights) * np.exp(-self.phi / self.hbar) * u

    def apply(self, u) -> np.ndarray:
        """``P u`` on plain samples."""
        d = np.sqrt(self.weights) * np.exp(-self.phi / self.hbar)
        return (self.M @ (d * u)) / d

    def norm(self, u) -> float:
        return float(np.linalg.norm(self.to_gauge(u)))

    def hermitian_defect(self) -> float:
        return float(np.linalg.norm(self.M - self.M.conj().T, 2))

    def interior(self, radius: float) -> np.ndarray:
        return np.abs(self.nodes - self.center) <= radius

    def idempotency_defect(self, radius: float | None = None) -> float:
        """``||P^2 - P||_2`` in the weighted norm, optionally on an interior block."""
        M2 = self.M @ self.M - self.M
        if radius is not None:
            m = self.interior(radius)
            M2 = M2[np.ix_(m, m)]
        return float(np.linalg.norm(M2, 2))

    def reproducing_defect(self, j: int, radius: float | None = None) -> float:
        """``||P m - m|| / ||m||`` for ``m = (z - center)^j``."""
        m = (self.nodes - self.center) ** j
        g = self.to_gauge(m)
        r = self.M @ g - g
        if radius is not None:
            mask = self.interior(radius)
            return float(np.linalg.norm(r[mask]) / np.linalg.norm(g[mask]))
        return float(np.linalg.norm(r) / np.linalg.norm(g))


def projection_matrix(s: BergmanSymbol, grid: GridSpec, hbar: float,
                      chi: ChiSpec | float | None = None, C: float | None = None) -> ProjectionMatrix:
    """Discretize the cutoff projection with kernel ``k(x, y) chi(x - y)``.

    Only one complex dimension is supported (the grid is a planar disc).

    Raises
    ------
    GridError
        If ``chi.radius >= grid.R`` or the weight is not one-dimensional.
    """
    if s.n != 1:
        raise GridError("projection grids are implemented for n = 1")
    if not isinstance(chi, ChiSpec):
        chi = ChiSpec(chi)
    if chi.radius is not None and chi.radius >= grid.R:
        raise GridError(f"chi radius {chi.radius} must be below the grid radius {grid.R}")
    z, q = grid.build(hbar)
    Kg = kernel_matrix(s, hbar, z, z, C)
    cut = chi(z[:, None] - z[None, :])
    sq = np.sqrt(q)
    M = sq[:, None] * Kg * cut * sq[None, :]
    return ProjectionMatrix(z, q, s.weight.value(z.reshape(-1, 1)), M, hbar, chi.radius,
                            grid.R, grid.center, "symbol", s.weight)


# ---------------------------------------------------------------------------
# peak states


def bump(t, radius: float = 1.0):
    """Radial bump ``exp(1 - 1/(1 - |t|^2/radius^2))`` supported in ``|t| < radius``."""
    u = np.abs(np.asarray(t)) ** 2 / radius ** 2
    with np.errstate(divide="ignore", over="ignore"):
        v = np.where(u < 1, np.exp(1.0 - 1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return v


def bump_mass(radius: float = 1.0, n: int = 1) -> float:
    """Integral of :func:`bump` over C^n = R^{2n}."""
    dim = 2 * n
    area = 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)
    val, _ = integrate.quad(lambda r: bump(r, radius) * r ** (dim - 1), 0, radius,
                            epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(area * val)


@dataclass(frozen=True)
class PeakState:
    """Samples of ``e_{x0}`` on a grid.

    ``gauge`` holds ``sqrt(q) e^{-Phi/hbar} e_{x0}``, the representation in
    which inner products are Euclidean.
    """

    center: complex
    hbar: float
    gauge: np.ndarray
    mass: float

    def norm_sq(self) -> float:
        return float(np.vdot(self.gauge, self.gauge).real)


def peak_state(x0, hbar: float, w: Weight, nodes, weights, f_radius: float = 1.0,
               mass_tol: float = 2e-2) -> PeakState:
    """Peak state ``hbar^-n f((x - x0)/sqrt(hbar)) exp((2 Phi(x) - Phi(x0) - 2 dbar Phi(x0)(xbar - x0bar))/hbar)``.

    ``f`` is :func:`bump` of radius ``f_radius`` scaled to unit integral,
    then rescaled so that its quadrature sum is exactly 1.

    Raises
    ------
    GridError
        If the quadrature sum of ``f`` misses 1 by more than ``mass_tol``
        before rescaling (support clipped by the grid, or too few nodes
        under the bump).
    """
    n = w.n
    if n != 1:
        raise GridError("peak states are implemented for n = 1")
    x0 = complex(np.asarray(x0).reshape(-1)[0])
    nodes = np.asarray(nodes).reshape(-1)
    weights = np.asarray(weights).reshape(-1)
    f = bump((nodes - x0) / math.sqrt(hbar), f_radius) / bump_mass(f_radius, n) / hbar ** n
    mass = float((f * weights).sum())
    if abs(mass - 1.0) > mass_tol:
        raise GridError(f"peak at {x0} is clipped or under-resolved: bump mass {mass:.6f}")
    f = f / mass
    dbar = jet_derive(w.phi, 1).evaluate([x0, np.conj(x0)])
    phi_x = w.value(nodes.reshape(-1, 1))
    phi_0 = w.value(np.array([x0]))
    expo = (phi_x - phi_0 - 2.0 * dbar * (np.conj(nodes) - np.conj(x0))) / hbar
    g = np.sqrt(weights) * f * np.exp(expo)
    return PeakState(x0, hbar, g, mass)


def kernel_extract(proj: ProjectionMatrix, x0, y0, f_radius: float = 1.0,
                   gauge: bool = False, mass_tol: float = 2e-2) -> complex:
    """``<P e_{y0}, e_{x0}> e^{(Phi(x0) + Phi(y0))/hbar}``.

    By the mean-value property this recovers ``K(x0, conj y0)`` whenever the
    projection's kernel is holomorphic in ``x`` and antiholomorphic in
    ``y`` on the bump supports.  With ``gauge=True`` the bounded value
    ``<P e_{y0}, e_{x0}>`` is returned instead.
    """
    w = proj.weight
    ex = peak_state(x0, proj.hbar, w, proj.nodes, proj.weights, f_radius, mass_tol)
    ey = peak_state(y0, proj.hbar, w, proj.nodes, proj.weights, f_radius, mass_tol)
    val = complex(np.vdot(ex.gauge, proj.M @ ey.gauge))
    if gauge:
        return val
    scale = (w.value(np.array([complex(np.asarray(x0).reshape(-1)[0])]))
             + w.value(np.array([complex(np.asarray(y0).reshape(-1)[0])])))
    return val * math.exp(scale / proj.hbar)


__all__ = [
    "BergmanSymbol", "bergman_symbol", "truncate_aC", "kernel_eval", "kernel_matrix",
    "ChiSpec", "GridSpec", "ProjectionMatrix", "projection_matrix", "smooth_step",
    "bump", "bump_mass", "PeakState", "peak_state", "kernel_extract",
]

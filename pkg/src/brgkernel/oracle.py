"""Brute-force reference kernels from Gram matrices of monomials.

For a weight on a disc the Bergman projection onto polynomials of degree
at most ``N`` is computed directly: assemble the Gram matrix of the
monomials in ``L^2(e^{-2 Phi/hbar} L(dz))`` by quadrature, factor it and
evaluate ``K_N(x, ybar) = sum_ab (G^{-1})_ba x^a ybar^b``.  The CP^1 model
uses exact Beta-function norms instead of quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, special

from .bergman import BergmanSymbol, ProjectionMatrix, GridSpec, kernel_eval
from .errors import ConditioningError, GridError, InputError
from .series import layout
from .weight import Weight

COND_MAX = 1e12
TAIL_LOG = math.log(1e12)


@dataclass
class GramOracle:
    """Factored Gram matrix of a monomial basis.

    Attributes
    ----------
    basis : ndarray
        Multi-indices, one row per basis function ``((z - center)/scale)^alpha``.
    G : ndarray
        Hermitian Gram matrix of the scaled monomials; the true Gram matrix
        is ``G e^{log_shift}``.
    hbar : float
    domain : dict
    cond : float
        Condition number of the diagonally equilibrated Gram matrix.
    """

    basis: np.ndarray
    G: np.ndarray
    hbar: float
    domain: dict
    cond: float
    phi_fn: Callable
    center: tuple
    scale: float = 1.0
    log_shift: float = 0.0
    quad: dict = field(default_factory=dict)
    _chol: np.ndarray | None = None
    _dscale: np.ndarray | None = None

    def __post_init__(self):
        d = np.sqrt(np.real(np.diag(self.G)))
        Gt = self.G / np.outer(d, d)
        Gt = 0.5 * (Gt + Gt.conj().T)
        self._dscale = d
        self._chol = linalg.cholesky(Gt, lower=True)

    @property
    def n(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def monomials(self, z) -> np.ndarray:
        z = (np.asarray(z, dtype=complex).reshape(-1, self.n) - np.array(self.center)) / self.scale
        out = np.ones((len(z), self.dim), dtype=complex)
        for v in range(self.n):
            out *= z[:, v:v + 1] ** self.basis[:, v][None, :]
        return out

    def features(self, z) -> np.ndarray:
        """Rows ``f(z) e^{-Phi(z)/hbar}`` for an orthonormal basis ``f``."""
        z = np.asarray(z, dtype=complex).reshape(-1, self.n)
        v = self.monomials(z) / self._dscale[None, :]
        a = linalg.solve_triangular(self._chol, v.T, lower=True).T
        lg = -self.phi_fn(z) / self.hbar - 0.5 * self.log_shift
        return a * np.exp(lg)[:, None]


def _polar_rule(R: float, nr: int, nt: int):
    t, wt = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * R * (t + 1.0)
    wr = 0.5 * R * wt * r
    th = 2 * np.pi * np.arange(nt) / nt
    z = (r[:, None] * np.exp(1j * th)[None, :]).ravel()
    q = (wr[:, None] * np.full(nt, 2 * np.pi / nt)[None, :]).ravel()
    return z, q


def psh_radius(w: Weight, frac: float = 0.1, steps: int = 40) -> float:
    """Largest sampled radius on which the Levi form stays above ``frac * m``."""
    lo, hi = 0.0, float(w.radius)
    if w.levi_range(hi)[0] > frac * w.levi_m:
        return hi
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if w.levi_range(mid)[0] > frac * w.levi_m:
            lo = mid
        else:
            hi = mid
    return lo


def default_domain_radius(w: Weight, hbar: float, N: int) -> float:
    """Disc radius beyond which the weighted monomials up to degree ``N`` carry
    less than about ``1e-12`` of their mass (Levi-minorant estimate).

    Capped by the weight's reliable radius and by :func:`psh_radius`, since
    the Gaussian tail bound needs a positive Levi form on the disc.
    """
    m = w.levi_m
    r = math.sqrt(hbar * (N + TAIL_LOG) / m)
    return float(min(r, psh_radius(w)))


def default_basis_size(w: Weight, hbar: float, R: float) -> int:
    return int(min(40, math.ceil(3 * R ** 2 * w.levi_m / hbar)))


def _basis(n: int, N: int) -> np.ndarray:
    return np.array(layout(n, N).exps)


def gram_matrix(w: Weight, hbar: float, N: int | None = None, R: float | None = None,
                nr: int | None = None, nt: int | None = None,
                cond_max: float = COND_MAX) -> GramOracle:
    """Gram oracle for ``w`` on the polydisc of radius ``R`` about its base.

    Parameters
    ----------
    w : Weight
    hbar : float
    N : int, optional
        Maximal total degree of the basis (default from the Levi modulus,
        capped at 40).
    R : float, optional
        Domain radius (default :func:`default_domain_radius`).
    nr, nt : int, optional
        Radial Gauss-Legendre nodes and uniform angular nodes per
        coordinate.

    Raises
    ------
    ConditioningError
        If the equilibrated Gram matrix has condition number above
        ``cond_max``; the message names the largest safe degree.
    """
    n = w.n
    if R is None:
        R = default_domain_radius(w, hbar, N if N is not None else 40)
    if N is None:
        N = default_basis_size(w, hbar, R)
    if N < 0 or R <= 0:
        raise InputError("basis degree must be >= 0 and radius > 0")
    nr = nr or max(64, N + 40)
    nt = nt or max(256, 2 * N + 64)
    z1, q1 = _polar_rule(R, nr, nt)
    if n == 1:
        z = z1.reshape(-1, 1)
        q = q1
    else:
        if len(z1) ** n > 2_000_000:
            raise GridError("quadrature too large for this dimension; lower nr/nt")
        grids = np.meshgrid(*([np.arange(len(z1))] * n), indexing="ij")
        idx = np.stack([g.ravel() for g in grids], axis=1)
        z = z1[idx]
        q = np.prod(q1[idx], axis=1)
    center = np.array(w.base)
    z = z + center
    lw = -2.0 * w.value(z) / hbar
    shift = float(lw.max())
    wq = q * np.exp(lw - shift)
    basis = _basis(n, N)
    tmp = GramOracle.__new__(GramOracle)
    tmp.basis, tmp.center, tmp.scale = basis, tuple(center), R
    V = GramOracle.monomials(tmp, z)
    G = (V * wq[:, None]).T @ np.conj(V)
    G = 0.5 * (G + G.conj().T)
    d = np.sqrt(np.real(np.diag(G)))
    Gt = G / np.outer(d, d)
    ev = np.linalg.eigvalsh(Gt)
    cond = float(ev.max() / ev.min()) if ev.min() > 0 else np.inf
    if not cond <= cond_max:
        safe = 0
        for NN in range(N, -1, -1):
            k = num = layout(n, NN).size
            sub = np.linalg.eigvalsh(Gt[:k, :k])
            if sub.min() > 0 and sub.max() / sub.min() <= cond_max:
                safe = NN
                break
            _ = num
        raise ConditioningError(
            f"Gram condition number {cond:.3g} exceeds {cond_max:.1g}; "
            f"use basis degree N <= {safe}")
    return GramOracle(basis=basis, G=G, hbar=hbar,
                      domain={"type": "polydisc", "R": R, "center": [[c.real, c.imag] for c in center]},
                      cond=cond, phi_fn=w.value, center=tuple(center), scale=R,
                      log_shift=shift, quad={"nr": nr, "nt": nt, "N": N})


def cp1_phi(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).reshape(-1)
    return 0.5 * np.log1p(np.abs(z) ** 2)


def cp1_gram(k: int) -> GramOracle:
    """Exact Gram oracle of ``O(k)`` over CP^1 in the affine chart.

    Sections are polynomials of degree at most ``k`` with norm
    ``int |u|^2 (1+|z|^2)^{-k} (1+|z|^2)^{-2} L(dz)``, so
    ``<z^i, z^j> = delta_ij pi B(i+1, k+1-i)`` and ``hbar = 1/k``.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    i = np.arange(k + 1)
    diag = math.pi * np.exp(special.betaln(i + 1, k + 1 - i))
    return GramOracle(basis=i.reshape(-1, 1), G=np.diag(diag).astype(complex), hbar=1.0 / k,
                      domain={"type": "CP1", "k": k}, cond=float(diag.max() / diag.min()),
                      phi_fn=lambda z: cp1_phi(z), center=(0j,), scale=1.0, log_shift=0.0,
                      quad={"exact": "beta"})


def exact_kernel(o: GramOracle, x, y, gauge: bool = False):
    """``K_N(x, conj y)`` at matching batches of points.

    With ``gauge=True`` returns ``e^{-(Phi(x)+Phi(y))/hbar} K_N(x, conj y)``.
    """
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    single = x.ndim <= 1 and x.size == o.n
    x = x.reshape(-1, o.n)
    y = y.reshape(-1, o.n)
    val = np.sum(o.features(x) * np.conj(o.features(y)), axis=1)
    if not gauge:
        val = val * np.exp((o.phi_fn(x) + o.phi_fn(y)) / o.hbar)
    return val[0] if single else val


def gauge_kernel_matrix(o: GramOracle, xs, ys) -> np.ndarray:
    return o.features(xs) @ o.features(ys).conj().T


def oracle_projection(o: GramOracle, grid: GridSpec, weight: Weight) -> ProjectionMatrix:
    """The oracle's projection sampled on the same grid as :func:`projection_matrix`."""
    z, q = grid.build(o.hbar)
    F = o.features(z) * np.sqrt(q)[:, None]
    M = F @ F.conj().T
    return ProjectionMatrix(z, q, weight.value(z.reshape(-1, 1)), M, o.hbar, None, grid.R,
                            grid.center, "oracle", weight)


# ---------------------------------------------------------------------------
# comparisons


def near_diagonal_pairs(center=0j, radius: float = 0.25, sep: float = 0.2,
                        rings: int = 3, spokes: int = 8):
    """Deterministic pairs ``(x, y)`` with ``|x - c| <= radius`` and ``|x - y| <= sep``."""
    xs = [complex(center)]
    for i in range(1, rings + 1):
        r = radius * i / rings
        for s in range(spokes):
            xs.append(center + r * np.exp(2j * np.pi * (s + 0.5 * (i % 2)) / spokes))
    offs = [0j] + [sep * np.exp(2j * np.pi * s / 4) for s in range(4)] + \
           [0.5 * sep * np.exp(2j * np.pi * (s + 0.5) / 4) for s in range(4)]
    X, Y = [], []
    for x in xs:
        for d in offs:
            X.append(x)
            Y.append(x + d)
    return np.array(X).reshape(-1, 1), np.array(Y).reshape(-1, 1)


@dataclass
class Report:
    """Outcome of :func:`compare_report`."""

    weight_id: str
    hbar_list: list
    E: list
    fit: dict
    C2_hat: float
    status: str
    monotone: bool
    quadrature: list
    rows: list = field(default_factory=list)
    J: int = 0

    def to_dict(self) -> dict:
        return {"weight_id": self.weight_id, "hbar_list": self.hbar_list, "E": self.E,
                "fit": self.fit, "C2_hat": self.C2_hat, "status": self.status,
                "monotone": self.monotone, "J": self.J, "quadrature": self.quadrature}


def log_linear_fit(inv_hbar, values) -> dict:
    """Regression ``log E = -rate / hbar + intercept``; returns rate as ``slope``."""
    x = np.asarray(inv_hbar, dtype=float)
    y = np.log(np.asarray(values, dtype=float))
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(-coef[0]), "intercept": float(coef[1]), "r2": float(r2)}


def compare_report(s: BergmanSymbol, hbars, pairs=None, N: int = 40, R: float | None = None,
                   C: float | None = None, floor: float = 1e-8, nr=None, nt=None) -> Report:
    """Gauge-weighted oracle-vs-symbol error over near-diagonal pairs.

    For each ``hbar`` a Gram oracle is built and ``E(hbar)`` is the largest
    ``|e^{-(Phi(x)+Phi(y))/hbar} (K_N(x, ybar) - K_sym(x, ybar))|`` over the
    pairs.  ``fit.slope`` is the decay rate ``1/C2`` in
    ``log E = -1/(C2 hbar) + const``.  When every ``E`` is below ``floor``
    the kernels agree to quadrature accuracy and the status is ``"exact"``.
    """
    hbars = [float(h) for h in hbars]
    if pairs is None:
        pairs = near_diagonal_pairs(complex(s.weight.base[0]))
    X, Y = pairs
    E, quad, rows = [], [], []
    for h in hbars:
        o = gram_matrix(s.weight, h, N=N, R=R, nr=nr, nt=nt)
        ko = exact_kernel(o, X, Y, gauge=True)
        ks = kernel_eval(s, h, X, Y, C=C, gauge=True)
        diff = np.abs(ko - ks)
        E.append(float(diff.max()))
        quad.append({"hbar": h, "R_dom": o.domain["R"], "N": o.quad["N"], "nr": o.quad["nr"],
                     "nt": o.quad["nt"], "cond": o.cond})
        for x, y, a, b, d in zip(X[:, 0], Y[:, 0], ko, ks, diff):
            rows.append((h, x, y, a, b, d))
    monotone = all(E[i + 1] < E[i] for i in range(len(E) - 1))
    if max(E) < floor:
        fit = {"slope": float("nan"), "intercept": float("nan"), "r2": float("nan")}
        return Report(s.weight.name, hbars, E, fit, float("nan"), "exact", monotone, quad, rows, s.J)
    fit = log_linear_fit([1.0 / h for h in hbars], E)
    C2 = 1.0 / fit["slope"] if fit["slope"] > 0 else float("inf")
    status = "decaying" if monotone else "non-monotone"
    return Report(s.weight.name, hbars, E, fit, C2, status, monotone, quad, rows, s.J)


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r2: float
    samples: int


def decay_fit(gauge_fn: Callable, pairs, hbar: float) -> DecayFit:
    """Fit ``-hbar log|gauge K(x, y)|`` against ``|x - y|^2``.

    ``gauge_fn(X, Y)`` returns gauge-weighted kernel values for matching
    batches.  The slope estimates the Gaussian decay constant.
    """
    X, Y = (np.asarray(p, dtype=complex) for p in pairs)
    X = X.reshape(len(X), -1)
    Y = Y.reshape(len(Y), -1)
    d2 = (np.abs(X - Y) ** 2).sum(axis=1)
    if np.any(d2 <= 1e-24):
        raise InputError("decay_fit needs strictly off-diagonal pairs")
    if np.ptp(d2) <= 1e-14:
        raise InputError("degenerate decay fit: all pairs have the same separation")
    vals = np.abs(gauge_fn(X, Y))
    y = -hbar * np.log(vals)
    A = np.column_stack([d2, np.ones_like(d2)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(((y - pred) ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(coef[0]), float(coef[1]), r2, int(len(d2)))


def off_diagonal_pairs(center=0j, radius: float = 0.3, seps=(0.1, 0.2, 0.3, 0.4, 0.5),
                       directions: int = 6):
    """Pairs ``(x, x + d)`` with ``|d|`` running over ``seps``, centred near ``center``."""
    X, Y = [], []
    for i, s in enumerate(seps):
        for k in range(directions):
            u = np.exp(2j * np.pi * (k + 0.25 * i) / directions)
            mid = center + 0.5 * radius * np.exp(2j * np.pi * (k + 0.5) / directions) * 0.5
            X.append(mid - 0.5 * s * u)
            Y.append(mid + 0.5 * s * u)
    return np.array(X).reshape(-1, 1), np.array(Y).reshape(-1, 1)


# ---------------------------------------------------------------------------
# CP^1 desk model


@dataclass
class CP1Result:
    ks: list
    dims: list
    density: list
    density_spread: list
    c0: float
    c1: float
    fit_residual: float
    offdiag: list
    C_hat: float
    pair: tuple

    def to_dict(self) -> dict:
        return {"ks": self.ks, "dims": self.dims, "density": self.density,
                "density_spread": self.density_spread, "c0": self.c0, "c1": self.c1,
                "fit_residual": self.fit_residual, "offdiag": self.offdiag,
                "C_hat": self.C_hat, "pair": [[p.real, p.imag] for p in self.pair]}


def cp1_study(ks, fit_from: int = 8, pair=(0.5, -0.5), probe_radius: float = 2.0,
              probes: int = 41) -> CP1Result:
    """Dimensions, on-diagonal density and off-diagonal decay over ``k``.

    The density ``K(x, xbar) e^{-2k Phi(x)}`` is sampled on ``|x| <= probe_radius``;
    its mean is fitted by ``c0 k + c1`` over ``k >= fit_from``.  ``C_hat``
    is the smallest ``C`` with ``g_k <= e^{-k/C}`` for every ``k``, where
    ``g_k`` is the gauge-weighted kernel at ``pair``.
    """
    ks = [int(k) for k in ks]
    if not ks:
        raise InputError("empty k range")
    xs = np.linspace(0, probe_radius, probes) * np.exp(0.37j)
    dims, dens, spread, off = [], [], [], []
    x0 = np.array([complex(pair[0])])
    y0 = np.array([complex(pair[1])])
    for k in ks:
        o = cp1_gram(k)
        dims.append(o.dim)
        d = exact_kernel(o, xs, xs, gauge=True).real
        dens.append(float(d.mean()))
        spread.append(float((d.max() - d.min()) / d.mean()))
        off.append(float(abs(exact_kernel(o, x0, y0, gauge=True))))
    kk = np.array(ks, dtype=float)
    sel = kk >= fit_from
    if sel.sum() >= 2:
        A = np.column_stack([kk[sel], np.ones(sel.sum())])
        coef, *_ = np.linalg.lstsq(A, np.array(dens)[sel], rcond=None)
        resid = float(np.max(np.abs(A @ coef - np.array(dens)[sel]) / np.array(dens)[sel]))
        c0, c1 = float(coef[0]), float(coef[1])
    else:
        c0 = c1 = resid = float("nan")
    offa = np.array(off)
    if np.all((offa > 0) & (offa < 1)):
        C_hat = float(np.max(kk / -np.log(offa)))
    else:
        C_hat = float("inf")
    return CP1Result(ks, dims, dens, spread, c0, c1, resid, off, C_hat,
                     (complex(pair[0]), complex(pair[1])))


__all__ = [
    "GramOracle", "gram_matrix", "cp1_gram", "cp1_phi", "exact_kernel", "gauge_kernel_matrix",
    "oracle_projection", "near_diagonal_pairs", "off_diagonal_pairs", "Report",
    "compare_report", "log_linear_fit", "DecayFit", "decay_fit", "CP1Result", "cp1_study",
    "default_domain_radius", "default_basis_size", "psh_radius",
]

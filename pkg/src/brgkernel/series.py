"""Truncated multivariate power series ("jets") and hbar-graded symbols.

A :class:`Jet` stores the Taylor coefficients of a germ about a base point
up to a total degree ``cap``.  Coefficients live in a dense complex vector
indexed in graded-lexicographic order, so a jet with a smaller cap is a
prefix of the same jet with a larger cap.  Alongside the cap every jet
carries a ``reliable`` degree: coefficients above it are only partial sums
(for instance after differentiation) and must not be trusted.

:class:`HbarSymbol` is a finite expansion ``a_0 + a_1 h + ... + a_J h^J``
whose coefficients are jets sharing one shape.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import BaseMismatchError, InputError, JetShapeError, SingularJacobianError

ATOL = 1e-12
BASE_RTOL = 1e-12
COND_MAX = 1e12


# ---------------------------------------------------------------------------
# index layout


def _compositions(d, k):
    if k == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _compositions(d - first, k - 1):
            yield (first,) + rest


class Layout:
    """Graded-lex enumeration of multi-indices with ``|alpha| <= cap``."""

    def __init__(self, arity: int, cap: int):
        self.arity = arity
        self.cap = cap
        rows = [c for d in range(cap + 1) for c in _compositions(d, arity)]
        self.exps = np.array(rows, dtype=np.int64).reshape(len(rows), arity)
        self.exps.setflags(write=False)
        self.deg = self.exps.sum(axis=1)
        counts = [math.comb(d + arity - 1, arity - 1) for d in range(cap + 1)]
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.size = len(rows)
        self._radix = (cap + 1) ** np.arange(arity, dtype=np.int64)
        keys = self.exps @ self._radix
        self._order = np.argsort(keys)
        self._sorted_keys = keys[self._order]
        self._tables: dict = {}

    def lookup(self, exps) -> np.ndarray:
        """Indices of the rows of ``exps``; -1 where the degree exceeds cap."""
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, self.arity)
        ok = (exps.sum(axis=1) <= self.cap) & (exps >= 0).all(axis=1)
        out = np.full(len(exps), -1, dtype=np.int64)
        if ok.any():
            keys = exps[ok] @ self._radix
            pos = np.searchsorted(self._sorted_keys, keys)
            out[ok] = self._order[pos]
        return out

    def index(self, alpha) -> int:
        i = int(self.lookup([tuple(alpha)])[0])
        if i < 0:
            raise JetShapeError(f"multi-index {tuple(alpha)} exceeds cap {self.cap}")
        return i

    def pairs(self):
        """Product table ``(i, j, k)`` with ``exps[i] + exps[j] = exps[k]``.

        Rows are sorted by ``i`` so that a suffix selects the pairs whose
        first factor has degree at least some bound.
        """
        if "pairs" not in self._tables:
            I, J = [], []
            for di in range(self.cap + 1):
                ii = np.arange(self.offsets[di], self.offsets[di + 1])
                jj = np.arange(0, self.offsets[self.cap - di + 1])
                I.append(np.repeat(ii, len(jj)))
                J.append(np.tile(jj, len(ii)))
            I = np.concatenate(I)
            J = np.concatenate(J)
            K = self.lookup(self.exps[I] + self.exps[J])
            self._tables["pairs"] = (I, J, K)
        return self._tables["pairs"]

    def shift(self, beta):
        """Source/target indices for multiplication by ``t**beta``."""
        beta = tuple(int(b) for b in beta)
        key = ("shift", beta)
        if key not in self._tables:
            tgt = self.lookup(self.exps + np.array(beta, dtype=np.int64))
            src = np.nonzero(tgt >= 0)[0]
            self._tables[key] = (src, tgt[src])
        return self._tables[key]

    def derivative(self, var: int):
        """Source/target indices and factors for d/dt_var."""
        key = ("der", var)
        if key not in self._tables:
            src = np.nonzero(self.exps[:, var] > 0)[0]
            lowered = self.exps[src].copy()
            lowered[:, var] -= 1
            self._tables[key] = (src, self.lookup(lowered), self.exps[src, var].astype(float))
        return self._tables[key]


@functools.lru_cache(maxsize=None)
def layout(arity: int, cap: int) -> Layout:
    return Layout(arity, cap)


def num_coeffs(arity: int, cap: int) -> int:
    return math.comb(arity + cap, arity)


# ---------------------------------------------------------------------------
# Jet


class Jet:
    """Truncated power series in ``arity`` complex variables.

    Parameters
    ----------
    arity : int
        Number of variables.
    base : sequence of complex
        Expansion point; coefficients refer to powers of ``z - base``.
    cap : int
        Maximal total degree stored.
    coeffs : array_like, optional
        Dense coefficient vector in graded-lex order (zeros if omitted).
    reliable : int, optional
        Highest degree whose coefficients are exact.  Defaults to ``cap``.
    """

    __slots__ = ("arity", "base", "cap", "coeffs", "reliable")

    def __init__(self, arity: int, base, cap: int, coeffs=None, reliable=None):
        if arity < 1 or cap < 0:
            raise JetShapeError("arity must be positive and cap non-negative")
        base = tuple(complex(b) for b in base)
        if len(base) != arity:
            raise JetShapeError(f"base has {len(base)} entries, arity is {arity}")
        size = num_coeffs(arity, cap)
        if coeffs is None:
            arr = np.zeros(size, dtype=complex)
        else:
            arr = np.array(coeffs, dtype=complex).reshape(-1)
            if arr.shape[0] != size:
                raise JetShapeError(f"expected {size} coefficients, got {arr.shape[0]}")
        arr.setflags(write=False)
        self.arity = arity
        self.base = base
        self.cap = cap
        self.coeffs = arr
        self.reliable = cap if reliable is None else max(-1, min(int(reliable), cap))

    # construction -----------------------------------------------------------

    @classmethod
    def zeros(cls, arity, base, cap):
        return cls(arity, base, cap)

    @classmethod
    def constant(cls, value, arity, base, cap):
        c = np.zeros(num_coeffs(arity, cap), dtype=complex)
        c[0] = value
        return cls(arity, base, cap, c)

    @classmethod
    def coordinate(cls, var, arity, base, cap):
        """The jet of ``z_var`` itself (value ``base[var]`` plus ``t_var``)."""
        c = np.zeros(num_coeffs(arity, cap), dtype=complex)
        c[0] = complex(base[var])
        if cap >= 1:
            e = [0] * arity
            e[var] = 1
            c[layout(arity, cap).index(e)] = 1.0
        return cls(arity, base, cap, c)

    @classmethod
    def from_table(cls, table, arity, base, cap, reliable=None):
        """Build from a mapping ``{alpha: value}``."""
        lay = layout(arity, cap)
        c = np.zeros(lay.size, dtype=complex)
        for alpha, v in table.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != arity:
                raise JetShapeError(f"multi-index {alpha} has wrong length for arity {arity}")
            c[lay.index(alpha)] += v
        return cls(arity, base, cap, c, reliable)

    def like(self, coeffs, reliable=None):
        return Jet(self.arity, self.base, self.cap, coeffs,
                   self.reliable if reliable is None else reliable)

    # inspection -------------------------------------------------------------

    @property
    def layout(self) -> Layout:
        return layout(self.arity, self.cap)

    def coeff(self, alpha) -> complex:
        i = int(self.layout.lookup([tuple(alpha)])[0])
        return complex(self.coeffs[i]) if i >= 0 else 0j

    def items(self, tol=0.0):
        """Iterate ``(alpha, value)`` over coefficients with ``|value| > tol``."""
        exps = self.layout.exps
        for i in np.nonzero(np.abs(self.coeffs) > tol)[0]:
            yield tuple(int(e) for e in exps[i]), complex(self.coeffs[i])

    def to_table(self, tol=0.0) -> dict:
        return dict(self.items(tol))

    def degree_norms(self) -> np.ndarray:
        """Largest coefficient modulus in each total degree."""
        off = self.layout.offsets
        a = np.abs(self.coeffs)
        return np.array([a[off[d]:off[d + 1]].max(initial=0.0) for d in range(self.cap + 1)])

    def order(self) -> int:
        """Lowest degree with a non-zero coefficient (``cap + 1`` for zero)."""
        nz = np.nonzero(self.coeffs)[0]
        return int(self.layout.deg[nz[0]]) if len(nz) else self.cap + 1

    def degree(self) -> int:
        """Highest degree with a non-zero coefficient (-1 for zero)."""
        nz = np.nonzero(self.coeffs)[0]
        return int(self.layout.deg[nz[-1]]) if len(nz) else -1

    def radius_estimate(self, default=np.inf) -> float:
        """Root-test estimate of the polydisc radius of convergence."""
        norms = self.degree_norms()
        d = np.arange(len(norms))
        ok = (d >= 1) & (norms > 1e-300) & (d <= self.reliable)
        if not ok.any():
            return float(default)
        top = d[ok][-max(1, ok.sum() // 2):]
        roots = norms[top] ** (-1.0 / top)
        return float(min(default, roots.min()))

    def max_abs(self) -> float:
        return float(np.abs(self.coeffs).max(initial=0.0))

    def is_close(self, other: "Jet", atol=ATOL) -> bool:
        _check_same(self, other)
        return bool(np.all(np.abs(self.coeffs - other.coeffs) <= atol))

    def __repr__(self):
        nz = int(np.count_nonzero(self.coeffs))
        return (f"Jet(arity={self.arity}, cap={self.cap}, reliable={self.reliable}, "
                f"base={self.base}, nonzero={nz})")

    # arithmetic -------------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet):
            return jet_add(self, other)
        c = self.coeffs.copy()
        c[0] += other
        return self.like(c)

    __radd__ = __add__

    def __neg__(self):
        return self.like(-self.coeffs)

    def __sub__(self, other):
        if isinstance(other, Jet):
            return jet_add(self, -other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, other)
        return self.like(self.coeffs * complex(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return jet_mul(self, jet_reciprocal(other))
        return self.like(self.coeffs / complex(other))

    def __call__(self, *points):
        return self.evaluate(np.array(points, dtype=complex))

    # truncation -------------------------------------------------------------

    def with_cap(self, cap: int, exact: bool = False) -> "Jet":
        """Change the cap by truncation or zero padding.

        With ``exact=True`` the jet is taken to be a polynomial, so padded
        degrees count as reliable.
        """
        n = num_coeffs(self.arity, cap)
        if cap <= self.cap:
            return Jet(self.arity, self.base, cap, self.coeffs[:n],
                       cap if exact else min(self.reliable, cap))
        c = np.zeros(n, dtype=complex)
        c[: self.coeffs.shape[0]] = self.coeffs
        return Jet(self.arity, self.base, cap, c, cap if exact else self.reliable)

    def truncated(self, degree: int) -> "Jet":
        """Zero every coefficient above ``degree`` (cap unchanged)."""
        c = self.coeffs.copy()
        c[self.layout.offsets[max(0, min(degree, self.cap) + 1)]:] = 0.0
        return self.like(c, min(self.reliable, degree))

    def trusted(self) -> "Jet":
        """Same jet with the unreliable tail removed."""
        c = self.coeffs.copy()
        c[self.layout.offsets[self.reliable + 1]:] = 0.0
        return self.like(c)

    def derive(self, var: int) -> "Jet":
        return jet_derive(self, var)

    # evaluation -------------------------------------------------------------

    def evaluate(self, points, chunk: int = 4096) -> np.ndarray:
        """Evaluate the stored polynomial at absolute coordinates.

        ``points`` has shape ``(arity,)`` or ``(P, arity)``.
        """
        pts = np.asarray(points, dtype=complex)
        single = pts.ndim == 1
        pts = pts.reshape(-1, self.arity) - np.array(self.base)
        exps = self.layout.exps
        out = np.empty(len(pts), dtype=complex)
        for s in range(0, len(pts), chunk):
            t = pts[s:s + chunk]
            mono = np.ones((len(t), exps.shape[0]), dtype=complex)
            for v in range(self.arity):
                pw = t[:, v:v + 1] ** np.arange(self.cap + 1)
                mono *= pw[:, exps[:, v]]
            out[s:s + chunk] = mono @ self.coeffs
        return out[0] if single else out

    def bilinear(self, xpts, wpts, split: int) -> np.ndarray:
        """Matrix of values ``f(x_i, w_j)`` for a jet in ``(x, w)``.

        The first ``split`` variables are fed from ``xpts`` and the rest
        from ``wpts``; the work is a pair of monomial matrices around a
        small coefficient matrix.
        """
        xs = np.asarray(xpts, dtype=complex).reshape(-1, split) - np.array(self.base[:split])
        ws = (np.asarray(wpts, dtype=complex).reshape(-1, self.arity - split)
              - np.array(self.base[split:]))
        exps = self.layout.exps
        la = layout(split, self.cap)
        lb = layout(self.arity - split, self.cap)
        ia = la.lookup(exps[:, :split])
        ib = lb.lookup(exps[:, split:])
        C = np.zeros((la.size, lb.size), dtype=complex)
        np.add.at(C, (ia, ib), self.coeffs)
        return _monomials(xs, la) @ C @ _monomials(ws, lb).T

    # serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "arity": self.arity,
            "base": [[b.real, b.imag] for b in self.base],
            "cap": self.cap,
            "reliable": self.reliable,
            "coeffs": [{"idx": list(a), "re": v.real, "im": v.imag} for a, v in self.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Jet":
        arity = int(d["arity"])
        base = [complex(re, im) for re, im in d["base"]]
        cap = int(d["cap"])
        table = {}
        for e in d["coeffs"]:
            key = tuple(int(a) for a in e["idx"])
            table[key] = table.get(key, 0) + complex(float(e["re"]), float(e["im"]))
        return cls.from_table(table, arity, base, cap, d.get("reliable"))


def _monomials(t, lay: Layout) -> np.ndarray:
    mono = np.ones((t.shape[0], lay.size), dtype=complex)
    for v in range(lay.arity):
        pw = t[:, v:v + 1] ** np.arange(lay.cap + 1)
        mono *= pw[:, lay.exps[:, v]]
    return mono


def _bases_agree(b1, b2) -> bool:
    b1 = np.asarray(b1)
    b2 = np.asarray(b2)
    scale = 1.0 + max(np.abs(b1).max(initial=0), np.abs(b2).max(initial=0))
    return bool(np.all(np.abs(b1 - b2) <= BASE_RTOL * scale))


def _check_same(a: Jet, b: Jet):
    if a.arity != b.arity or a.cap != b.cap:
        raise JetShapeError(
            f"incompatible jets: arity {a.arity}/{b.arity}, cap {a.cap}/{b.cap}")
    if not _bases_agree(a.base, b.base):
        raise JetShapeError(f"incompatible base points {a.base} and {b.base}")


# ---------------------------------------------------------------------------
# operations


def jet_add(a: Jet, b: Jet) -> Jet:
    """Coefficient-wise sum of two jets of the same shape."""
    _check_same(a, b)
    return Jet(a.arity, a.base, a.cap, a.coeffs + b.coeffs, min(a.reliable, b.reliable))


def _mul_raw(a, b, lay: Layout, a_min_deg: int = 0) -> np.ndarray:
    I, J, K = lay.pairs()
    start = 0
    if a_min_deg > 0:
        if a_min_deg > lay.cap:
            return np.zeros(lay.size, dtype=complex)
        start = int(np.searchsorted(I, lay.offsets[a_min_deg]))
    I, J, K = I[start:], J[start:], K[start:]
    prod = a[I] * b[J]
    return (np.bincount(K, weights=prod.real, minlength=lay.size)
            + 1j * np.bincount(K, weights=prod.imag, minlength=lay.size))


def jet_mul(a: Jet, b: Jet) -> Jet:
    """Cauchy product truncated at the common cap."""
    _check_same(a, b)
    return Jet(a.arity, a.base, a.cap, _mul_raw(a.coeffs, b.coeffs, a.layout),
               min(a.reliable, b.reliable))


def jet_reciprocal(f: Jet) -> Jet:
    """``1/f`` by Newton doubling; needs ``f(base) != 0``."""
    c0 = f.coeffs[0]
    if abs(c0) == 0:
        raise JetShapeError("reciprocal of a jet vanishing at its base")
    lay = f.layout
    r = np.zeros(lay.size, dtype=complex)
    r[0] = 1.0 / c0
    prec = 0
    while prec < f.cap:
        prec = min(f.cap, 2 * prec + 1)
        fr = _mul_raw(f.coeffs, r, lay)
        two_minus = -fr
        two_minus[0] += 2.0
        r = _mul_raw(r, two_minus, lay)
        r[lay.offsets[prec + 1]:] = 0.0
    return f.like(r)


def jet_derive(f: Jet, var: int) -> Jet:
    """Formal partial derivative; the reliable degree drops by one."""
    if not 0 <= var < f.arity:
        raise JetShapeError(f"variable {var} out of range for arity {f.arity}")
    src, tgt, fac = f.layout.derivative(var)
    c = np.zeros_like(f.coeffs)
    c[tgt] = f.coeffs[src] * fac
    return Jet(f.arity, f.base, f.cap, c, f.reliable - 1)


def jet_embed(f: Jet, arity: int, var_map: Sequence[int], base, cap=None) -> Jet:
    """Re-express ``f`` as a jet in more variables.

    Variable ``i`` of ``f`` becomes variable ``var_map[i]`` of the result;
    the other variables do not appear.  ``base`` must agree with ``f.base``
    on the mapped positions.
    """
    cap = f.cap if cap is None else cap
    base = tuple(complex(b) for b in base)
    if not _bases_agree([base[v] for v in var_map], f.base):
        raise BaseMismatchError("embedding base disagrees with the jet's base")
    src = f.with_cap(min(cap, f.cap))
    exps = np.zeros((src.layout.size, arity), dtype=np.int64)
    exps[:, list(var_map)] = src.layout.exps
    out = np.zeros(num_coeffs(arity, cap), dtype=complex)
    out[layout(arity, cap).lookup(exps)] = src.coeffs
    return Jet(arity, base, cap, out, src.reliable)


def _single_monomial(h: Jet):
    """``(c, beta)`` if ``h = c * t**beta`` with ``|beta| >= 1``, else None."""
    nz = np.nonzero(h.coeffs)[0]
    if len(nz) != 1 or nz[0] == 0:
        return None
    return complex(h.coeffs[nz[0]]), tuple(int(e) for e in h.layout.exps[nz[0]])


def _power_combination(f: Jet, hs: Sequence[np.ndarray], lay: Layout, check_order: bool):
    """Sum of ``f_alpha * prod_v hs[v]**alpha_v`` on the layout ``lay``.

    ``hs`` are coefficient vectors on ``lay``.  When ``check_order`` is set
    the ``hs`` have no constant term, which allows skipping every power of
    degree above the cap.
    """
    k = f.arity
    fexps = f.layout.exps
    monos, orders = [], []
    for h in hs:
        jh = Jet(lay.arity, [0] * lay.arity, lay.cap, h)
        monos.append(_single_monomial(jh))
        orders.append(jh.order() if check_order else 0)
    need = np.abs(f.coeffs) > 0
    if check_order:
        tot = fexps @ np.array(orders)
        need &= tot <= lay.cap
    needed = set(np.nonzero(need)[0].tolist())
    if not needed:
        return np.zeros(lay.size, dtype=complex)

    flay = f.layout

    def parent(idx):
        alpha = fexps[idx]
        cands = [v for v in range(k) if alpha[v] > 0]
        cheap = [v for v in cands if monos[v] is not None]
        v = cheap[-1] if cheap else cands[-1]
        a = alpha.copy()
        a[v] -= 1
        return int(flay.lookup([a])[0]), v

    order_list = sorted(needed)
    closure = set(order_list)
    stack = list(order_list)
    while stack:
        idx = stack.pop()
        if idx == 0:
            continue
        p, _ = parent(idx)
        if p not in closure:
            closure.add(p)
            stack.append(p)
    powers = {}
    total = np.zeros(lay.size, dtype=complex)
    for idx in sorted(closure):
        if idx == 0:
            vec = np.zeros(lay.size, dtype=complex)
            vec[0] = 1.0
        else:
            p, v = parent(idx)
            prev = powers[p]
            if monos[v] is not None:
                c, beta = monos[v]
                src, tgt = lay.shift(beta)
                vec = np.zeros(lay.size, dtype=complex)
                vec[tgt] = c * prev[src]
            else:
                pdeg = int(fexps[p] @ np.array(orders)) if check_order else 0
                vec = _mul_raw(prev, hs[v], lay, pdeg)
        powers[idx] = vec
        if idx in needed:
            total += f.coeffs[idx] * vec
    return total


def jet_compose(f: Jet, g: Sequence[Jet]) -> Jet:
    """Substitute the jets ``g`` into ``f``.

    Parameters
    ----------
    f : Jet
        Outer series in ``k`` variables.
    g : sequence of Jet
        ``k`` inner series sharing arity, base and cap; ``g[i]`` evaluated
        at its base must equal ``f.base[i]``.

    Returns
    -------
    Jet
        Taylor expansion of ``f(g)`` truncated at the cap of ``g``.
    """
    g = list(g)
    if len(g) != f.arity:
        raise JetShapeError(f"need {f.arity} inner jets, got {len(g)}")
    for gi in g[1:]:
        _check_same(g[0], gi)
    g0 = g[0]
    vals = [gi.coeffs[0] for gi in g]
    if not _bases_agree(vals, f.base):
        raise BaseMismatchError(
            f"inner values {tuple(vals)} do not match the outer base {f.base}")
    hs = []
    for gi in g:
        h = gi.coeffs.copy()
        h[0] = 0.0
        hs.append(h)
    ff = f if f.cap <= g0.cap else f.with_cap(g0.cap)
    out = _power_combination(ff, hs, g0.layout, check_order=True)
    rel = min([f.reliable] + [gi.reliable for gi in g])
    return Jet(g0.arity, g0.base, g0.cap, out, rel)


def jet_translate(f: Jet, new_base) -> Jet:
    """Re-expand the stored polynomial of ``f`` about another point.

    This treats ``f`` as an exact polynomial of degree at most ``cap``; the
    result is again exact for that polynomial.
    """
    new_base = tuple(complex(b) for b in new_base)
    lay = f.layout
    hs = []
    for v in range(f.arity):
        h = np.zeros(lay.size, dtype=complex)
        h[0] = new_base[v] - f.base[v]
        if f.cap >= 1:
            e = [0] * f.arity
            e[v] = 1
            h[lay.index(e)] = 1.0
        hs.append(h)
    out = _power_combination(f, hs, lay, check_order=False)
    return Jet(f.arity, new_base, f.cap, out, f.reliable)


def jet_linear_part(G: Sequence[Jet]) -> np.ndarray:
    """Jacobian matrix ``dG_i/dz_j`` at the base point."""
    k = G[0].arity
    return np.array([[gi.coeffs[1 + j] if gi.cap >= 1 else 0 for j in range(k)] for gi in G])


def jet_invert_map(G: Sequence[Jet], cond_max: float = COND_MAX) -> list[Jet]:
    """Compositional inverse of a map given by ``k`` jets in ``k`` variables.

    The inverse is expanded about ``q0 = G(p0)`` and takes the value ``p0``
    there.  It is found by the fixed-point iteration
    ``h <- L^{-1}(s - N(p0 + h))`` where ``L`` is the linear part and ``N``
    the nonlinear remainder; each sweep fixes one more degree, and sweeps
    run at growing caps so early ones stay cheap.

    Raises
    ------
    SingularJacobianError
        If the linear part is singular or its condition number exceeds
        ``cond_max``.
    """
    G = list(G)
    k = len(G)
    for gi in G:
        if gi.arity != k:
            raise JetShapeError("jet_invert_map needs k jets in k variables")
        _check_same(G[0], gi)
    cap = G[0].cap
    p0 = G[0].base
    q0 = tuple(complex(gi.coeffs[0]) for gi in G)
    if cap < 1:
        raise SingularJacobianError("a cap of at least 1 is needed to invert")
    L = jet_linear_part(G)
    cond = np.linalg.cond(L)
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularJacobianError(f"Jacobian condition number {cond:.3g} exceeds {cond_max:.1g}")
    Linv = np.linalg.inv(L)
    lay = layout(k, cap)
    N = []
    for gi in G:
        c = gi.coeffs.copy()
        c[: lay.offsets[2]] = 0.0
        N.append(Jet(k, p0, cap, c))
    # s_j = t_j, coordinates about q0
    s = np.zeros((k, lay.size), dtype=complex)
    for j in range(k):
        s[j, 1 + j] = 1.0
    h = Linv @ s
    for c_it in range(2, cap + 1):
        sub = layout(k, c_it)
        hs = [h[i, : sub.size].copy() for i in range(k)]
        Nf = [n.with_cap(c_it) for n in N]
        Nh = np.array([_power_combination(n, hs, sub, check_order=True) for n in Nf])
        h_new = Linv @ (s[:, : sub.size] - Nh)
        h = np.zeros((k, lay.size), dtype=complex)
        h[:, : sub.size] = h_new
    rel = min(gi.reliable for gi in G)
    out = []
    for i in range(k):
        c = h[i].copy()
        c[0] = p0[i]
        out.append(Jet(k, q0, cap, c, rel))
    return out


# ---------------------------------------------------------------------------
# hbar symbols


@dataclass(frozen=True)
class HbarSymbol:
    """Finite expansion ``sum_j terms[j] * hbar**j``."""

    terms: tuple
    order_m: float = 0.0

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise JetShapeError("an HbarSymbol needs at least one term")
        for t in terms[1:]:
            _check_same(terms[0], t)
        object.__setattr__(self, "terms", terms)

    @property
    def J(self) -> int:
        return len(self.terms) - 1

    @property
    def arity(self) -> int:
        return self.terms[0].arity

    @property
    def base(self):
        return self.terms[0].base

    @property
    def cap(self) -> int:
        return self.terms[0].cap

    @classmethod
    def constant(cls, value, arity, base, cap, J=0):
        t0 = Jet.constant(value, arity, base, cap)
        return cls((t0,) + tuple(Jet.zeros(arity, base, cap) for _ in range(J)))

    def __getitem__(self, j) -> Jet:
        return self.terms[j]

    def __add__(self, other: "HbarSymbol") -> "HbarSymbol":
        J = min(self.J, other.J)
        return HbarSymbol(tuple(self.terms[j] + other.terms[j] for j in range(J + 1)),
                          max(self.order_m, other.order_m))

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c) -> "HbarSymbol":
        return HbarSymbol(tuple(t * c for t in self.terms), self.order_m)

    def map(self, fn) -> "HbarSymbol":
        return HbarSymbol(tuple(fn(t) for t in self.terms), self.order_m)

    def truncate_order(self, J: int) -> "HbarSymbol":
        return HbarSymbol(self.terms[: J + 1], self.order_m)

    def evaluate(self, points, hbar) -> np.ndarray:
        """Value of ``sum_j a_j(points) hbar**j``."""
        return sum(t.evaluate(points) * hbar ** j for j, t in enumerate(self.terms))

    def to_dict(self) -> dict:
        return {"order_m": self.order_m, "terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "HbarSymbol":
        return cls(tuple(Jet.from_dict(t) for t in d["terms"]), float(d.get("order_m", 0.0)))


def hsym_mul(a: HbarSymbol, b: HbarSymbol) -> HbarSymbol:
    """hbar-Cauchy product truncated at the smaller order."""
    _check_same(a.terms[0], b.terms[0])
    J = min(a.J, b.J)
    out = []
    for j in range(J + 1):
        acc = jet_mul(a.terms[0], b.terms[j])
        for i in range(1, j + 1):
            acc = acc + jet_mul(a.terms[i], b.terms[j - i])
        out.append(acc)
    return HbarSymbol(tuple(out), a.order_m + b.order_m)


@dataclass(frozen=True)
class GrowthFit:
    """Least-squares fit ``log sup|a_j| ~ p j log j + (j+1) log C``."""

    p: float
    C_hat: float
    sups: tuple
    js: tuple = field(default=())
    residual: float = float("nan")
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"p": self.p, "C_hat": self.C_hat, "sups": list(self.sups),
                "js": list(self.js), "residual": self.residual, "degenerate": self.degenerate}


def torus_points(base, radius, samples=256, seed=0) -> np.ndarray:
    """Low-discrepancy points on the distinguished boundary of a polydisc."""
    k = len(base)
    u = qmc.Sobol(d=k, scramble=True, seed=seed).random(samples)
    return np.array(base) + radius * np.exp(2j * np.pi * u)


def growth_fit(a: HbarSymbol, radius: float, samples: int = 256, jmin: int = 2,
               seed: int = 0, sups: Iterable[float] | None = None) -> GrowthFit:
    """Fit the growth of ``sup_K |a_j|`` over a polydisc ``K``.

    The supremum is estimated by sampling the trusted part of each ``a_j``
    on the distinguished boundary (the maximum modulus principle puts the
    maximum there).  Returns a degenerate fit with ``p = nan`` when fewer
    than two coefficients beyond ``jmin`` are non-zero.
    """
    if a.J < 4:
        raise JetShapeError("growth_fit needs an expansion of order J >= 4")
    if sups is None:
        pts = torus_points(a.base, radius, samples, seed)
        sups = [float(np.abs(t.trusted().evaluate(pts)).max()) for t in a.terms]
    sups = tuple(float(s) for s in sups)
    js = [j for j in range(jmin, len(sups)) if sups[j] > 1e-300]
    scale = max(sups[1:], default=0.0)
    js = [j for j in js if sups[j] > 1e-13 * max(1.0, scale) and sups[j] > 1e-14]
    if len(js) < 2:
        return GrowthFit(float("nan"), float("nan"), sups, tuple(js), float("nan"), True)
    jj = np.array(js, dtype=float)
    A = np.column_stack([jj * np.log(jj), jj + 1.0])
    y = np.log([sups[j] for j in js])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return GrowthFit(float(coef[0]), float(np.exp(coef[1])), sups, tuple(js), res, False)


def truncation_orders(hbar: float, C: float, J: int, rule: str = "half") -> tuple[int, bool]:
    """Number of hbar orders kept by an optimal-truncation rule.

    ``rule="half"`` keeps ``j <= 1/(2 C hbar)``; ``rule="e"`` keeps
    ``j <= 1/(e C hbar)``.  The flag is set when the rule asks for more
    orders than the ``J`` available.
    """
    if C <= 0 or hbar <= 0:
        raise InputError("C and hbar must be positive")
    denom = {"half": 2.0, "e": math.e}[rule] * C * hbar
    jmax = math.floor(1.0 / denom + 1e-12)
    return (J, True) if jmax >= J else (jmax, False)


__all__ = [
    "ATOL", "Layout", "layout", "num_coeffs", "Jet", "jet_add", "jet_mul",
    "jet_reciprocal", "jet_derive", "jet_embed", "jet_compose", "jet_translate",
    "jet_linear_part", "jet_invert_map", "HbarSymbol", "hsym_mul", "GrowthFit",
    "growth_fit", "torus_points", "truncation_orders",
]

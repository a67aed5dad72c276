"""Static figures for command-line reports.

Figures are written with the Agg backend and without timestamp or software
metadata so repeated runs produce identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "brgkernel",
}

PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_META)
    plt.close(fig)
    return path


def plot_growth(sups, fit, path) -> Path:
    """``log sup|a_j|`` against ``j`` with the fitted ``C^(j+1) j^(p j)`` curve."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        js = np.arange(len(sups))
        vals = np.asarray(sups, dtype=float)
        nz = vals > 0
        ax.semilogy(js[nz], vals[nz], "o-", label=r"$\sup|a_j|$")
        if fit is not None and not fit.degenerate:
            jj = np.linspace(max(1, min(fit.js)), max(fit.js), 100)
            ax.semilogy(jj, fit.C_hat ** (jj + 1) * jj ** (fit.p * jj), "--",
                        label=f"fit p={fit.p:.3f}")
        ax.set_xlabel("order j")
        ax.set_ylabel("sup over polydisc")
        ax.legend()
        return _save(fig, path)


def plot_decay(dist2, gauge_abs, hbar, fit, path) -> Path:
    """``-hbar log|gauge K|`` against ``|x - y|^2``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        y = -hbar * np.log(np.asarray(gauge_abs))
        ax.plot(dist2, y, "o", label="samples")
        if fit is not None:
            xx = np.linspace(0, max(dist2), 50)
            ax.plot(xx, fit.slope * xx + fit.intercept, "--", label=f"slope {fit.slope:.3f}")
        ax.set_xlabel(r"$|x-y|^2$")
        ax.set_ylabel(r"$-\hbar\,\log|K_{gauge}|$")
        ax.legend()
        return _save(fig, path)


def plot_compare(hbars, E, fit, path) -> Path:
    """``log E`` against ``1/hbar`` with the regression line."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = 1.0 / np.asarray(hbars, dtype=float)
        ax.semilogy(x, E, "o-", label="max gauge error")
        if fit and np.isfinite(fit.get("slope", np.nan)):
            xx = np.linspace(x.min(), x.max(), 50)
            ax.semilogy(xx, np.exp(-fit["slope"] * xx + fit["intercept"]), "--",
                        label=f"rate {fit['slope']:.4f}, R2 {fit['r2']:.3f}")
        ax.set_xlabel(r"$1/\hbar$")
        ax.set_ylabel("E")
        ax.legend()
        return _save(fig, path)


def plot_projection(hbars, series: dict, path) -> Path:
    """Projection defects against ``1/hbar``, one line per named series."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = 1.0 / np.asarray(hbars, dtype=float)
        for name, vals in series.items():
            v = np.maximum(np.asarray(vals, dtype=float), 1e-300)
            ax.semilogy(x, v, "o-", label=name)
        ax.set_xlabel(r"$1/\hbar$")
        ax.set_ylabel("defect")
        ax.legend()
        return _save(fig, path)


def plot_cp1(ks, density, offdiag, C_hat, path) -> Path:
    """On-diagonal density and off-diagonal decay of the CP^1 model."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.0, 3.0))
        ks = np.asarray(ks, dtype=float)
        a1.plot(ks, density, "o-")
        a1.set_xlabel("k")
        a1.set_ylabel("density")
        a2.semilogy(ks, offdiag, "o-", label="|K| gauge")
        if np.isfinite(C_hat):
            a2.semilogy(ks, np.exp(-ks / C_hat), "--", label=f"exp(-k/{C_hat:.3f})")
        a2.set_xlabel("k")
        a2.legend()
        return _save(fig, path)


__all__ = ["plot_growth", "plot_decay", "plot_compare", "plot_projection", "plot_cp1", "STYLE"]

"""Command-line driver: ``brgkernel {symbol,kernel,project,compare,cp1}``.

Every command reads a YAML (or JSON) configuration, applies the overrides
``--hbar``, ``--order`` and ``--out``, and writes JSON reports, CSV tables
and PNG figures into the output directory.  Exit codes: 0 when all
configured thresholds pass, 1 when one fails, 2 on invalid input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bergman import (BergmanSymbol, ChiSpec, GridSpec, bergman_symbol, kernel_eval,
                      projection_matrix)
from .errors import InputError
from .oracle import (compare_report, cp1_study, decay_fit, gram_matrix, near_diagonal_pairs,
                     oracle_projection)
from .quantize import WEYL_SHIFT
from .series import growth_fit
from .weight import (Weight, bargmann_weight, fubini_study_weight, perturbed_weight)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2

CONVENTIONS = {
    "kernel": "k(x,y) = (2/(pi hbar))^n exp(2(psi(x,ybar) - Phi(y))/hbar) a(x,ybar) det(d_x d_w psi)",
    "gauge": "exp(-(Phi(x)+Phi(y))/hbar) K(x,ybar), K = k exp(2 Phi(y)/hbar)",
    "measure": "L^2(exp(-2 Phi/hbar) L(dz))",
    "u_half_generator": "exp(2 t c hbar d_theta (d_x - d_y)), c = i/2",
    "weyl_shift_c": [WEYL_SHIFT.real, WEYL_SHIFT.imag],
    "chi": "smooth step, 1 on |t| <= plateau*radius, 0 beyond radius",
    "peak_bump": "exp(1 - 1/(1-|t|^2/rho^2)), unit quadrature mass",
    "compare_slope": "decay rate 1/C2 in log E = -1/(C2 hbar) + const",
}

BUILTIN_WEIGHTS = {
    "bargmann": lambda cfg: bargmann_weight(),
    "perturbed": lambda cfg: perturbed_weight(float(cfg.get("eps", 0.1))),
    "fubini_study": lambda cfg: fubini_study_weight(int(cfg.get("cap", 16))),
}


# ---------------------------------------------------------------------------
# config and output helpers


def load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise InputError(f"malformed config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InputError("config must be a mapping")
    return cfg, p.resolve().parent


def _parse_hbar(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise InputError(f"bad --hbar value {text!r}") from exc


def apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.hbar is not None:
        cfg["hbar"] = _parse_hbar(args.hbar)
    if args.order is not None:
        cfg["J"] = args.order
    if args.out is not None:
        cfg["out"] = args.out
    return cfg


def hbar_list(cfg: dict, default) -> list[float]:
    h = cfg.get("hbar", default)
    h = [float(v) for v in (h if isinstance(h, (list, tuple)) else [h])]
    if not h or any(not (v > 0) for v in h):
        raise InputError("hbar values must be positive")
    if any(h[i + 1] >= h[i] for i in range(len(h) - 1)):
        raise InputError("hbar list must be strictly decreasing")
    return h


def positive(cfg: dict, key: str, default, kind=float):
    v = cfg.get(key, default)
    if v is None:
        return None
    try:
        v = kind(v)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{key} must be a number") from exc
    if v <= 0:
        raise InputError(f"{key} must be positive")
    return v


def resolve_weight(cfg: dict, root: Path) -> Weight:
    entry = cfg.get("weight", "bargmann")
    if isinstance(entry, dict):
        if "builtin" in entry:
            name = entry["builtin"]
            if name not in BUILTIN_WEIGHTS:
                raise InputError(f"unknown builtin weight {name!r}")
            return BUILTIN_WEIGHTS[name](entry)
        return Weight.from_dict(entry)
    if entry in BUILTIN_WEIGHTS:
        return BUILTIN_WEIGHTS[entry]({})
    path = (root / entry) if not Path(entry).is_absolute() else Path(entry)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read weight file {entry}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"weight file {entry} is not valid JSON: {exc}") from exc
    try:
        return Weight.from_dict(data, name=data.get("name", path.stem))
    except (KeyError, TypeError) as exc:
        raise InputError(f"weight file {entry} is missing field {exc}") from exc


def resolve_symbol(cfg: dict, root: Path) -> BergmanSymbol:
    if cfg.get("symbol"):
        path = root / cfg["symbol"]
        try:
            return BergmanSymbol.from_dict(json.loads(path.read_text()))
        except OSError as exc:
            raise InputError(f"cannot read symbol file {cfg['symbol']}: {exc}") from exc
    w = resolve_weight(cfg, root)
    J = int(cfg.get("J", 3))
    if J < 0:
        raise InputError("order J must be >= 0")
    cap = cfg.get("cap")
    return bergman_symbol(w, J, degree=int(cfg.get("degree", 6)),
                          cap=None if cap is None else int(cap))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(float(obj.real)), _clean(float(obj.imag))]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")
    return path


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def manifest(command: str, cfg: dict) -> dict:
    canon = json.dumps(_clean(cfg), sort_keys=True)
    import matplotlib
    import scipy
    return {
        "command": command,
        "config": _clean(cfg),
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "versions": {"brgkernel": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "matplotlib": matplotlib.__version__,
                     "python": ".".join(platform.python_version_tuple()[:2])},
        "conventions": CONVENTIONS,
    }


def out_dir(cfg: dict) -> Path:
    p = Path(cfg.get("out", "out"))
    p.mkdir(parents=True, exist_ok=True)
    return p


def kernel_rows(x, y, k, gauge_abs):
    for xi, yi, ki, gi in zip(x, y, k, gauge_abs):
        yield (xi.real, xi.imag, yi.real, yi.imag, ki.real, ki.imag, gi)


KERNEL_HEADER = ["x_re", "x_im", "y_re", "y_im", "k_re", "k_im", "gauge_weighted_abs"]


class Checks:
    """Collects named threshold checks."""

    def __init__(self):
        self.items = []

    def add(self, name: str, ok: bool, value=None):
        self.items.append({"name": name, "pass": bool(ok), "value": value})

    @property
    def failed(self):
        return [c["name"] for c in self.items if not c["pass"]]

    def exit_code(self) -> int:
        for name in self.failed:
            print(f"FAIL: {name}", file=sys.stderr)
        return EXIT_FAIL if self.failed else EXIT_OK


# ---------------------------------------------------------------------------
# commands


def cmd_symbol(cfg: dict, root: Path) -> int:
    """Bergman symbol JSON, coefficient table and growth fit."""
    s = resolve_symbol(cfg, root)
    out = out_dir(cfg)
    man = manifest("symbol", cfg)
    rows, lines = [], [f"# Bergman symbol of {s.weight.name}, J = {s.J}",
                        "# j  exponents  re  im"]
    n2 = 2 * s.n
    for j, t in enumerate(s.a.terms):
        items = list(t.items(tol=1e-15))
        for al, v in items:
            rows.append((j, *al, float(v.real), float(v.imag)))
            lines.append(f"{j:2d}  {' '.join(str(e) for e in al):>{2 * n2}}  "
                         f"{v.real: .16e}  {v.imag: .16e}")
        if not items:
            lines.append(f"{j:2d}  (zero)")
    (out / "coefficients.txt").write_text("\n".join(lines) + "\n")
    vars_ = [f"x{i}" for i in range(s.n)] + [f"w{i}" for i in range(s.n)]
    write_csv(out / "coefficients.csv", ["j", *vars_, "re", "im"], rows)
    radius = float(cfg.get("growth_radius", min(0.1, 0.5 * s.radius)))
    growth = {"radius": radius}
    fit = None
    if s.J >= 4:
        fit = growth_fit(s.a, radius, seed=int(cfg.get("seed", 0)))
        growth.update(fit.to_dict())
        growth["status"] = "degenerate: all-zero tail" if fit.degenerate else "fitted"
    else:
        growth["status"] = "skipped: order J < 4"
    from .plotting import plot_growth
    if fit is not None:
        plot_growth(fit.sups, fit, out / "growth.png")
    write_json(out / "symbol.json", {"manifest": man, **s.to_dict()})
    write_json(out / "growth.json", {"manifest": man, "growth": growth})
    write_json(out / "manifest.json", man)
    print(f"symbol: J={s.J} a0_defect={s.provenance['a0_defect']:.3g} "
          f"symmetry_defect={s.provenance['symmetry_defect']:.3g} growth={growth['status']}")
    checks = Checks()
    th = cfg.get("thresholds", {}) or {}
    if "p_max" in th and fit is not None and not fit.degenerate:
        checks.add(f"growth p <= {th['p_max']}", fit.p <= float(th["p_max"]), fit.p)
    checks.add("Hermitian symmetry", s.provenance["symmetry_defect"] < float(th.get("symmetry_max", 1e-10)),
               s.provenance["symmetry_defect"])
    return checks.exit_code()


def _kernel_points(s: BergmanSymbol, radius: float, per_axis: int) -> np.ndarray:
    t = np.linspace(-radius, radius, per_axis)
    X, Y = np.meshgrid(t, t, indexing="ij")
    z = (X + 1j * Y).ravel()
    z = z[np.abs(z) <= radius + 1e-14]
    pts = np.tile(np.array(s.weight.base, dtype=complex), (len(z), 1))
    pts[:, 0] += z
    return pts


def cmd_kernel(cfg: dict, root: Path) -> int:
    """Kernel samples on a small grid and the Gaussian decay fit."""
    from .plotting import plot_decay
    s = resolve_symbol(cfg, root)
    hb = hbar_list(cfg, [0.1])
    radius = positive(cfg, "radius", min(0.3, 0.45 * s.radius))
    if 2 * radius > s.radius:
        radius = 0.45 * s.radius
    per_axis = int(positive(cfg, "points", 7, int))
    pts = _kernel_points(s, radius, per_axis)
    P = len(pts)
    I, K = np.meshgrid(np.arange(P), np.arange(P), indexing="ij")
    X, Y = pts[I.ravel()], pts[K.ravel()]
    out = out_dir(cfg)
    man = manifest("kernel", cfg)
    lo, hi = s.weight.levi_range(2 * radius)
    checks = Checks()
    fits = []
    for h in hb:
        k = kernel_eval(s, h, X, Y)
        g = np.abs(kernel_eval(s, h, X, Y, gauge=True))
        tag = f"{h:.6g}"
        write_csv(out / f"kernel_hbar{tag}.csv", KERNEL_HEADER, kernel_rows(X[:, 0], Y[:, 0], k, g))
        off = np.abs(X - Y).max(axis=1) > 1e-12
        fit = decay_fit(lambda a, b: kernel_eval(s, h, a, b, gauge=True), (X[off], Y[off]), h)
        d2 = (np.abs(X[off] - Y[off]) ** 2).sum(axis=1)
        plot_decay(d2, g[off], h, fit, out / f"decay_hbar{tag}.png")
        fits.append({"hbar": h, "slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2,
                     "samples": fit.samples})
        checks.add(f"decay slope in [m-0.2, m_max+0.2] at hbar={tag}",
                   lo - 0.2 <= fit.slope <= hi + 0.2, fit.slope)
    rep = {"manifest": man, "weight_id": s.weight.name, "J": s.J, "levi_min": lo, "levi_max": hi,
           "radius": radius, "decay": fits, "checks": checks.items}
    write_json(out / "kernel.json", rep)
    write_json(out / "manifest.json", man)
    for f in fits:
        print(f"kernel: hbar={f['hbar']:.6g} decay slope={f['slope']:.6f} (Levi range [{lo:.4f}, {hi:.4f}])")
    return checks.exit_code()


def _log_slope(hbars, vals) -> float:
    x = 1.0 / np.asarray(hbars, dtype=float)
    y = np.log(np.maximum(np.asarray(vals, dtype=float), 1e-300))
    return float(np.polyfit(x, y, 1)[0]) if len(x) >= 2 else float("nan")


def cmd_project(cfg: dict, root: Path) -> int:
    """Discretized cutoff projection: self-adjointness, reproduction, oracle distance."""
    from .plotting import plot_projection
    s = resolve_symbol(cfg, root)
    if s.n != 1:
        raise InputError("project supports one complex dimension")
    hb = hbar_list(cfg, [0.2, 0.1, 0.05])
    R = positive(cfg, "R", min(1.6, s.radius))
    chi_r = positive(cfg, "chi_radius", 0.9 * R)
    plateau = float(cfg.get("chi_plateau", 0.5))
    nodes = cfg.get("nodes")
    r_in = positive(cfg, "interior", 0.5 * R)
    jmax = int(cfg.get("monomials", 6))
    use_oracle = bool(cfg.get("oracle", True))
    grid = GridSpec(R, complex(s.weight.base[0]), None if nodes is None else int(nodes))
    chi = ChiSpec(chi_r, plateau)
    out = out_dir(cfg)
    man = manifest("project", cfg)
    rows, metrics = [], []
    for h in hb:
        P = projection_matrix(s, grid, h, chi)
        herm = P.hermitian_defect()
        rep = [P.reproducing_defect(j, r_in) for j in range(jmax + 1)]
        idem = P.idempotency_defect(r_in)
        od = float("nan")
        if use_oracle:
            o = gram_matrix(s.weight, h, N=cfg.get("N"), R=cfg.get("R_dom"))
            Po = oracle_projection(o, grid, s.weight)
            m = P.interior(r_in)
            od = float(np.linalg.norm((P.M - Po.M)[np.ix_(m, m)], 2))
        metrics.append({"hbar": h, "nodes": len(P.nodes), "hermitian_defect": herm,
                        "reproducing_defect": rep, "idempotency_defect": idem, "oracle_distance": od})
        rows.append((h, len(P.nodes), herm, max(rep), idem, od))
        i0 = int(np.argmin(np.abs(P.nodes - grid.center)))
        q = P.weights
        gk = P.M[i0] / np.sqrt(q[i0] * q)
        k = gk * np.exp((P.phi[i0] - P.phi) / h)
        xs = np.full(len(P.nodes), P.nodes[i0])
        write_csv(out / f"projection_row_hbar{h:.6g}.csv", KERNEL_HEADER,
                  kernel_rows(xs, P.nodes, k, np.abs(gk)))
    write_csv(out / "project.csv", ["hbar", "nodes", "hermitian_defect", "max_reproducing_defect",
                                    "idempotency_defect", "oracle_distance"], rows)
    series = {"max reproducing defect": [r[3] for r in rows], "idempotency": [r[4] for r in rows]}
    if use_oracle:
        series["oracle distance"] = [r[5] for r in rows]
    plot_projection(hb, series, out / "project.png")
    th = cfg.get("thresholds", {}) or {}
    checks = Checks()
    hmax = float(th.get("hermitian_max", 1e-6))
    checks.add(f"Hermitian defect < {hmax:g}", all(m["hermitian_defect"] < hmax for m in metrics),
               max(m["hermitian_defect"] for m in metrics))
    slope = _log_slope(hb, [r[3] for r in rows])
    if len(hb) >= 2:
        checks.add("reproducing defect log-slope < 0", slope < 0, slope)
        if use_oracle:
            ods = [r[5] for r in rows]
            checks.add("oracle distance decreasing", all(ods[i + 1] < ods[i] for i in range(len(ods) - 1)), ods)
    write_json(out / "project.json", {"manifest": man, "weight_id": s.weight.name, "R": R,
                                      "chi_radius": chi_r, "chi_plateau": plateau, "interior": r_in,
                                      "metrics": metrics, "reproducing_log_slope": slope,
                                      "checks": checks.items})
    write_json(out / "manifest.json", man)
    for m in metrics:
        print(f"project: hbar={m['hbar']:.6g} nodes={m['nodes']} herm={m['hermitian_defect']:.3g} "
              f"repro={max(m['reproducing_defect']):.3g} oracle={m['oracle_distance']:.3g}")
    return checks.exit_code()


def cmd_compare(cfg: dict, root: Path) -> int:
    """Symbol kernel against the Gram oracle over a decreasing hbar list."""
    from .plotting import plot_compare
    s = resolve_symbol(cfg, root)
    hb = hbar_list(cfg, [1 / 20, 1 / 40, 1 / 80])
    pc = cfg.get("pairs", {}) or {}
    pairs = near_diagonal_pairs(complex(s.weight.base[0]), float(pc.get("radius", 0.25)),
                                float(pc.get("sep", 0.2)))
    if s.n != 1:
        raise InputError("compare supports one complex dimension")
    rep = compare_report(s, hb, pairs, N=int(cfg.get("N", 40)), R=cfg.get("R_dom"),
                         C=cfg.get("C"), floor=float(cfg.get("floor", 1e-8)))
    out = out_dir(cfg)
    man = manifest("compare", cfg)
    write_csv(out / "compare_pairs.csv",
              ["hbar", "x_re", "x_im", "y_re", "y_im", "oracle_re", "oracle_im", "symbol_re",
               "symbol_im", "gauge_abs_diff"],
              [(h, x.real, x.imag, y.real, y.imag, a.real, a.imag, b.real, b.imag, d)
               for h, x, y, a, b, d in rep.rows])
    write_csv(out / "compare.csv", ["hbar", "E"], list(zip(rep.hbar_list, rep.E)))
    plot_compare(rep.hbar_list, rep.E, rep.fit, out / "compare.png")
    th = cfg.get("thresholds", {}) or {}
    checks = Checks()
    if rep.status == "exact":
        checks.add("kernels agree to the quadrature floor", True, max(rep.E))
    else:
        checks.add("E strictly decreasing", rep.monotone, rep.E)
        if "slope_min" in th:
            checks.add(f"slope > {th['slope_min']}", rep.fit["slope"] > float(th["slope_min"]),
                       rep.fit["slope"])
        if "r2_min" in th:
            checks.add(f"r2 > {th['r2_min']}", rep.fit["r2"] > float(th["r2_min"]), rep.fit["r2"])
    if "E_last_max" in th:
        checks.add(f"E(last hbar) < {th['E_last_max']}", rep.E[-1] < float(th["E_last_max"]), rep.E[-1])
    write_json(out / "report.json", {"manifest": man, **rep.to_dict(), "checks": checks.items})
    write_json(out / "manifest.json", man)
    print(f"compare: status={rep.status} E={['%.3e' % e for e in rep.E]} "
          f"slope={rep.fit['slope']:.4g} r2={rep.fit['r2']:.4f}")
    return checks.exit_code()


def _k_range(cfg: dict) -> list[int]:
    """``k`` may be a list, an ``"a..b"`` range string, ``{min, max}`` or an upper bound."""
    k = cfg.get("k", "1..20")
    try:
        if isinstance(k, dict):
            ks = list(range(int(k.get("min", 1)), int(k.get("max", 20)) + 1))
        elif isinstance(k, str):
            a, b = k.split("..")
            ks = list(range(int(a), int(b) + 1))
        elif isinstance(k, (list, tuple)):
            ks = [int(v) for v in k]
        else:
            ks = list(range(1, int(k) + 1))
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad k range {k!r}") from exc
    if not ks:
        raise InputError("empty k range")
    if any(v < 1 for v in ks):
        raise InputError("k must be at least 1")
    return ks


def cmd_cp1(cfg: dict, root: Path) -> int:
    """CP^1 desk model: dimensions, density fit, off-diagonal decay."""
    from .plotting import plot_cp1
    ks = _k_range(cfg)
    pair = cfg.get("pair", [0.5, -0.5])
    res = cp1_study(ks, fit_from=int(cfg.get("fit_from", 8)), pair=(complex(pair[0]), complex(pair[1])),
                    probe_radius=float(cfg.get("probe_radius", 2.0)))
    out = out_dir(cfg)
    man = manifest("cp1", cfg)
    write_csv(out / "cp1.csv", ["k", "dim", "density", "density_spread", "offdiag_gauge_abs"],
              list(zip(res.ks, res.dims, res.density, res.density_spread, res.offdiag)))
    plot_cp1(res.ks, res.density, res.offdiag, res.C_hat, out / "cp1.png")
    th = cfg.get("thresholds", {}) or {}
    checks = Checks()
    checks.add("dim = k + 1", all(d == k + 1 for k, d in zip(res.ks, res.dims)))
    spread = max(res.density_spread)
    checks.add("density constant", spread < float(th.get("spread_max", 1e-10)), spread)
    if math.isfinite(res.fit_residual):
        checks.add("density fit residual", res.fit_residual < float(th.get("fit_residual_max", 0.01)),
                   res.fit_residual)
    checks.add("C finite", math.isfinite(res.C_hat), res.C_hat)
    write_json(out / "cp1.json", {"manifest": man, **res.to_dict(), "checks": checks.items})
    write_json(out / "manifest.json", man)
    print(f"cp1: k={res.ks[0]}..{res.ks[-1]} c0={res.c0:.10g} c1={res.c1:.10g} "
          f"residual={res.fit_residual:.3g} C_hat={res.C_hat:.6g}")
    return checks.exit_code()


COMMANDS = {"symbol": cmd_symbol, "kernel": cmd_kernel, "project": cmd_project,
            "compare": cmd_compare, "cp1": cmd_cp1}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="brgkernel", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        sp.add_argument("--config", help="YAML or JSON configuration file")
        sp.add_argument("--hbar", help="comma-separated, strictly decreasing hbar values")
        sp.add_argument("--order", type=int, help="expansion order J")
        sp.add_argument("--out", help="output directory")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        cfg, root = load_config(args.config)
        cfg = apply_overrides(cfg, args)
        return COMMANDS[args.command](cfg, root)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

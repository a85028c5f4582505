"""Algebraic speed systems: c_KPP, c_BRR, perturbed witnesses and the strip speed c_L.

Real systems are solved as intersections, in the (beta, alpha) plane, of the
circle coming from the field equation with the curve coming from the road and
exchange equations.  The complex strip system is reduced to two equations in
(alpha, beta) and solved by multi-start Newton.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import ModelParams

SPEED_TOL = 1e-8
ROOT_TOL = 1e-12


class DispersionError(RuntimeError):
    pass


@dataclass(frozen=True)
class RealDispersion:
    c: float
    alpha: float
    beta: float
    gamma: float
    eta: float = 0.0
    eps: float = 0.0
    residual: float = 0.0


@dataclass(frozen=True)
class ComplexDispersion:
    c: float
    L: float
    alpha: complex
    beta: complex
    gamma1: complex
    gamma2: complex
    residual: float = 0.0

    def conjugate(self) -> "ComplexDispersion":
        return ComplexDispersion(self.c, self.L, self.alpha.conjugate(), self.beta.conjugate(),
                                 self.gamma1.conjugate(), self.gamma2.conjugate(), self.residual)


def c_kpp(params: ModelParams) -> float:
    return 2.0 * math.sqrt(params.d * params.fprime0)


# ---------------------------------------------------------------- real system

def gamma_of(beta, eta: float, eps: float, params: ModelParams):
    """Road/field amplitude ratio at equality in the exchange condition."""
    den = _gamma_den(beta, eta, eps, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, params.mu * (1.0 + eta) / den, np.nan)


def _gamma_den(beta, eta, eps, params):
    d, nu = params.d, params.nu
    beta = np.asarray(beta, dtype=float)
    return d * beta - d * eps * (1.0 + eta) + nu * (1.0 - eps) * (1.0 + eta)


def _curve(c, beta, eta, eps, params):
    """Both curve branches (alpha-, alpha+) as arrays, NaN where undefined."""
    d, D, mu, nu = params.d, params.D, params.mu, params.nu
    beta = np.asarray(beta, dtype=float)
    den = _gamma_den(beta, eta, eps, params)
    num = d * beta - d * eps * (1.0 + eta) - 2.0 * nu * eps * (1.0 + eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = c * c + 4.0 * D * mu * num / den - 4.0 * D * D * eps
        ok = (den > 0) & (disc >= 0)
        root = np.sqrt(np.where(ok, disc, np.nan))
    return (c - root) / (2.0 * D), (c + root) / (2.0 * D)


def curve_alpha(c: float, beta: float, eta: float, eps: float, params: ModelParams):
    """Roots (alpha-, alpha+) of the road equation, or None outside the curve's domain."""
    if c < 0 or 1.0 + eta <= 0:
        raise ValueError("need c >= 0 and 1 + eta > 0")
    am, ap = _curve(c, beta, eta, eps, params)
    if not np.isfinite(ap):
        return None
    return float(am), float(ap)


def _circle(c, beta, params):
    d, fp = params.d, params.fprime0
    r2 = (c * c - 4.0 * d * fp) / (4.0 * d * d)
    beta = np.asarray(beta, dtype=float)
    with np.errstate(invalid="ignore"):
        s = np.sqrt(np.where(r2 - beta * beta >= 0, r2 - beta * beta, np.nan))
    centre = c / (2.0 * d)
    return centre - s, centre + s


def circle_radius(c: float, params: ModelParams) -> float | None:
    r2 = (c * c - 4.0 * params.d * params.fprime0) / (4.0 * params.d ** 2)
    return math.sqrt(r2) if r2 >= 0 else None


def circle_alpha(c: float, beta: float, params: ModelParams):
    """Roots of -d alpha^2 + c alpha = fprime0 + d beta^2, or None."""
    if c < 0:
        raise ValueError("need c >= 0")
    r = circle_radius(c, params)
    if r is None or abs(beta) > r:
        return None
    lo, hi = _circle(c, beta, params)
    return float(lo), float(hi)


def real_residuals(c, alpha, beta, gamma, eta, eps, params: ModelParams) -> np.ndarray:
    """Residuals of the (eta, eps)-system taken with equality; the base system at eta = eps = 0."""
    d, D, mu, nu, fp = params.d, params.D, params.mu, params.nu, params.fprime0
    return np.array([
        alpha * c - D * alpha ** 2 - D * eps - nu * gamma * (1.0 + eps) + mu,
        alpha * c - d * alpha ** 2 - fp - d * beta ** 2,
        d * gamma * (beta / (1.0 + eta) - eps) - mu + nu * gamma * (1.0 - eps),
    ])


def _branch_gap(c, beta, eta, eps, params, s_circle, s_curve):
    lo, hi = _circle(c, beta, params)
    am, ap = _curve(c, beta, eta, eps, params)
    return (hi if s_circle > 0 else lo) - (ap if s_curve > 0 else am)


def _domain_edges(fun, grid):
    """Refine transitions between defined and undefined samples of ``fun`` by bisection."""
    vals = fun(grid)
    fin = np.isfinite(vals)
    edges = []
    for k in np.nonzero(fin[:-1] != fin[1:])[0]:
        a, b = grid[k], grid[k + 1]
        good_left = fin[k]
        for _ in range(80):
            m = 0.5 * (a + b)
            if np.isfinite(fun(np.array([m]))[0]) == good_left:
                a = m
            else:
                b = m
            if b - a < 1e-15 * max(1.0, abs(m)):
                break
        edges.append(a if good_left else b)
    return edges


def _roots_on_branch(fun, lo, hi, n_grid, refine):
    """Zeros of ``fun`` on [lo, hi] found by scan, extremum refinement and Brent."""
    grid = np.linspace(lo, hi, n_grid)
    pts = set(grid.tolist()) | set(_domain_edges(fun, grid))
    for _ in range(refine):
        xs = np.array(sorted(pts))
        g = fun(xs)
        fin = np.isfinite(g)
        new = []
        ok = fin[:-2] & fin[1:-1] & fin[2:]
        with np.errstate(invalid="ignore"):
            is_min = ok & (g[1:-1] <= g[:-2]) & (g[1:-1] <= g[2:])
            is_max = ok & (g[1:-1] >= g[:-2]) & (g[1:-1] >= g[2:])
        for k in np.nonzero(is_min | is_max)[0] + 1:
            sgn = 1.0 if is_min[k - 1] else -1.0
            res = minimize_scalar(lambda b: sgn * fun(np.array([b]))[0],
                                  bounds=(xs[k - 1], xs[k + 1]), method="bounded",
                                  options={"xatol": 1e-14})
            if np.isfinite(res.fun):
                new.append(float(res.x))
        if not new:
            break
        pts |= set(new)
    xs = np.array(sorted(pts))
    g = fun(xs)
    roots = []
    fin = np.isfinite(g)
    with np.errstate(invalid="ignore"):
        cand = (fin[:-1] & (g[:-1] == 0)) | (fin[:-1] & fin[1:] & (g[:-1] * g[1:] < 0))
    for k in np.nonzero(cand)[0]:
        ga, gb = g[k], g[k + 1]
        if not (np.isfinite(ga) and np.isfinite(gb)):
            if np.isfinite(ga) and ga == 0:
                roots.append(xs[k])
            continue
        if ga == 0:
            roots.append(xs[k])
        elif ga * gb < 0:
            roots.append(brentq(lambda b: fun(np.array([b]))[0], xs[k], xs[k + 1],
                                xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))
    if np.isfinite(g[-1]) and g[-1] == 0:
        roots.append(xs[-1])
    return roots


def _polish(c, beta, eta, eps, params, s_circle, s_curve):
    """One-dimensional Newton on the branch gap to push |gap| below ROOT_TOL."""
    f = lambda b: _branch_gap(c, np.array([b]), eta, eps, params, s_circle, s_curve)[0]
    b = beta
    for _ in range(8):
        g = f(b)
        if not np.isfinite(g) or abs(g) <= ROOT_TOL:
            break
        h = 1e-7 * max(1.0, abs(b))
        slope = (f(b + h) - f(b - h)) / (2 * h)
        if not np.isfinite(slope) or slope == 0:
            break
        nb = b - g / slope
        if not np.isfinite(f(nb)) or abs(f(nb)) >= abs(g):
            break
        b = nb
    return b


def all_intersections(c: float, eta: float, eps: float, params: ModelParams,
                      n_grid: int = 2048, refine: int = 2) -> list[RealDispersion]:
    """Every admissible (alpha > 0, gamma > 0) solution, sorted by beta then alpha."""
    r = circle_radius(c, params)
    if r is None:
        return []
    out = []
    for s_circle in (-1.0, 1.0):
        for s_curve in (-1.0, 1.0):
            fun = lambda b, sc=s_circle, su=s_curve: _branch_gap(c, b, eta, eps, params, sc, su)
            for beta in _roots_on_branch(fun, -r, r, n_grid, refine):
                beta = _polish(c, beta, eta, eps, params, s_circle, s_curve)
                lo, hi = _circle(c, np.array([beta]), params)
                alpha = float((hi if s_circle > 0 else lo)[0])
                gamma = float(gamma_of(beta, eta, eps, params))
                if not (alpha > 0 and gamma > 0 and np.isfinite(gamma)):
                    continue
                res = real_residuals(c, alpha, beta, gamma, eta, eps, params)
                out.append(RealDispersion(c, alpha, float(beta), gamma, eta, eps,
                                          float(np.max(np.abs(res)))))
    out.sort(key=lambda w: (w.beta, w.alpha))
    uniq = []
    for w in out:
        if uniq and abs(w.beta - uniq[-1].beta) < 1e-10 and abs(w.alpha - uniq[-1].alpha) < 1e-10:
            continue
        uniq.append(w)
    return uniq


def intersection_witness(c: float, eta: float, eps: float, params: ModelParams,
                         n_grid: int = 2048, refine: int = 2) -> RealDispersion | None:
    """A solution with alpha, gamma > 0, preferring the smallest beta > 0."""
    if c < c_kpp(params):
        raise ValueError(f"c={c} below c_KPP={c_kpp(params)}: the circle is empty")
    sols = all_intersections(c, eta, eps, params, n_grid, refine)
    if not sols:
        return None
    positive = [w for w in sols if w.beta > 0]
    return positive[0] if positive else sols[0]


def c_brr(params: ModelParams, tol: float = SPEED_TOL) -> float:
    """Smallest speed for which the base real system has a solution with alpha, gamma > 0."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    ck = c_kpp(params)
    if params.D <= 2.0 * params.d:
        return ck
    exists = lambda c: intersection_witness(c, 0.0, 0.0, params) is not None
    hi = ck
    for _ in range(11):
        if exists(hi):
            break
        hi *= 2.0
    else:
        raise DispersionError("no witness found below 2**10 * c_KPP")
    lo = ck
    if exists(lo):
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if exists(mid):
            hi = mid
        else:
            lo = mid
    # existence is assumed monotone in c; check it around the returned boundary
    if not exists(hi + 2 * tol) or (hi - 2 * tol > ck and exists(hi - 2 * tol)):
        raise DispersionError(f"existence predicate not monotone near c={hi}")
    return hi


def perturbed_witness(c: float, eta: float, params: ModelParams, eps: float = 0.0):
    """Witness of the eta- (and optionally eps-) perturbed system plus its gap to eta = eps = 0.

    Returns ``(witness, d_alpha, d_beta)``.
    """
    base = intersection_witness(c, 0.0, 0.0, params)
    w = intersection_witness(c, eta, eps, params)
    if w is None or base is None or not (w.alpha > 0 and w.beta > 0 and w.gamma > 0):
        raise DispersionError(f"no perturbed witness at c={c}, eta={eta}, eps={eps}")
    return w, abs(w.alpha - base.alpha), abs(w.beta - base.beta)


# ------------------------------------------------------------- complex system

def _eliminate_gammas(beta, L, params):
    e = np.exp(-2.0 * beta * L)
    den = params.nu * (1.0 - e) + params.d * beta * (1.0 + e)
    g1 = params.mu / den
    return g1, -g1 * e


def z_residuals(sol: ComplexDispersion, params: ModelParams) -> np.ndarray:
    """(z1, z2, z3, z4) of the strip system; z2 uses the penalized rate fprime0 - delta."""
    a, b, g1, g2, c, L = sol.alpha, sol.beta, sol.gamma1, sol.gamma2, sol.c, sol.L
    d, D, mu, nu = params.d, params.D, params.mu, params.nu
    g0 = g1 + g2
    return np.array([
        a * c - D * a * a - nu * g0 + mu,
        a * c - d * (a * a + b * b) - params.rate,
        d * b * (g1 - g2) - mu + nu * g0,
        g1 * np.exp(-b * L) + g2 * np.exp(b * L),
    ], dtype=complex)


def _reduced(x, c, L, params):
    a, b = x
    d, D, mu, nu = params.d, params.D, params.mu, params.nu
    e = np.exp(-2.0 * b * L)
    den = nu * (1.0 - e) + d * b * (1.0 + e)
    g0 = mu * (1.0 - e) / den
    F = np.array([a * c - D * a * a - nu * g0 + mu,
                  a * c - d * (a * a + b * b) - params.rate])
    de = -2.0 * L * e
    dden = -nu * de + d * (1.0 + e) + d * b * de
    dg0 = mu * (-de * den - (1.0 - e) * dden) / den ** 2
    J = np.array([[c - 2.0 * D * a, -nu * dg0],
                  [c - 2.0 * d * a, -2.0 * d * b]])
    return F, J


def _newton(x0, c, L, params, max_iter=200):
    x = np.array(x0, dtype=complex)
    F, J = _reduced(x, c, L, params)
    nrm = np.max(np.abs(F))
    for _ in range(max_iter):
        if not np.isfinite(nrm):
            return None
        if nrm <= 1e-14:
            break
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None
        t = 1.0
        for _ in range(30):
            xn = x + t * step
            with np.errstate(all="ignore"):
                Fn, Jn = _reduced(xn, c, L, params)
            nn = np.max(np.abs(Fn))
            if np.isfinite(nn) and nn < nrm:
                break
            t *= 0.5
        else:
            break
        x, F, J, nrm = xn, Fn, Jn, nn
    return x


def complex_seeds(params: ModelParams) -> list[tuple[complex, complex]]:
    """64 starting points clustered around the real critical pair of the penalized system."""
    pen = params.penalized()
    cb = c_brr(pen)
    w = intersection_witness(cb + 1e-6, 0.0, 0.0, pen)
    if w is None:  # D <= 2d: no road-driven critical pair; fall back to the KPP decay rate
        a0, b0 = math.sqrt(pen.fprime0 / pen.d), 0.1
    else:
        a0, b0 = w.alpha, max(w.beta, 1e-3)
    facs = (-2.0, -1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 2.0)
    return [(complex(a0, sa * a0), complex(b0, sb * b0)) for sa in facs for sb in facs]


def solve_complex(c: float, L: float, params: ModelParams,
                  seeds: list[tuple[complex, complex]] | None = None,
                  tol: float = 1e-10, principal_only: bool = False) -> list[ComplexDispersion]:
    """Constrained roots of the strip system at speed c, deduplicated and sorted.

    ``principal_only`` keeps roots with |Im beta| L < pi, i.e. V changes sign
    at most once across the strip at fixed x.
    """
    if L <= 0:
        raise ValueError("strip height must be positive")
    if seeds is None:
        seeds = complex_seeds(params)
    found: list[ComplexDispersion] = []
    for a0, b0 in seeds:
        with np.errstate(all="ignore"):
            x = _newton((a0, b0), c, L, params)
        if x is None:
            continue
        a, b = complex(x[0]), complex(x[1])
        if not (b.real > 0 and abs(b.imag) >= 1e-8 and abs(a.imag) >= 1e-8):
            continue
        if principal_only and abs(b.imag) * L >= math.pi:
            continue
        with np.errstate(all="ignore"):
            g1, g2 = _eliminate_gammas(b, L, params)
        sol = ComplexDispersion(c, L, a, b, complex(g1), complex(g2))
        res = float(np.max(np.abs(z_residuals(sol, params))))
        if not np.isfinite(res) or res > tol:
            continue
        found.append(ComplexDispersion(c, L, a, b, complex(g1), complex(g2), res))
    found.sort(key=lambda s: (s.beta.real, s.alpha.real, s.alpha.imag, s.beta.imag))
    uniq: list[ComplexDispersion] = []
    for s in found:
        if any(abs(s.alpha - u.alpha) < 1e-8 and abs(s.beta - u.beta) < 1e-8 for u in uniq):
            continue
        uniq.append(s)
    return uniq


def c_L(L: float, params: ModelParams, tol: float = SPEED_TOL, n_scan: int = 16) -> float:
    """Supremum of the speeds below c_BRR at which the strip system has constrained roots.

    Speeds are those of the penalized system (rate fprime0 - delta); with
    delta = 0 they coincide with c_KPP and c_BRR of ``params``.
    """
    pen = params.penalized()
    ck, cb = c_kpp(pen), c_brr(pen, tol=min(tol, SPEED_TOL))
    seeds = complex_seeds(params)
    has = lambda c: bool(solve_complex(c, L, params, seeds))
    if has(cb):
        raise DispersionError(f"constrained roots persist at c_BRR={cb}; cannot bracket c_L")
    # roots live in a window just below c_L that narrows as L grows, so probe
    # outward from c_BRR on a geometric ladder
    lo, hi = None, cb
    gap = max(tol, 1e-12)
    while gap < cb - ck:
        c = cb - gap
        if has(c):
            lo = c
            break
        hi = c
        gap *= 2.0 ** (4.0 / n_scan)
    if lo is None:
        raise DispersionError(f"L={L} too small: no speed in (c_KPP, c_BRR) admits constrained roots")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if has(mid):
            lo = mid
        else:
            hi = mid
    if not (ck < lo < cb):
        raise DispersionError(f"c_L={lo} outside ({ck}, {cb})")
    return lo

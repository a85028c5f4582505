"""Comparison-function certificates.

Supersolutions (radial, conical, asymptotically conical) and the truncated
complex subsolution are built explicitly and every defining inequality is
evaluated on a sampling grid with analytic derivatives.  A certificate stores
worst-case margins; it is valid when all margins are nonnegative up to
``MARGIN_TOL`` (equality conditions are met exactly in exact arithmetic).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import brentq, minimize_scalar

from . import dispersion as dp
from .geometry import Geometry, metric
from .model import ModelParams

MARGIN_TOL = 1e-12
R_START, R_MAX = 16.0, 2.0 ** 20
LAMBDA_MAX = 2.0 ** 40


# ------------------------------------------------------------------ reports

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+}j"
    return str(v)


def _report(header: dict, residuals: dict) -> str:
    lines = [f"{k}: {_fmt(v)}" for k, v in header.items()]
    lines.append("residuals:")
    lines += [f"  {k}: {_fmt(v)}" for k, v in residuals.items()]
    return "\n".join(lines) + "\n"


def _margins_csv(residuals: dict) -> str:
    rows = ["condition,value"] + [f"{k},{_fmt(v)}" for k, v in residuals.items()]
    return "\n".join(rows) + "\n"


# ------------------------------------------------------------------- cutoff

@dataclass(frozen=True)
class Smoothstep:
    """Quintic smoothstep 6s^5 - 15s^4 + 10s^3 clamped to [0, 1]; C^2."""

    sup_d1: float = 15.0 / 8.0
    sup_d2: float = 10.0 / math.sqrt(3.0)

    def __call__(self, s):
        s = np.clip(s, 0.0, 1.0)
        return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        inner = 30.0 * s * s * (1.0 - s) ** 2
        return np.where((s > 0) & (s < 1), inner, 0.0)

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        inner = 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
        return np.where((s > 0) & (s < 1), inner, 0.0)

    @property
    def sup_gap(self) -> float:
        """max over s in [0, 1] of phi(s) (1 - s)."""
        res = minimize_scalar(lambda s: -float(self(s)) * (1.0 - s), bounds=(0.0, 1.0),
                              method="bounded", options={"xatol": 1e-12})
        return float(-res.fun)


# ---------------------------------------------------------------------- Psi

@dataclass(frozen=True)
class Psi:
    """Angular profile (1/(1+eta)) (phi(k(|theta|-theta0)+1) e^{beta r (|theta|-theta0)} + eta)."""

    alpha: float
    beta: float
    eta: float
    R: float
    theta0: float
    cutoff: Smoothstep = field(default_factory=Smoothstep)

    @property
    def k(self) -> float:
        return math.sqrt(self.R) / self.theta0

    def parts(self, r, theta) -> dict:
        r = np.asarray(r, dtype=float)
        theta = np.asarray(theta, dtype=float)
        q = np.abs(theta) - self.theta0
        s = self.k * q + 1.0
        ph, ph1, ph2 = self.cutoff(s), self.cutoff.d1(s), self.cutoff.d2(s)
        with np.errstate(over="ignore"):
            E = np.exp(self.beta * r * q)
        w = 1.0 / (1.0 + self.eta)
        b, k = self.beta, self.k
        sg = np.sign(theta)
        return {
            "psi": w * (ph * E + self.eta),
            "dr": w * ph * b * q * E,
            "drr": w * ph * b * b * q * q * E,
            "dth": w * sg * (k * ph1 + ph * b * r) * E,
            "dthth": w * (k * k * ph2 + 2.0 * k * ph1 * b * r + ph * b * b * r * r) * E,
        }

    def __call__(self, r, theta):
        return self.parts(r, theta)["psi"]

    def tilde_laplacian(self, r, theta, parts=None):
        """e^{alpha r} Laplacian(e^{-alpha r} Psi) in polar coordinates."""
        p = self.parts(r, theta) if parts is None else parts
        r = np.asarray(r, dtype=float)
        a = self.alpha
        return (p["drr"] - 2 * a * p["dr"] + a * a * p["psi"] + p["dr"] / r
                - a * p["psi"] / r + p["dthth"] / (r * r))


def build_psi(alpha: float, beta: float, eta: float, R: float, theta0: float,
              cutoff: Smoothstep | None = None) -> Psi:
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if not R > 0:
        raise ValueError("R must be positive")
    return Psi(alpha, beta, eta, R, theta0, cutoff or Smoothstep())


def _sufficient_R(beta, alpha, eta, theta0, cutoff):
    """Smallest R = 16 * 2^k meeting both sufficient bounds on the cutoff terms, or None."""
    target = 0.5 * beta * beta * eta
    gap = cutoff.sup_gap
    R = R_START
    while R <= R_MAX:
        s1 = theta0 / math.sqrt(R) * gap * (beta * beta * theta0 + 2 * alpha * beta)
        s2 = 2 * beta * cutoff.sup_d1 / (math.sqrt(R) * theta0) + cutoff.sup_d2 / (R * theta0 ** 2)
        if s1 <= target and s2 <= target:
            return R
        R *= 2.0
    return None


def _theta_offsets(theta0, R, beta, r_max, n):
    """Offsets theta0 - |theta| in [0, theta0], dense in the cutoff and boundary layers."""
    k1 = n // 3
    k2 = n // 3
    k3 = n - k1 - k2
    lo = 1e-3 / (beta * r_max)
    hi = min(theta0, 30.0 / (beta * R))
    off = np.concatenate([
        np.linspace(0.0, theta0, k1),
        theta0 / math.sqrt(R) * np.linspace(0.0, 1.0, k2),
        np.geomspace(lo, max(hi, 2 * lo), k3),
    ])
    return np.unique(np.clip(off, 0.0, theta0))


def _theta_grid(theta0, R, beta, r_max, n):
    th = theta0 - _theta_offsets(theta0, R, beta, r_max, n // 2)
    return np.unique(np.concatenate([-th, th]))


# ------------------------------------------------------------ supersolutions

@dataclass(frozen=True)
class SupersolutionCertificate:
    kind: str
    c: float
    alpha: float
    beta: float
    gamma: float
    eta: float
    R: float
    amplitude: float
    cutoff: Smoothstep | None
    residuals: dict
    valid: bool
    reason: str = ""
    details: dict = field(default_factory=dict)

    def margins(self) -> dict:
        return {k: v for k, v in self.residuals.items() if k.startswith("margin_")}

    def to_text(self) -> str:
        head = {"kind": self.kind, "valid": self.valid, "reason": self.reason or "-",
                "c": self.c, "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "eta": self.eta, "R": self.R, "amplitude": self.amplitude}
        head.update(self.details)
        return _report(head, self.residuals)

    def margins_csv(self) -> str:
        return _margins_csv(self.residuals)


def _invalid(kind, c, reason, **kw) -> SupersolutionCertificate:
    base = dict(alpha=math.nan, beta=math.nan, gamma=math.nan, eta=math.nan, R=math.nan,
                amplitude=1.0, cutoff=None, residuals={})
    base.update(kw)
    return SupersolutionCertificate(kind=kind, c=c, valid=False, reason=reason, **base)


def _all_ok(residuals: dict) -> bool:
    return all(v >= -MARGIN_TOL for k, v in residuals.items() if k.startswith("margin_"))


def radial_supersolution(c: float, params: ModelParams, n_r: int = 512,
                         r_max: float = 1e3) -> SupersolutionCertificate:
    """Supersolution (e^{-alpha(r-ct)}, (mu/nu) e^{-alpha(r-ct)}) for D <= 2d."""
    d, D, mu, nu, fp = params.d, params.D, params.mu, params.nu, params.fprime0
    if D > 2 * d:
        return _invalid("radial", c, "requires D <= 2d")
    if c < dp.c_kpp(params):
        return _invalid("radial", c, "c below c_KPP")
    gamma = mu / nu
    alpha = (c + math.sqrt(max(c * c - 4 * d * fp, 0.0))) / (2 * d)
    r = np.geomspace(1.0, r_max, n_r)
    field_m = alpha * c - d * alpha ** 2 + d * alpha / r - fp
    k = int(np.argmin(field_m))
    res = {
        "margin_road": alpha * c - D * alpha ** 2 - (nu * gamma - mu),
        "margin_field": float(field_m[k]),
        "margin_exchange": nu * gamma - mu,
        "margin_compatibility": c / D - alpha,
        "field_argmin_r": float(r[k]),
    }
    ok = _all_ok(res)
    return SupersolutionCertificate("radial", c, alpha, 0.0, gamma, 0.0, 1.0, 1.0, None, res,
                                    ok, "" if ok else "negative margin")


def _conical_margins(psi: Psi, c, gamma, params, n_r, n_theta) -> dict:
    d, D, mu, nu, fp = params.d, params.D, params.mu, params.nu, params.fprime0
    a, b, eta, th0 = psi.alpha, psi.beta, psi.eta, psi.theta0
    r = np.geomspace(psi.R, 10 * psi.R, n_r)
    th = _theta_grid(th0, psi.R, b, r[-1], n_theta)
    rr, tt = np.meshgrid(r, th, indexing="ij")
    p = psi.parts(rr, tt)
    lap = psi.tilde_laplacian(rr, tt, p) / p["psi"]
    pb = psi.parts(r, np.full_like(r, th0))
    return {
        "margin_road": float(np.min(a * c - D * a * a - nu * gamma * pb["psi"] + mu)),
        "margin_field": float(np.min(a * c - d * lap - fp)),
        "margin_exchange": float(np.min(d * gamma * pb["dth"] / r - mu + nu * gamma * pb["psi"])),
        "margin_laplacian": float(np.min(b * b + a * a - lap)),
        "margin_psi_lower": float(np.min(p["psi"]) - eta / (1 + eta)),
        "margin_psi_upper": float(1.0 - np.max(p["psi"])),
        "margin_normal_slope": float(np.min(pb["dth"] / r - b / (1 + eta))),
        "psi_boundary_error": float(np.max(np.abs(pb["psi"] - 1.0))),
        "grid_points": int(rr.size),
    }


def _refinement_ok(coarse: dict, fine: dict) -> bool:
    for k, m in coarse.items():
        if not k.startswith("margin_"):
            continue
        f = fine[k]
        if m > MARGIN_TOL:
            if f < 0.5 * m:
                return False
        elif f < -MARGIN_TOL:
            return False
    return True


def _select_witness(c, cb, params, eps=0.0, eta0=0.1, eta_min=1e-4):
    """eta by halving; the witness is taken at speed (c + c_BRR)/2 and rate 2 eta for slack."""
    cw = 0.5 * (c + cb)
    eta = eta0
    while eta >= eta_min:
        w = dp.intersection_witness(cw, 2 * eta, eps, params)
        if w is not None and w.alpha > 0 and w.beta > 0 and w.gamma > 0:
            return eta, w
        eta *= 0.5
    return None, None


def conical_supersolution(c: float, theta0: float, params: ModelParams,
                          n_r: int = 512, n_theta: int = 256, cbrr: float | None = None,
                          refine: bool = True) -> SupersolutionCertificate:
    """Supersolution (e^{-alpha(r-ct)}, gamma Psi e^{-alpha(r-ct)}) on the exact cone of half-angle theta0."""
    if params.D <= 2 * params.d:
        return _invalid("conical", c, "requires D > 2d")
    cb = dp.c_brr(params) if cbrr is None else cbrr
    if c <= cb:
        return _invalid("conical", c, "no perturbed witness (c <= c_BRR)")
    eta, w = _select_witness(c, cb, params)
    if w is None:
        return _invalid("conical", c, "no perturbed witness")
    cutoff = Smoothstep()
    R = _sufficient_R(w.beta, w.alpha, eta, theta0, cutoff)
    if R is None:
        return _invalid("conical", c, "R exceeded 2^20", alpha=w.alpha, beta=w.beta,
                        gamma=w.gamma, eta=eta)
    psi = build_psi(w.alpha, w.beta, eta, R, theta0, cutoff)
    res = _conical_margins(psi, c, w.gamma, params, n_r, n_theta)
    details = {"theta0": theta0, "c_brr": cb, "witness_speed": w.c, "witness_eta": w.eta}
    ok = _all_ok(res) and res["psi_boundary_error"] <= 1e-12
    if ok and refine:
        fine = _conical_margins(psi, c, w.gamma, params, 2 * n_r, 2 * n_theta)
        details["refined_ok"] = _refinement_ok(res, fine)
        ok = details["refined_ok"]
    return SupersolutionCertificate("conical", c, w.alpha, w.beta, w.gamma, eta, R, 1.0, cutoff,
                                    res, ok, "" if ok else "negative margin", details)


def _boundary_x(geometry: Geometry, r_lo, r_hi, n, side):
    """Boundary abscissae on one side with rtilde(x) spanning [r_lo, r_hi]."""
    m = metric(geometry)
    f = lambda x, target: float(m.rtilde(side * x)) - target

    def solve(target):
        hi = target
        while f(hi, target) < 0:
            hi *= 2.0
        return brentq(lambda x: f(x, target), 0.0, hi, xtol=1e-12 * target)

    return side * np.geomspace(solve(r_lo), solve(r_hi), n)


def _asymptotic_terms(psi: Psi, geometry: Geometry, x):
    g, m = geometry, metric(geometry)
    rho, drho = g.rho(x), g.drho(x)
    tau, dtau = m.tau(x), m.dtau(x)
    rt, tht = m.rtilde(x), m.thetatilde(x)
    rp, rpp = m.drtilde(x), m.d2rtilde(x)
    p = psi.parts(rt, tht)
    a = psi.alpha
    d_rp_tau = rpp / tau - rp * dtau / tau ** 2
    road_op = a * a * rp * rp / tau ** 2 - (a / tau) * d_rp_tau
    normal = ((p["dr"] - a * p["psi"]) * (x * drho - rho) + p["dth"] * (rho * drho + x) / rt) / (tau * rt)
    return p, road_op, normal, rt, tht


def _asymptotic_margins(psi, c, w, eps, geometry, params, n_r, n_theta):
    d, D, mu, nu, fp = params.d, params.D, params.mu, params.nu, params.fprime0
    a, b, eta, gamma = psi.alpha, psi.beta, psi.eta, w.gamma
    R = psi.R
    road, exch, dev = [], [], {"psi": 0.0, "road": -np.inf, "normal": -np.inf,
                               "dr": 0.0, "dth": 0.0}
    th_extent = psi.theta0
    for side in (1.0, -1.0):
        x = _boundary_x(geometry, R, 10 * R, n_r, side)
        p, road_op, normal, rt, tht = _asymptotic_terms(psi, geometry, x)
        road.append(a * c - D * road_op - nu * gamma * p["psi"] + mu)
        exch.append(d * gamma * normal - mu + nu * gamma * p["psi"])
        dev["psi"] = max(dev["psi"], float(np.max(np.abs(p["psi"] - 1.0))))
        dev["road"] = max(dev["road"], float(np.max(road_op - a * a)))
        dev["normal"] = max(dev["normal"], float(np.max(b / (1 + eta) - normal)))
        dev["dr"] = max(dev["dr"], float(np.max(np.abs(p["dr"]))))
        dev["dth"] = max(dev["dth"], float(np.max(np.abs(np.sign(tht) * p["dth"] / rt - b / (1 + eta)))))
        th_extent = max(th_extent, float(np.max(np.abs(tht))))
    # field points of the epigraph outside B_R, sampled in polar coordinates
    r = np.geomspace(R, 10 * R, n_r)
    th = _theta_grid(psi.theta0, R, b, r[-1], n_theta)
    if th_extent > psi.theta0:
        extra = psi.theta0 + (th_extent - psi.theta0) * np.linspace(0.0, 1.0, 17)[1:]
        th = np.unique(np.concatenate([th, extra, -extra]))
    rr, tt = np.meshgrid(r, th, indexing="ij")
    X, Y = rr * np.sin(tt), rr * np.cos(tt)
    inside = Y >= geometry.rho(X)
    pf = psi.parts(rr[inside], tt[inside])
    lap = psi.tilde_laplacian(rr[inside], tt[inside], pf) / pf["psi"]
    res = {
        "margin_road": float(min(np.min(v) for v in road)),
        "margin_field": float(np.min(a * c - d * lap - fp)),
        "margin_exchange": float(min(np.min(v) for v in exch)),
        "margin_eps_psi": eps - dev["psi"],
        "margin_eps_road": eps - dev["road"],
        "margin_eps_normal": eps - dev["normal"],
        "deviation_dr": dev["dr"],
        "deviation_dtheta": dev["dth"],
        "field_points": int(inside.sum()),
    }
    return res


def asymptotic_supersolution(c: float, geometry: Geometry, params: ModelParams,
                             n_r: int = 512, n_theta: int = 256, cbrr: float | None = None,
                             refine: bool = True) -> SupersolutionCertificate:
    """Conical Psi placed on an asymptotically conical field, checked along the true boundary."""
    if params.D <= 2 * params.d:
        return _invalid("asymptotic", c, "requires D > 2d")
    cb = dp.c_brr(params) if cbrr is None else cbrr
    if c <= cb:
        return _invalid("asymptotic", c, "no perturbed witness (c <= c_BRR)")
    theta0 = geometry.theta0
    eps = 1e-2
    while eps >= 1e-8:
        eta, w = _select_witness(c, cb, params, eps=eps)
        if w is not None:
            break
        eps *= 0.5
    if w is None:
        return _invalid("asymptotic", c, "no perturbed witness")
    cutoff = Smoothstep()
    R = _sufficient_R(w.beta, w.alpha, eta, theta0, cutoff)
    if R is None:
        return _invalid("asymptotic", c, "R exceeded 2^20", alpha=w.alpha, beta=w.beta,
                        gamma=w.gamma, eta=eta)
    details = {"theta0": theta0, "geometry": geometry.kind, "a": geometry.a, "eps": eps,
               "c_brr": cb, "witness_speed": w.c, "witness_eta": w.eta}
    while R <= R_MAX:
        psi = build_psi(w.alpha, w.beta, eta, R, theta0, cutoff)
        res = _asymptotic_margins(psi, c, w, eps, geometry, params, n_r, n_theta)
        if _all_ok(res):
            break
        R *= 2.0
    else:
        return SupersolutionCertificate("asymptotic", c, w.alpha, w.beta, w.gamma, eta, R / 2,
                                        1.0, cutoff, res, False, "R exceeded 2^20", details)
    ok = True
    if refine:
        fine = _asymptotic_margins(psi, c, w, eps, geometry, params, 2 * n_r, 2 * n_theta)
        details["refined_ok"] = _refinement_ok(res, fine)
        ok = details["refined_ok"]
    return SupersolutionCertificate("asymptotic", c, w.alpha, w.beta, w.gamma, eta, R, 1.0,
                                    cutoff, res, ok, "" if ok else "refinement loss", details)


# ------------------------------------------------------------------- hump

@dataclass(frozen=True)
class Hump:
    """phi(y) = A (1 - cos wy) + B sin wy on [0, M], zero beyond; d phi'' + f'(0) phi = 1 + kappa."""

    A: float
    B: float
    omega: float
    M: float
    kappa: float

    def _inside(self, y):
        y = np.asarray(y, dtype=float)
        return (y >= 0) & (y <= self.M), y

    def __call__(self, y):
        ins, y = self._inside(y)
        wy = self.omega * y
        return np.where(ins, self.A * (1 - np.cos(wy)) + self.B * np.sin(wy), 0.0)

    def d1(self, y):
        ins, y = self._inside(y)
        wy = self.omega * y
        return np.where(ins, self.omega * (self.A * np.sin(wy) + self.B * np.cos(wy)), 0.0)

    def d2(self, y):
        ins, y = self._inside(y)
        wy = self.omega * y
        w2 = self.omega ** 2
        return np.where(ins, w2 * (self.A * np.cos(wy) - self.B * np.sin(wy)), 0.0)

    @property
    def peak(self) -> float:
        return float(self.A + math.hypot(self.A, self.B))


def build_hump(params: ModelParams, kappa: float = 0.5) -> Hump:
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    omega = math.sqrt(params.fprime0 / params.d)
    A = (1 + kappa) / params.fprime0
    B = (2 * params.mu + 1) / params.d / omega
    # A(1 - cos x) + B sin x = 2 sin(x/2) (A sin(x/2) + B cos(x/2)); first zero past pi
    M = (2 * math.pi - 2 * math.atan2(B, A)) / omega
    return Hump(A, B, omega, M, kappa)


# ------------------------------------------------------------- subsolution

@dataclass(frozen=True)
class SubsolutionCertificate:
    c: float
    L: float
    Lambda: float
    W: float
    lam: float
    hump: Hump
    disp: dp.ComplexDispersion
    params: ModelParams
    region: dict
    residuals: dict
    valid: bool
    reason: str = ""
    details: dict = field(default_factory=dict)

    # analytic U, V and derivatives in the moving frame xi = x - ct
    def _e(self, xi):
        return np.exp(-self.disp.alpha * np.asarray(xi, dtype=complex))

    def U(self, xi):
        return np.real(self._e(xi))

    def U_derivs(self, xi):
        e, a = self._e(xi), self.disp.alpha
        return np.real(e), np.real(-a * e), np.real(a * a * e)

    def _gam(self, y):
        s = self.disp
        y = np.asarray(y, dtype=float)
        em, ep = np.exp(-s.beta * y), np.exp(s.beta * y)
        g = s.gamma1 * em + s.gamma2 * ep
        gp = s.beta * (-s.gamma1 * em + s.gamma2 * ep)
        return g, gp, s.beta ** 2 * g

    def V(self, xi, y):
        g, _, _ = self._gam(y)
        return np.real(g * self._e(xi))

    def V_derivs(self, xi, y) -> dict:
        e, a = self._e(xi), self.disp.alpha
        g, gp, gpp = self._gam(y)
        return {"V": np.real(g * e), "x": np.real(-a * g * e), "y": np.real(gp * e),
                "xy": np.real(-a * gp * e), "yy": np.real(gpp * e)}

    def u_lam(self, xi):
        return self.U(xi) - self.lam

    def v_lam(self, xi, y):
        return self.V(xi, y) + self.lam * self.hump(y)

    def truncated(self, xi, y):
        """(u, v) equal to (u_lam, v_lam) on the selected components, zero elsewhere."""
        xi = np.asarray(xi, dtype=float)
        y = np.asarray(y, dtype=float)
        e_lo, e_hi = self.region["E"]
        u = np.where((xi >= e_lo) & (xi <= e_hi), np.maximum(self.u_lam(xi), 0.0), 0.0)
        mask = self.details["F_mask"]
        gx, gy = self.details["xi_grid"], self.details["y_grid"]
        i = np.clip(np.searchsorted(gx, xi), 0, gx.size - 1)
        j = np.clip(np.searchsorted(gy, y), 0, gy.size - 1)
        near = mask[i, j] | mask[np.maximum(i - 1, 0), j] | mask[i, np.maximum(j - 1, 0)] \
            | mask[np.maximum(i - 1, 0), np.maximum(j - 1, 0)]
        v = np.where(near, np.maximum(self.v_lam(xi, y), 0.0), 0.0)
        return u, v

    def to_text(self) -> str:
        head = {"valid": self.valid, "reason": self.reason or "-", "c": self.c, "L": self.L,
                "Lambda": self.Lambda, "W": self.W, "lambda": self.lam, "M": self.hump.M,
                "alpha": self.disp.alpha, "beta": self.disp.beta,
                "E": self.region["E"], "F_bbox": self.region["F_bbox"],
                "F_cells": self.region["F_cells"]}
        return _report(head, self.residuals)

    def margins_csv(self) -> str:
        return _margins_csv(self.residuals)


def _components_1d(pos):
    lab, n = ndimage.label(pos)
    out = []
    for k in range(1, n + 1):
        idx = np.nonzero(lab == k)[0]
        if idx[0] > 0 and idx[-1] < pos.size - 1:
            out.append((idx[0], idx[-1]))
    return out


def _components_2d(pos):
    lab, n = ndimage.label(pos)
    out = []
    for k, sl in enumerate(ndimage.find_objects(lab), start=1):
        if sl is None:
            continue
        if sl[0].start > 0 and sl[0].stop < pos.shape[0]:
            out.append((k, sl))
    return lab, out


def _zero_crossing_residual(fun, pts_in, pts_out, iters=60):
    """max |fun| at zeros located by bisection on segments from inside to outside points."""
    a, b = pts_in.copy(), pts_out.copy()
    fa = fun(a)
    for _ in range(iters):
        m = 0.5 * (a + b)
        fm = fun(m)
        same = np.sign(fm) == np.sign(fa)
        a = np.where(same[:, None], m, a)
        fa = np.where(same, fm, fa)
        b = np.where(same[:, None], b, m)
    return float(np.max(np.abs(fun(0.5 * (a + b))))) if len(a) else 0.0


def build_subsolution(c: float, L: float, params: ModelParams, geometry: Geometry | None = None,
                      kappa: float = 0.5, n_xi: int = 2048, n_y: int = 256,
                      root: dp.ComplexDispersion | None = None) -> SubsolutionCertificate:
    """Truncated complex subsolution (U - lam, V + lam phi) in the frame moving at speed c."""
    if root is None:
        roots = dp.solve_complex(c, L, params)
        if not roots:
            raise dp.DispersionError(f"no constrained strip root at c={c}, L={L}")
        root = next((s for s in roots if s.alpha.imag > 0), roots[0])
    hump = build_hump(params.penalized(), kappa)
    if not hump.M < L:
        raise ValueError(f"strip height L={L} must exceed the hump support M={hump.M}")
    a1, a2 = root.alpha.real, abs(root.alpha.imag)
    b1, b2 = root.beta.real, abs(root.beta.imag)
    period = 2 * math.pi / a2
    # a positivity band of V is slanted across the strip by |beta_2| L / alpha_2
    W = period + b2 * L / a2 + 0.25 * period
    xi = np.linspace(-W, W, n_xi)
    y = np.linspace(0.0, L, n_y)
    stub = SubsolutionCertificate(c, L, math.nan, W, 0.0, hump, root, params, {}, {}, False)
    XI, Y = np.meshgrid(xi, y, indexing="ij")
    # target: rightmost complete positivity band of V itself
    lab0, comps0 = _components_2d(stub.V(XI, Y) > 0)
    if not comps0:
        raise dp.DispersionError("window holds no complete positivity band of V")
    F0 = lab0 == max(comps0, key=lambda t: t[1][0].start)[0]
    # (U, V) is linear, so lambda is measured against the band's amplitude near the road
    low = Y <= hump.M
    scale = float(np.max(np.abs(stub.V(XI[F0 & low], Y[F0 & low]))))
    lam = 0.1 * hump.peak * scale
    for _ in range(60):
        stub = dataclasses.replace(stub, lam=lam)
        lab, f_comps = _components_2d(stub.v_lam(XI, Y) > 0)
        hit = np.unique(lab[F0 & (lab > 0)])
        complete = {k for k, _ in f_comps}
        e_comps = _components_1d(stub.u_lam(xi) > 0)
        if hit.size == 1 and int(hit[0]) in complete and e_comps:
            break
        lam *= 0.5
    else:
        raise dp.DispersionError("no bounded positivity component after 60 halvings of lambda")
    F = lab == int(hit[0])
    sl = ndimage.find_objects(F.astype(int))[0]
    # road component: the u_lam interval sharing most of F's trace on y = 0
    trace = F[:, 0]
    i0, i1 = max(e_comps, key=lambda t: (int(trace[t[0]:t[1] + 1].sum()), t[0]))
    region = {"E": (float(xi[i0]), float(xi[i1])),
              "F_bbox": (float(xi[sl[0].start]), float(xi[sl[0].stop - 1]),
                         float(y[sl[1].start]), float(y[sl[1].stop - 1])),
              "F_cells": int(F.sum()), "geometry": geometry.kind if geometry else "-"}
    # continuity of the truncation: v_lam vanishes where F meets its complement
    inn, out = _edge_pairs(F, xi, y)
    # residuals relative to the local amplitude e^{-alpha_1 xi}
    v_fun = lambda P: stub.v_lam(P[:, 0], P[:, 1]) * np.exp(a1 * P[:, 0])
    u_fun = lambda P: stub.u_lam(P[:, 0]) * np.exp(a1 * P[:, 0])
    e_in = np.array([[xi[i0], 0.0], [xi[i1], 0.0]])
    e_out = np.array([[xi[i0 - 1], 0.0], [xi[i1 + 1], 0.0]])
    sep = abs(root.gamma1) * math.exp(-a1 * W) * math.exp(-b1 * hump.M) * (
        math.exp(-2 * b1 * (L - hump.M)) - 1.0)
    details = {
        "xi_grid": xi, "y_grid": y, "F_mask": F, "E_index": (i0, i1),
        "boundary_residual_v": _zero_crossing_residual(v_fun, inn, out),
        "boundary_residual_u": _zero_crossing_residual(u_fun, e_in, e_out),
        "top_residual": float(np.max(np.abs(stub.V(xi, L) * np.exp(a1 * xi)))),
        "separator_bound": sep,
    }
    return dataclasses.replace(stub, region=region, details=details)


def _perturbations(cert: SubsolutionCertificate, geometry: Geometry, Lam: float, refine: int = 1):
    """Pointwise eps_1, eps_3 on E and eps_2 on F for the window placed at x >= Lam."""
    p = cert.params
    d, D, mu = p.d, p.D, p.mu
    m = metric(geometry)
    xi, y = cert.details["xi_grid"], cert.details["y_grid"]
    F = cert.details["F_mask"]
    i0, i1 = cert.details["E_index"]
    if refine > 1:
        xi, y, F = _refined_component(cert, refine)
        i0, i1 = refine * i0, refine * i1
    shift = Lam + cert.W
    xe = xi[i0:i1 + 1]
    x = xe + shift
    U, Ux, Uxx = cert.U_derivs(xe)
    tau, dtau = m.tau(x), m.dtau(x)
    eps1 = -D * ((1 / tau ** 2 - 1) * Uxx - dtau / tau ** 3 * Ux)
    dv0 = cert.V_derivs(xe, np.zeros_like(xe))
    r1 = geometry.drho(x)
    eps3 = d * r1 / tau * dv0["x"] + d * (1 - tau) * dv0["y"]
    ii, jj = np.nonzero(F)
    xf, yf = xi[ii], y[jj]
    X = xf + shift
    dv = cert.V_derivs(xf, yf)
    r1f, r2f = geometry.drho(X), geometry.d2rho(X)
    eps2 = -d * (-r2f * dv["y"] - 2 * r1f * dv["xy"] + r1f ** 2 * dv["yy"])
    h = cert.hump
    rate = p.rate
    rhs = rate * h(yf) + d * ((1 + r1f ** 2) * h.d2(yf) - r2f * h.d1(yf))
    sup = yf < h.M
    return eps1, eps2, eps3, tau, rhs[sup], eps2[~sup]


def _refined_component(cert, refine):
    """Selected field component recomputed on a grid ``refine`` times finer."""
    xi, y, F = cert.details["xi_grid"], cert.details["y_grid"], cert.details["F_mask"]
    xi_f = np.linspace(xi[0], xi[-1], refine * (xi.size - 1) + 1)
    y_f = np.linspace(y[0], y[-1], refine * (y.size - 1) + 1)
    XI, Y = np.meshgrid(xi_f, y_f, indexing="ij")
    lab, _ = ndimage.label(cert.v_lam(XI, Y) > 0)
    coarse = np.zeros_like(lab, dtype=bool)
    coarse[::refine, ::refine] = F
    keep = np.unique(lab[coarse & (lab > 0)])
    return xi_f, y_f, np.isin(lab, keep)


def _edge_pairs(F, xi, y):
    """Grid points of F paired with their neighbours outside F (4-connectivity)."""
    XI, Y = np.meshgrid(xi, y, indexing="ij")
    P = np.stack([XI, Y], axis=-1)
    inn, out = [], []
    for axis in (0, 1):
        a = [slice(None)] * 2
        b = [slice(None)] * 2
        a[axis], b[axis] = slice(None, -1), slice(1, None)
        a, b = tuple(a), tuple(b)
        for s_in, s_out in ((a, b), (b, a)):
            e = F[s_in] & ~F[s_out]
            inn.append(P[s_in][e])
            out.append(P[s_out][e])
    return np.concatenate(inn), np.concatenate(out)


def _sub_residuals(cert, geometry, Lam, refine=1):
    """Perturbation sups and margins; margins are in units of lambda (the pair is linear)."""
    p, lam, phi0 = cert.params, cert.lam, float(cert.hump.d1(0.0))
    e1, e2, e3, tau, rhs, beyond = _perturbations(cert, geometry, Lam, refine)
    m3 = -p.mu + p.d * tau * phi0 - e3 / lam
    return {
        "eps1": float(np.max(e1)),
        "eps2": float(np.max(e2)),
        "eps3": float(np.max(e3)),
        "margin_road": float(p.mu - np.max(e1) / lam),
        "margin_field": float(1.0 - np.max(e2) / lam),
        "margin_exchange": float(np.min(m3)),
        "margin_hump": float(np.min(rhs) - 1.0) if rhs.size else math.inf,
        "beyond_hump_sup": float(np.max(beyond)) if beyond.size else -math.inf,
    }


def verify_subsolution(cert: SubsolutionCertificate, geometry: Geometry,
                       Lambda_init: float = 1.0) -> SubsolutionCertificate:
    """Double Lambda until the three perturbation bounds (and the hump bound) hold."""
    if geometry.a != 0 and geometry.kind != "exact_cone":
        return dataclasses.replace(cert, valid=False,
                                   reason="a != 0 is verified only for exact cones (rotation reduction)")
    if geometry.a != 0:
        # rotated exact cone: beyond |x| = 1 the road is straight, so the window sees a flat road
        from .geometry import flat
        Lambda_init = max(Lambda_init, math.hypot(1.0, geometry.a))
        geometry = flat()
    Lam = Lambda_init
    while Lam <= LAMBDA_MAX:
        res = _sub_residuals(cert, geometry, Lam)
        if _all_ok(res):
            break
        Lam *= 2.0
    else:
        return dataclasses.replace(cert, residuals=res, valid=False, reason="Lambda exceeded 2^40")
    fine = _sub_residuals(cert, geometry, Lam, refine=2)
    ok = _refinement_ok(res, fine)
    details = dict(cert.details, refined_ok=ok)
    return dataclasses.replace(cert, Lambda=Lam, residuals=res, valid=ok,
                               reason="" if ok else "refinement loss", details=details)

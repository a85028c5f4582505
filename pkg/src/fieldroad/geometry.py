"""Exactly and asymptotically conical fields.

The field is the epigraph ``y >= rho(x)``.  Every geometry carries closed-form
(or piecewise-quadratic, for tables) first and second derivatives of ``rho`` so
that metric quantities never rely on finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

Curve = Callable[[np.ndarray], np.ndarray]

# even C^2 blend p(s) = c2 s^2 + c4 s^4 + c6 s^6 with p(1) = 1, p'(1) = 1, p''(1) = 0
BLEND = (15.0 / 8.0, -5.0 / 4.0, 3.0 / 8.0)


def half_angle(a: float) -> float:
    """Half opening angle of the limiting cone of ``y >= a|x|``."""
    if not math.isfinite(a):
        raise ValueError("slope must be finite")
    if a == 0:
        return math.pi / 2
    return math.atan(1.0 / a) + (math.pi if a < 0 else 0.0)


def polar(x, y):
    """Polar coordinates measured from the cone axis: x = r sin(theta), y = r cos(theta)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any((x == 0) & (y == 0)):
        raise ValueError("polar angle undefined at the origin")
    r = np.hypot(x, y)
    theta = np.arctan2(x, y)
    if r.ndim == 0:
        return float(r), float(theta)
    return r, theta


@dataclass(frozen=True)
class Geometry:
    a: float
    kind: str
    rho: Curve
    drho: Curve
    d2rho: Curve

    @property
    def theta0(self) -> float:
        return half_angle(self.a)

    def __call__(self, x):
        return self.rho(np.asarray(x, dtype=float))

    def asymptotic_defects(self, xs=(1e2, 1e3, 1e4)) -> np.ndarray:
        """|rho - a|x||, |rho' - sign(x) a|, |rho''| at +-xs; rows per |x|."""
        out = []
        for x in xs:
            pts = np.array([-x, x])
            out.append([
                np.max(np.abs(self.rho(pts) - self.a * np.abs(pts))),
                np.max(np.abs(self.drho(pts) - np.sign(pts) * self.a)),
                np.max(np.abs(self.d2rho(pts))),
            ])
        return np.array(out)

    def is_even(self, n: int = 257, span: float = 50.0) -> bool:
        x = np.linspace(0.0, span, n)
        return bool(np.allclose(self.rho(x), self.rho(-x), rtol=0, atol=1e-12))


def exact_cone(a: float) -> Geometry:
    """rho = a|x| for |x| >= 1, C^2 even polynomial blend inside."""
    c2, c4, c6 = BLEND

    def rho(x):
        s = np.abs(np.asarray(x, dtype=float))
        inner = c2 * s**2 + c4 * s**4 + c6 * s**6
        return a * np.where(s < 1.0, inner, s)

    def drho(x):
        x = np.asarray(x, dtype=float)
        s = np.abs(x)
        inner = 2 * c2 * s + 4 * c4 * s**3 + 6 * c6 * s**5
        return a * np.sign(x) * np.where(s < 1.0, inner, 1.0)

    def d2rho(x):
        s = np.abs(np.asarray(x, dtype=float))
        inner = 2 * c2 + 12 * c4 * s**2 + 30 * c6 * s**4
        return a * np.where(s < 1.0, inner, 0.0)

    return Geometry(float(a), "exact_cone", rho, drho, d2rho)


def hyperbola(a: float) -> Geometry:
    """rho = sign(a) sqrt(1 + a^2 x^2); the half-plane for a = 0."""
    if a == 0:
        zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))
        return Geometry(0.0, "hyperbola", zero, zero, zero)
    sg = math.copysign(1.0, a)
    a2 = a * a

    def rho(x):
        x = np.asarray(x, dtype=float)
        return sg * np.sqrt(1.0 + a2 * x * x)

    def drho(x):
        x = np.asarray(x, dtype=float)
        return sg * a2 * x / np.sqrt(1.0 + a2 * x * x)

    def d2rho(x):
        x = np.asarray(x, dtype=float)
        return sg * a2 / (1.0 + a2 * x * x) ** 1.5

    return Geometry(float(a), "hyperbola", rho, drho, d2rho)


def decaying_bump(height: float = 1.0) -> Geometry:
    """rho = height / (1 + x^2): a road that is asymptotically the flat line (a = 0)."""

    def rho(x):
        x = np.asarray(x, dtype=float)
        return height / (1.0 + x * x)

    def drho(x):
        x = np.asarray(x, dtype=float)
        return -2.0 * height * x / (1.0 + x * x) ** 2

    def d2rho(x):
        x = np.asarray(x, dtype=float)
        return height * (6.0 * x * x - 2.0) / (1.0 + x * x) ** 3

    return Geometry(0.0, "custom", rho, drho, d2rho)


def flat() -> Geometry:
    g = hyperbola(0.0)
    return Geometry(0.0, "custom", g.rho, g.drho, g.d2rho)


def custom(rho: Curve, drho: Curve, d2rho: Curve, a: float) -> Geometry:
    return Geometry(float(a), "custom", rho, drho, d2rho)


def from_table(xs, rhos, a: float) -> Geometry:
    """Geometry from sampled (x, rho) pairs.

    Inside the table each cell [x_k, x_{k+1}] uses the quadratic through the
    three nearest samples, so rho'' is piecewise constant and finite.  Outside,
    the road continues along its asymptote with slope +-a.
    """
    xs = np.asarray(xs, dtype=float)
    rhos = np.asarray(rhos, dtype=float)
    if xs.ndim != 1 or xs.shape != rhos.shape or xs.size < 3:
        raise ValueError("need matching 1-D tables with at least 3 samples")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("x samples must be strictly increasing")
    n = xs.size

    def coeffs(x):
        k = np.clip(np.searchsorted(xs, x) - 1, 0, n - 2)
        # samples k, k+1, k+2; the last cell reuses the final triple
        k0 = np.clip(k, 0, n - 3)
        x0, x1, x2 = xs[k0], xs[k0 + 1], xs[k0 + 2]
        y0, y1, y2 = rhos[k0], rhos[k0 + 1], rhos[k0 + 2]
        d01 = (y1 - y0) / (x1 - x0)
        d12 = (y2 - y1) / (x2 - x1)
        c = (d12 - d01) / (x2 - x0)
        b = d01 - c * (x0 + x1)
        a0 = y0 - b * x0 - c * x0 * x0
        return a0, b, c

    lo, hi = xs[0], xs[-1]

    def _eval(x, which):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, lo, hi)
        c0, c1, c2 = coeffs(xc)
        val = (c0 + c1 * xc + c2 * xc * xc, c1 + 2 * c2 * xc, 2 * c2 + 0 * xc)[which]
        left, right = x < lo, x > hi
        if which == 0:
            val = np.where(left, rhos[0] + a * (lo - x), val)
            val = np.where(right, rhos[-1] + a * (x - hi), val)
        elif which == 1:
            val = np.where(left, -a, np.where(right, a, val))
        else:
            val = np.where(left | right, 0.0, val)
        return val

    return Geometry(float(a), "custom",
                    lambda x: _eval(x, 0), lambda x: _eval(x, 1), lambda x: _eval(x, 2))


@dataclass(frozen=True)
class MetricData:
    """Metric quantities of the flattening shear w = y - rho(x)."""

    geometry: Geometry

    def tau(self, x):
        p = self.geometry.drho(x)
        return np.sqrt(1.0 + p * p)

    def dtau(self, x):
        p = self.geometry.drho(x)
        return p * self.geometry.d2rho(x) / np.sqrt(1.0 + p * p)

    def A(self, x) -> np.ndarray:
        """Diffusion tensor, shape (..., 2, 2); det A = 1."""
        p = np.asarray(self.geometry.drho(x), dtype=float)
        out = np.empty(p.shape + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = -p
        out[..., 1, 0] = -p
        out[..., 1, 1] = 1.0 + p * p
        return out

    def rtilde(self, x):
        x = np.asarray(x, dtype=float)
        return np.hypot(x, self.geometry.rho(x))

    def thetatilde(self, x):
        x = np.asarray(x, dtype=float)
        return np.arctan2(x, self.geometry.rho(x))

    def drtilde(self, x):
        x = np.asarray(x, dtype=float)
        g = self.geometry
        return (x + g.rho(x) * g.drho(x)) / self.rtilde(x)

    def d2rtilde(self, x):
        x = np.asarray(x, dtype=float)
        g = self.geometry
        p = g.drho(x)
        r = self.rtilde(x)
        rp = self.drtilde(x)
        return (1.0 + p * p + g.rho(x) * g.d2rho(x) - rp * rp) / r


def metric(geometry: Geometry) -> MetricData:
    return MetricData(geometry)


def by_name(kind: str, a: float = 0.0) -> Geometry:
    builders = {
        "exact_cone": exact_cone,
        "hyperbola": hyperbola,
        "bump": lambda a: decaying_bump(1.0),
        "flat": lambda a: flat(),
    }
    if kind not in builders:
        raise ValueError(f"unknown geometry {kind!r}; choose from {sorted(builders)}")
    return builders[kind](a)

"""Physical parameters of the field-road system and the KPP reaction rule."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

Reaction = Callable[[np.ndarray], np.ndarray]


def logistic_reaction() -> Reaction:
    """v(1 - v) on [0, 1], extended by zero for v >= 1."""

    def f(v):
        v = np.asarray(v, dtype=float)
        return np.where(v < 1.0, v * (1.0 - v), 0.0)

    f.fprime0 = 1.0
    f.name = "logistic"
    return f


def zero_reaction() -> Reaction:
    def f(v):
        return np.zeros_like(np.asarray(v, dtype=float))

    f.fprime0 = 0.0
    f.name = "none"
    return f


class KPPReport(NamedTuple):
    ok: bool
    kind: str  # "ok", "endpoint", "positivity", "monotonicity", "non_finite"
    v: float | None
    value: float | None


def kpp_check(f: Reaction, n_samples: int = 1000, tol: float = 1e-12) -> KPPReport:
    """Check the KPP property of ``f`` on a uniform grid of [0, 1].

    The interior samples are ``v_k = k / (n_samples - 1)``; the first failing
    sample is returned.  Non-finite evaluations are reported separately.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    v = np.linspace(0.0, 1.0, n_samples)
    with np.errstate(all="ignore"):
        fv = np.asarray(f(v), dtype=float)
    bad = ~np.isfinite(fv)
    if bad.any():
        k = int(np.argmax(bad))
        return KPPReport(False, "non_finite", float(v[k]), float(fv[k]))
    for k in (0, n_samples - 1):
        if abs(fv[k]) > tol:
            return KPPReport(False, "endpoint", float(v[k]), float(fv[k]))
    inner = slice(1, n_samples - 1)
    nonpos = fv[inner] <= 0.0
    if nonpos.any():
        k = 1 + int(np.argmax(nonpos))
        return KPPReport(False, "positivity", float(v[k]), float(fv[k]))
    ratio = fv[1:] / v[1:]
    rises = np.diff(ratio) > tol
    if rises.any():
        k = 2 + int(np.argmax(rises))
        return KPPReport(False, "monotonicity", float(v[k]), float(ratio[k - 1]))
    return KPPReport(True, "ok", None, None)


@dataclass(frozen=True)
class ModelParams:
    d: float = 1.0
    D: float = 4.0
    mu: float = 1.0
    nu: float = 1.0
    f: Reaction = field(default_factory=logistic_reaction, compare=False, repr=False)
    fprime0: float = 1.0
    delta: float | None = None  # None -> 0.05 * fprime0
    validate_kpp: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.delta is None:
            object.__setattr__(self, "delta", 0.05 * self.fprime0)
        for name in ("d", "D", "mu", "nu", "fprime0"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive finite number, got {val!r}")
        if not (0.0 <= self.delta < self.fprime0):
            raise ValueError(f"delta must satisfy 0 <= delta < fprime0, got {self.delta!r}")
        if self.validate_kpp:
            rep = kpp_check(self.f)
            if not rep.ok:
                raise ValueError(f"reaction fails the KPP property ({rep.kind} at v={rep.v})")
            h = 1e-8
            slope = float(self.f(np.array([h]))[0]) / h
            if abs(slope - self.fprime0) > 1e-6 * max(1.0, self.fprime0):
                raise ValueError(f"fprime0={self.fprime0} inconsistent with f (f(h)/h={slope})")

    @property
    def rate(self) -> float:
        """Penalized linear growth rate fprime0 - delta."""
        return self.fprime0 - self.delta

    def penalized(self) -> "ModelParams":
        """Parameters whose linear rate is fprime0 - delta (reaction unchanged)."""
        return dataclasses.replace(self, fprime0=self.rate, delta=0.0, validate_kpp=False)

    def without_reaction(self) -> "ModelParams":
        return dataclasses.replace(self, f=zero_reaction(), validate_kpp=False)

    def steady_state(self) -> tuple[float, float]:
        return self.nu / self.mu, 1.0

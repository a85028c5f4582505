"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

from .geometry import Geometry, by_name
from .model import ModelParams, logistic_reaction, zero_reaction
from .solver import GridSpec


class ConfigError(ValueError):
    """Parse or validation failure; ``key`` and ``line`` locate the culprit."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.key = key
        self.line = line


def _floats(text: str) -> tuple:
    return tuple(float(s) for s in text.split(",") if s.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _geometries(text: str) -> tuple:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        kind, _, a = item.partition(":")
        out.append((kind.strip(), float(a) if a else 0.0))
    return tuple(out)


@dataclass(frozen=True)
class Config:
    # model
    d: float = 1.0
    D: float = 4.0
    mu: float = 1.0
    nu: float = 1.0
    reaction: str = "logistic"
    delta: float = -1.0  # negative -> default 0.05 * fprime0
    # geometry
    geometry: str = "exact_cone"
    a: float = 0.0
    # grid
    x_min: float = -100.0
    x_max: float = 100.0
    y_max: float = 30.0
    hx: float = 0.5
    hy: float = 0.5
    nt_report: int = 100
    outer_bc: str = "dirichlet_zero"
    # simulate / speed
    t_final: float = 40.0
    safety: float = 0.4
    datum_radius: float = 5.0
    datum_level: float = 1.0
    store_field: bool = False
    geometries: tuple = (("exact_cone", 0.0), ("exact_cone", 1.0))
    threshold_factor: float = 0.5
    window_fraction: float = 0.4
    t_min: float = 20.0
    # dispersion
    L_values: tuple = (10.0, 20.0, 40.0)
    speeds: tuple = ()
    eta: float = 0.0
    tol: float = 1e-8
    # certificates
    kind: str = "conical"
    c: float = 0.0
    c_factor: float = 1.05
    theta0: float = -1.0  # negative -> half angle of the geometry
    L: float = 20.0
    kappa: float = 0.5
    Lambda_init: float = 1.0
    # property suites
    n_steps: int = 1000
    trials: int = 20
    seed: int = 0

    def params(self) -> ModelParams:
        f = {"logistic": logistic_reaction, "none": zero_reaction}[self.reaction]()
        fprime0 = 1.0 if self.reaction == "logistic" else 1.0
        delta = None if self.delta < 0 else self.delta
        return ModelParams(self.d, self.D, self.mu, self.nu, f, fprime0, delta,
                           validate_kpp=self.reaction == "logistic")

    def geometry_obj(self) -> Geometry:
        return by_name(self.geometry, self.a)

    def grid(self) -> GridSpec:
        return GridSpec(self.x_min, self.x_max, self.y_max, self.hx, self.hy, self.nt_report,
                        self.outer_bc)

    def lines(self) -> list[str]:
        """Full configuration as ``key = value`` lines (for output headers)."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "geometries":
                v = ",".join(f"{k}:{a!r}" for k, a in v)
            elif isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            out.append(f"{f.name} = {v}")
        return out


_CASTS = {
    "reaction": str, "geometry": str, "outer_bc": str, "kind": str,
    "nt_report": int, "n_steps": int, "trials": int, "seed": int,
    "store_field": _bool, "geometries": _geometries, "L_values": _floats, "speeds": _floats,
}
_CHOICES = {
    "reaction": ("logistic", "none"),
    "geometry": ("exact_cone", "hyperbola", "bump", "flat"),
    "outer_bc": ("dirichlet_zero", "reflecting"),
    "kind": ("radial", "conical", "asymptotic"),
}


def _validate(cfg: Config) -> None:
    for key, choices in _CHOICES.items():
        if getattr(cfg, key) not in choices:
            raise ConfigError(f"{key} must be one of {choices}", key)
    for kind, _ in cfg.geometries:
        if kind not in _CHOICES["geometry"]:
            raise ConfigError(f"geometries: unknown kind {kind!r}", "geometries")
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, float) and not math.isfinite(v):
            raise ConfigError(f"{f.name} must be finite", f.name)
    positive = ("t_final", "datum_radius", "tol", "L", "kappa", "Lambda_init", "n_steps", "trials")
    for key in positive:
        if not getattr(cfg, key) > 0:
            raise ConfigError(f"{key} must be positive", key)
    if not 0 < cfg.safety <= 1:
        raise ConfigError("safety must lie in (0, 1]", "safety")
    if not 0 < cfg.threshold_factor < 1:
        raise ConfigError("threshold_factor must lie in (0, 1)", "threshold_factor")
    if not 0 < cfg.window_fraction <= 1:
        raise ConfigError("window_fraction must lie in (0, 1]", "window_fraction")
    # delegate physical invariants and name the offending key
    try:
        cfg.params()
    except ValueError as exc:
        key = next((k for k in ("delta", "mu", "nu", "d", "D") if str(exc).startswith(k)), None)
        raise ConfigError(str(exc), key) from exc
    try:
        cfg.grid()
    except ValueError as exc:
        msg = str(exc)
        key = "outer_bc" if "outer_bc" in msg else "nt_report" if "nt_report" in msg else \
            "hx" if msg.startswith(("hx", "x ")) else "hy" if msg.startswith("y ") else "hx"
        raise ConfigError(msg, key) from exc
    try:
        cfg.geometry_obj()
    except ValueError as exc:
        raise ConfigError(str(exc), "a") from exc


def parse_text(text: str) -> Config:
    known = {f.name: f for f in fields(Config)}
    seen: dict[str, int] = {}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", None, lineno)
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", key, lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", key, lineno)
        seen[key] = lineno
        cast = _CASTS.get(key, float)
        try:
            values[key] = cast(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", key, lineno) from exc
    cfg = Config(**values)
    _validate(cfg)
    return cfg


def parse_config(path) -> Config:
    with open(path) as fh:
        return parse_text(fh.read())

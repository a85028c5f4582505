"""Front tracking on the road and spreading-speed estimation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from . import dispersion
from .geometry import Geometry, metric
from .model import ModelParams
from .solver import FieldState, GridSpec, RunConfig, Trajectory, compact_datum, run

REPORT_HEADER = ("geometry", "a", "theta0", "side", "speed", "stderr", "c_kpp", "c_brr", "ratio")


class TooFewSamples(ValueError):
    pass


@dataclass(frozen=True)
class FrontSeries:
    times: np.ndarray
    positions: np.ndarray
    threshold: float
    side: str = "right"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        r = np.asarray(self.positions, dtype=float)
        if t.shape != r.shape or t.ndim != 1:
            raise ValueError("times and positions must be 1-D of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(r)):
            raise ValueError("positions must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", r)


def _crossing(x: np.ndarray, u: np.ndarray, threshold: float, side: str) -> float | None:
    above = np.nonzero(u >= threshold)[0]
    if above.size == 0:
        return None
    if side == "right":
        k = above[-1]
        if k == len(u) - 1:
            return float(x[k])
        nb = k + 1
    elif side == "left":
        k = above[0]
        if k == 0:
            return float(x[k])
        nb = k - 1
    else:
        raise ValueError(f"side must be 'right' or 'left', got {side!r}")
    s = (u[k] - threshold) / (u[k] - u[nb])
    return float(x[k] + s * (x[nb] - x[k]))


def front_position(state: FieldState, threshold: float, side: str = "right",
                   params: ModelParams | None = None) -> float:
    """Euclidean norm of the road point where u crosses ``threshold``; 0 if u stays below."""
    if threshold <= 0 or (params is not None and threshold >= params.nu / params.mu):
        raise ValueError("threshold must lie in (0, nu/mu)")
    xs = _crossing(state.grid.x, np.asarray(state.u), threshold, side)
    if xs is None:
        return 0.0
    return float(metric(state.geometry).rtilde(xs))


def field_front_position(state: FieldState, threshold: float, height: float = 2.0,
                         side: str = "right") -> float:
    """Same tracker on the field row at height ``height`` above the road."""
    g = state.grid
    j = int(round(height / g.hy))
    if not 0 <= j < g.ny:
        raise ValueError("height outside the strip")
    xs = _crossing(g.x, np.asarray(state.v[:, j]), threshold, side)
    if xs is None:
        return 0.0
    y = float(state.geometry(xs)) + j * g.hy
    return float(math.hypot(xs, y))


def front_series(traj: Trajectory, threshold: float, side: str = "right") -> FrontSeries:
    pos = [front_position(traj.road_state(k), threshold, side) for k in range(len(traj.times))]
    return FrontSeries(np.array(traj.times), np.array(pos), threshold, side)


def fit_speed(series: FrontSeries, window_fraction: float = 0.4, t_min: float = 20.0,
              min_samples: int = 10) -> tuple[float, float]:
    """Least-squares slope over the final ``window_fraction`` of samples with t >= t_min."""
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    keep = series.times >= t_min
    t, r = series.times[keep], series.positions[keep]
    n = int(math.floor(window_fraction * len(t) + 1e-9))
    if n < min_samples:
        raise TooFewSamples(f"{n} samples in the fit window, need {min_samples}")
    t, r = t[-n:], r[-n:]
    if np.ptp(r) == 0:
        return 0.0, 0.0
    fit = stats.linregress(t, r)
    return float(fit.slope), float(fit.stderr)


def front_monotone(series: FrontSeries, t_min: float = 5.0, tol: float = 1e-9) -> bool:
    r = series.positions[series.times >= t_min]
    return bool(np.all(np.diff(r) >= -tol))


@dataclass(frozen=True)
class SpeedRow:
    geometry: str
    a: float
    theta0: float
    side: str
    speed: float
    stderr: float
    c_kpp: float
    c_brr: float

    @property
    def ratio(self) -> float:
        return self.speed / self.c_brr

    def as_tuple(self):
        return (self.geometry, self.a, self.theta0, self.side, self.speed, self.stderr,
                self.c_kpp, self.c_brr, self.ratio)


@dataclass
class SpeedReport:
    rows: list = field(default_factory=list)
    series: dict = field(default_factory=dict)

    def write_csv(self, path, header: Iterable[str] = ()):
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(REPORT_HEADER)
            for row in self.rows:
                wr.writerow([c if isinstance(c, str) else repr(float(c)) for c in row.as_tuple()])


def speed_report(params: ModelParams, geometries: Sequence[tuple[str, Geometry]], grid: GridSpec,
                 t_final: float, radius: float = 5.0, level: float = 1.0,
                 threshold_factor: float = 0.5, window_fraction: float = 0.4,
                 t_min: float = 20.0, safety: float = 0.4) -> SpeedReport:
    """Run each geometry from the same compact datum and fit both road-front speeds.

    c_brr equals c_kpp when D <= 2d, so ``ratio`` is always against the
    predicted road speed.
    """
    ck = dispersion.c_kpp(params)
    cb = dispersion.c_brr(params)
    thr = threshold_factor * params.nu / params.mu
    report = SpeedReport()
    for name, geo in geometries:
        datum = compact_datum(radius, level, 0.0, params, geo) if level > 0 else \
            compact_datum(radius, 0.0, 0.0, params, geo)
        cfg = RunConfig(params, geo, grid, datum, t_final, safety, front_guard=thr)
        traj = run(cfg)
        for side in ("right", "left"):
            series = front_series(traj, thr, side)
            speed, err = fit_speed(series, window_fraction, t_min)
            report.rows.append(SpeedRow(name, geo.a, geo.theta0, side, speed, err, ck, cb))
            report.series[(name, side)] = series
    return report

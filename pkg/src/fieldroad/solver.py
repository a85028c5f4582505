"""Explicit conservative time stepping of the road-field system.

All geometries are flattened by the shear ``w = y - rho(x)`` onto the strip
``[x_min, x_max] x [0, y_max]``.  The field operator div(A grad v) is
discretized as a vertex-centred finite volume on a skewed stencil: between
columns i and i+1 the tensor is split along the lattice directions
(hx, -s k hy), (hx, -s (k+1) hy) and (0, hy), where s = sign(rho') and
k = floor(|rho'| hx/hy).  The weights are nonnegative for every slope when
hy <= 2 hx, so the scheme is monotone and constants lie exactly in its kernel.  The road-field
exchange is one shared flux, so mass is conserved to roundoff.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numba
import numpy as np

from .geometry import Geometry, metric
from .model import ModelParams

# the bundled workqueue layer is always available and avoids TBB version probes
numba.config.THREADING_LAYER = "workqueue"

OUTER_BCS = ("dirichlet_zero", "reflecting")
DATUM_MARGIN_CELLS = 10


class CFLError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -300.0
    x_max: float = 300.0
    y_max: float = 60.0
    hx: float = 0.5
    hy: float = 0.5
    nt_report: int = 100
    outer_bc: str = "dirichlet_zero"

    def __post_init__(self):
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError("hx and hy must be positive")
        if self.outer_bc not in OUTER_BCS:
            raise ValueError(f"outer_bc must be one of {OUTER_BCS}, got {self.outer_bc!r}")
        if self.nt_report < 1:
            raise ValueError("nt_report must be >= 1")
        for name, span, h in (("x", self.x_max - self.x_min, self.hx), ("y", self.y_max, self.hy)):
            n = span / h
            if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 8:
                raise ValueError(f"{name} extent / mesh width must be an integer >= 8, got {n}")

    @property
    def nx(self) -> int:
        return int(round((self.x_max - self.x_min) / self.hx)) + 1

    @property
    def ny(self) -> int:
        return int(round(self.y_max / self.hy)) + 1

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.hx * np.arange(self.nx)

    @property
    def w(self) -> np.ndarray:
        return self.hy * np.arange(self.ny)


@dataclass(frozen=True)
class Datum:
    """Initial data u0(x) on the road and v0(x, y) in physical coordinates.

    ``center`` is the probe point for the steady-state residual; ``compact``
    data must vanish within the outer margin of the grid.
    """

    u: Callable[[np.ndarray], np.ndarray]
    v: Callable[[np.ndarray, np.ndarray], np.ndarray]
    compact: bool = True
    center: float | None = 0.0


def compact_datum(radius: float = 5.0, level: float = 1.0, center: float = 0.0,
                  params: ModelParams | None = None, geometry: Geometry | None = None) -> Datum:
    """Indicator of a disc of ``radius`` around the road point above ``center``.

    The road carries level * nu/mu on the same x-interval.
    """
    if radius <= 0 or level < 0:
        raise ValueError("radius must be positive and level nonnegative")
    ratio = 1.0 if params is None else params.nu / params.mu
    y0 = 0.0 if geometry is None else float(geometry(center))

    def u(x):
        return np.where(np.abs(x - center) <= radius, level * ratio, 0.0)

    def v(x, y):
        return np.where((x - center) ** 2 + (y - y0) ** 2 <= radius**2, level, 0.0)

    return Datum(u, v, True, center)


def constant_datum(u0: float, v0: float) -> Datum:
    return Datum(lambda x: np.full_like(x, u0, dtype=float),
                 lambda x, y: np.full(np.broadcast(x, y).shape, v0, dtype=float), False, None)


def zero_datum() -> Datum:
    return replace(constant_datum(0.0, 0.0), compact=True, center=0.0)


@dataclass(frozen=True)
class Operator:
    """Per-node conductances and volumes of the discrete system."""

    offa: np.ndarray  # (nx-1,) row offset of the first edge (i, j) -> (i+1, j+offa)
    ca: np.ndarray  # (nx-1,) its conductance; halved on boundary rows when offa = 0
    offb: np.ndarray  # (nx-1,) row offset of the second edge
    cb: np.ndarray  # (nx-1,)
    kv: np.ndarray  # (nx,) vertical edge conductance
    wy: np.ndarray  # (ny,) 1/2 on the bottom and top rows
    vol: np.ndarray  # (nx, ny) control volumes hx hy cx cy
    kr: np.ndarray  # (nx-1,) road conductance 1/(tau_{i+1/2} hx)
    rvol: np.ndarray  # (nx,) road volumes tau_i hx cx
    tau: np.ndarray  # (nx,)
    monotone: bool


@dataclass(frozen=True)
class FieldState:
    t: float
    u: np.ndarray
    v: np.ndarray
    grid: GridSpec
    geometry: Geometry
    op: Operator = field(repr=False, compare=False)


def build_operator(geometry: Geometry, grid: GridSpec) -> Operator:
    hx, hy, nx, ny = grid.hx, grid.hy, grid.nx, grid.ny
    x = grid.x
    xm = 0.5 * (x[1:] + x[:-1])
    p = np.asarray(geometry.drho(xm), dtype=float)
    q = np.abs(p) * hx / hy
    k = np.floor(q)
    frac = q - k
    sgn = np.where(p < 0, -1, 1)
    offa = (-sgn * k).astype(np.int64)
    offb = (-sgn * (k + 1)).astype(np.int64)
    ca = (1.0 - frac) * hy / hx
    cb = frac * hy / hx
    ky = (1.0 - (hy / hx) ** 2 * frac * (1.0 - frac)) * hx / hy
    kv = np.zeros(nx)
    kv[:-1] += 0.5 * ky
    kv[1:] += 0.5 * ky
    cx = np.ones(nx)
    cx[[0, -1]] = 0.5
    cy = np.ones(ny)
    cy[[0, -1]] = 0.5
    vol = hx * hy * np.outer(cx, cy)
    met = metric(geometry)
    tau = np.asarray(met.tau(x), dtype=float)
    kr = 1.0 / (np.asarray(met.tau(xm), dtype=float) * hx)
    rvol = tau * hx * cx
    monotone = bool(np.all(ky >= 0))
    if not monotone:
        warnings.warn("hy > 2 hx: the field stencil is not monotone", RuntimeWarning, stacklevel=2)
    return Operator(offa, ca, offb, cb, kv, cy.copy(), vol, kr, rvol, tau, monotone)


def discretize(geometry: Geometry, params: ModelParams, grid: GridSpec, initial: Datum) -> FieldState:
    x, w = grid.x, grid.w
    rho = np.asarray(geometry(x), dtype=float)
    u = np.asarray(initial.u(x), dtype=float) * np.ones(grid.nx)
    v = np.asarray(initial.v(x[:, None], w[None, :] + rho[:, None]), dtype=float)
    v = v * np.ones((grid.nx, grid.ny))
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ValueError("initial datum must be finite")
    if u.min() < 0 or v.min() < 0:
        raise ValueError("initial datum must be nonnegative")
    if initial.compact:
        m = DATUM_MARGIN_CELLS
        side = np.concatenate([u[:m], u[-m:]])
        band = np.concatenate([v[:m].ravel(), v[-m:].ravel(), v[:, -m:].ravel()])
        if np.any(side != 0) or np.any(band != 0):
            raise ValueError(f"datum support must stay {m} cells inside the grid")
    return FieldState(0.0, u, v, grid, geometry, build_operator(geometry, grid))


def _reaction_code(params: ModelParams) -> int:
    name = getattr(params.f, "name", None)
    return {"none": 0, "logistic": 1}.get(name, 2)


@numba.njit(cache=True)
def _edge(v, i, j, i2, j2, c, ny):
    if 0 <= j2 < ny:
        return c * (v[i2, j2] - v[i, j])
    return 0.0


@numba.njit(cache=True, parallel=True)
def _step_kernel(u, v, un, vn, fext, offa, ca, offb, cb, kv, wy, vol, kr, rvol,
                 d, D, mu, nu, dt, rcode, dirichlet):
    nx, ny = v.shape
    for i in numba.prange(nx):
        for j in range(ny):
            vp = v[i, j]
            acc = 0.0
            if i < nx - 1:
                wa = wy[j] if offa[i] == 0 else 1.0
                acc += _edge(v, i, j, i + 1, j + offa[i], ca[i] * wa, ny)
                acc += _edge(v, i, j, i + 1, j + offb[i], cb[i], ny)
            if i > 0:
                wa = wy[j] if offa[i - 1] == 0 else 1.0
                acc += _edge(v, i, j, i - 1, j - offa[i - 1], ca[i - 1] * wa, ny)
                acc += _edge(v, i, j, i - 1, j - offb[i - 1], cb[i - 1], ny)
            if j > 0:
                acc += kv[i] * (v[i, j - 1] - vp)
            if j < ny - 1:
                acc += kv[i] * (v[i, j + 1] - vp)
            acc *= d
            if j == 0:
                acc += rvol[i] * (mu * u[i] - nu * vp)
            if rcode == 1:
                react = vp * (1.0 - vp) if vp < 1.0 else 0.0
            elif rcode == 2:
                react = fext[i, j]
            else:
                react = 0.0
            vn[i, j] = vp + dt * (acc / vol[i, j] + react)
        flux = 0.0
        if i > 0:
            flux += kr[i - 1] * (u[i - 1] - u[i])
        if i < nx - 1:
            flux += kr[i] * (u[i + 1] - u[i])
        un[i] = u[i] + dt * (D * flux / rvol[i] + nu * v[i, 0] - mu * u[i])
    if dirichlet:
        for i in range(nx):
            vn[i, ny - 1] = 0.0
        for j in range(ny):
            vn[0, j] = 0.0
            vn[nx - 1, j] = 0.0
        un[0] = 0.0
        un[nx - 1] = 0.0


def _advance(u, v, n, dt, op, params, dirichlet, fext):
    """Advance in place by ``n`` steps; returns the final (u, v) buffers."""
    rcode = _reaction_code(params)
    un, vn = np.empty_like(u), np.empty_like(v)
    for _ in range(n):
        if rcode == 2:
            fext = np.asarray(params.f(v), dtype=float)
        _step_kernel(u, v, un, vn, fext, op.offa, op.ca, op.offb, op.cb, op.kv, op.wy, op.vol,
                     op.kr, op.rvol, params.d, params.D, params.mu, params.nu, dt, rcode, dirichlet)
        u, un = un, u
        v, vn = vn, v
    return u, v


def _positivity_dt(op: Operator, grid: GridSpec, params: ModelParams) -> float:
    """Largest dt keeping every update coefficient nonnegative."""
    nx, ny = grid.nx, grid.ny
    s = np.zeros((nx, ny))
    rows = np.arange(ny)
    for i in range(nx - 1):
        for off, c in ((op.offa[i], op.ca[i]), (op.offb[i], op.cb[i])):
            w = op.wy if off == 0 else np.ones(ny)
            ok = (rows + off >= 0) & (rows + off < ny)
            s[i, ok] += c * w[ok]
            s[i + 1, (rows + off)[ok]] += c * w[ok]
    s[:, :-1] += op.kv[:, None]
    s[:, 1:] += op.kv[:, None]
    field_rate = params.d * s / op.vol + params.fprime0
    field_rate[:, 0] += params.nu * op.rvol / op.vol[:, 0]
    road = np.zeros(nx)
    road[:-1] += op.kr
    road[1:] += op.kr
    road_rate = params.D * road / op.rvol + params.mu
    return float(1.0 / max(field_rate.max(), road_rate.max()))


def cfl_dt(state: FieldState, params: ModelParams, safety: float = 0.4) -> float:
    """Stable step: the analytic stencil bound, capped by the exact positivity bound."""
    if not (0 < safety <= 1):
        raise ValueError("safety must lie in (0, 1]")
    g = state.grid
    hx, hy = g.hx, g.hy
    x = g.x
    p = np.asarray(state.geometry.drho(x), dtype=float)
    a22 = 1.0 + p * p
    field_dt = hx**2 * hy**2 / (2 * params.d * (hy**2 + a22 * hx**2 + np.abs(p) * hx * hy))
    road_dt = state.op.tau**2 * hx**2 / (2 * params.D)
    react_dt = 1.0 / (params.mu + params.nu + params.fprime0)
    bound = min(field_dt.min(), road_dt.min(), react_dt, _positivity_dt(state.op, g, params))
    return safety * bound


def _check_finite(u, v):
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NonFiniteError("non-finite value in the solution")


def step(state: FieldState, dt: float, params: ModelParams) -> FieldState:
    limit = cfl_dt(state, params, 1.0)
    if not (0 < dt <= limit * (1 + 1e-12)):
        raise CFLError(f"dt={dt} outside (0, {limit}]")
    dirichlet = state.grid.outer_bc == "dirichlet_zero"
    u, v = _advance(state.u.copy(), state.v.copy(), 1, dt, state.op, params, dirichlet,
                    np.zeros((1, 1)))
    _check_finite(u, v)
    return replace(state, t=state.t + dt, u=u, v=v)


def total_mass(state: FieldState) -> float:
    """Road mass in arclength plus field mass; trapezoid weights at the grid edges."""
    return float(np.sum(state.u * state.op.rvol) + np.sum(state.v * state.op.vol))


def ordering_preserved(lo: FieldState, hi: FieldState, params: ModelParams, n_steps: int,
                       safety: float = 0.4, tol: float = -1e-10) -> bool:
    if lo.grid != hi.grid or lo.u.shape != hi.u.shape or lo.v.shape != hi.v.shape:
        raise ValueError("grid mismatch")
    if np.min(hi.u - lo.u) < -1e-12 or np.min(hi.v - lo.v) < -1e-12:
        raise ValueError("states are not ordered at t = 0")
    dt = min(cfl_dt(lo, params, safety), cfl_dt(hi, params, safety))
    dirichlet = lo.grid.outer_bc == "dirichlet_zero"
    ul, vl, uh, vh = lo.u.copy(), lo.v.copy(), hi.u.copy(), hi.v.copy()
    dummy = np.zeros((1, 1))
    for _ in range(n_steps):
        ul, vl = _advance(ul, vl, 1, dt, lo.op, params, dirichlet, dummy)
        uh, vh = _advance(uh, vh, 1, dt, hi.op, params, dirichlet, dummy)
        if np.min(uh - ul) < tol or np.min(vh - vl) < tol:
            return False
    return True


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    geometry: Geometry
    grid: GridSpec
    datum: Datum
    t_final: float = 40.0
    safety: float = 0.4
    store_field: bool = False
    probe_radius: float = 5.0
    front_guard: float | None = None  # assert u < guard within the outer margin


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    road: list = field(default_factory=list)
    field_snaps: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    final: FieldState | None = None
    dt: float = 0.0
    grid: GridSpec | None = None

    def road_state(self, k: int) -> FieldState:
        assert self.final is not None
        return replace(self.final, t=self.times[k], u=self.road[k])


def steady_residual(state: FieldState, params: ModelParams, center: float | None,
                    radius: float = 5.0) -> float:
    us, vs = params.steady_state()
    x = state.grid.x
    if center is None:
        return float(max(np.max(np.abs(state.u - us)), np.max(np.abs(state.v - vs))))
    rho = np.asarray(state.geometry(x), dtype=float)
    y = state.grid.w[None, :] + rho[:, None]
    y0 = float(state.geometry(center))
    near = (x[:, None] - center) ** 2 + (y - y0) ** 2 <= radius**2
    road = np.abs(x - center) <= radius
    return float(max(np.max(np.abs(state.u[road] - us)), np.max(np.abs(state.v[near] - vs))))


def _diagnostics(state, params, center, radius):
    return (state.t, total_mass(state), float(state.u.min()), float(state.v.min()),
            float(state.v.max()), steady_residual(state, params, center, radius))


def run(config: RunConfig, callback: Callable[[FieldState], None] | None = None) -> Trajectory:
    """Integrate to ``t_final``, recording every ``nt_report`` steps and at the end."""
    params, grid = config.params, config.grid
    state = discretize(config.geometry, params, grid, config.datum)
    dt = cfl_dt(state, params, config.safety)
    n_total = max(1, int(math.ceil(config.t_final / dt - 1e-9)))
    dt = config.t_final / n_total
    dirichlet = grid.outer_bc == "dirichlet_zero"
    traj = Trajectory(dt=dt, grid=grid)
    center = config.datum.center

    def record(s: FieldState):
        traj.times.append(s.t)
        traj.road.append(s.u.copy())
        if config.store_field:
            traj.field_snaps.append(s.v.copy())
        traj.diagnostics.append(_diagnostics(s, params, center, config.probe_radius))
        if callback is not None:
            callback(s)

    record(state)
    u, v = state.u.copy(), state.v.copy()
    done = 0
    m = DATUM_MARGIN_CELLS
    while done < n_total:
        n = min(grid.nt_report, n_total - done)
        u, v = _advance(u, v, n, dt, state.op, params, dirichlet, np.zeros((1, 1)))
        done += n
        _check_finite(u, v)
        if config.front_guard is not None and max(u[:m].max(), u[-m:].max()) >= config.front_guard:
            raise RuntimeError(f"front reached the outer margin at t={done * dt:.3f}")
        state = replace(state, t=done * dt, u=u.copy(), v=v.copy())
        record(state)
    traj.final = state
    return traj


def write_road_csv(path, traj: Trajectory, header: Iterable[str] = ()):
    x = traj.grid.x
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "u"])
        for t, u in zip(traj.times, traj.road):
            for xi, ui in zip(x, u):
                wr.writerow([repr(float(t)), repr(float(xi)), repr(float(ui))])


def write_field_csv(path, traj: Trajectory, header: Iterable[str] = ()):
    g = traj.grid
    xx, ww = np.meshgrid(g.x, g.w, indexing="ij")
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "w", "v"])
        for t, v in zip(traj.times, traj.field_snaps):
            for xi, wi, vi in zip(xx.ravel(), ww.ravel(), v.ravel()):
                wr.writerow([repr(float(t)), repr(float(xi)), repr(float(wi)), repr(float(vi))])


def write_diagnostics_csv(path, traj: Trajectory, header: Iterable[str] = ()):
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["t", "mass", "min_u", "min_v", "max_v", "steady_residual"])
        for row in traj.diagnostics:
            wr.writerow([repr(float(c)) for c in row])


# property suites shared by the CLI and the tests

def small_grid(outer_bc: str = "reflecting") -> GridSpec:
    return GridSpec(-20.0, 20.0, 10.0, 0.5, 0.5, 100, outer_bc)


def equilibrium_residual(geometry: Geometry, params: ModelParams, grid: GridSpec | None = None) -> float:
    """Max change of the constant state (nu/mu, 1) over one CFL step."""
    grid = small_grid() if grid is None else grid
    us, vs = params.steady_state()
    st = discretize(geometry, params, grid, constant_datum(us, vs))
    nxt = step(st, cfl_dt(st, params), params)
    return float(max(np.max(np.abs(nxt.u - us)), np.max(np.abs(nxt.v - vs))))


def random_smooth_state(geometry: Geometry, params: ModelParams, grid: GridSpec,
                        rng: np.random.Generator, n_bumps: int = 4, scale: float = 1.0) -> FieldState:
    """Nonnegative sum of Gaussian bumps on the road and in the strip."""
    x, w = grid.x, grid.w
    u = np.zeros(grid.nx)
    v = np.zeros((grid.nx, grid.ny))
    span = grid.x_max - grid.x_min
    for _ in range(n_bumps):
        cx = rng.uniform(grid.x_min + 0.25 * span, grid.x_max - 0.25 * span)
        cw = rng.uniform(0.0, 0.5 * grid.y_max)
        s = rng.uniform(1.0, 4.0)
        amp = scale * rng.uniform(0.0, 1.0)
        u += amp * rng.uniform(0.0, 1.0) * np.exp(-((x - cx) / s) ** 2)
        v += amp * np.exp(-(((x[:, None] - cx) ** 2 + (w[None, :] - cw) ** 2) / s**2))
    return FieldState(0.0, u, v, grid, geometry, build_operator(geometry, grid))


def mass_drift(geometry: Geometry, params: ModelParams, n_steps: int = 10_000,
               grid: GridSpec | None = None, seed: int = 0) -> float:
    """Relative mass change after ``n_steps`` without reaction and with reflecting walls."""
    grid = small_grid("reflecting") if grid is None else replace(grid, outer_bc="reflecting")
    p0 = params.without_reaction()
    st = random_smooth_state(geometry, p0, grid, np.random.default_rng(seed))
    m0 = total_mass(st)
    u, v = _advance(st.u.copy(), st.v.copy(), n_steps, cfl_dt(st, p0), st.op, p0, False,
                    np.zeros((1, 1)))
    return abs(total_mass(replace(st, u=u, v=v)) - m0) / m0


def ordering_trials(geometry: Geometry, params: ModelParams, trials: int = 20,
                    n_steps: int = 1000, seed: int = 0, grid: GridSpec | None = None) -> int:
    """Number of random ordered pairs whose order survives ``n_steps``."""
    grid = small_grid("dirichlet_zero") if grid is None else grid
    rng = np.random.default_rng(seed)
    passed = 0
    for _ in range(trials):
        lo = random_smooth_state(geometry, params, grid, rng)
        gap = random_smooth_state(geometry, params, grid, rng, scale=0.5)
        hi = replace(lo, u=lo.u + gap.u, v=lo.v + gap.v)
        passed += ordering_preserved(lo, hi, params, n_steps)
    return passed

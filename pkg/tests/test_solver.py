import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldroad import geometry as G
from fieldroad import solver as S
from fieldroad.model import ModelParams

GEOMETRIES = [G.exact_cone(0.0), G.exact_cone(1.0), G.hyperbola(1.0), G.decaying_bump(), G.flat()]
IDS = ["cone0", "cone1", "hyperbola1", "bump", "flat"]


@pytest.fixture(scope="module")
def p():
    return ModelParams(d=1.0, D=4.0, mu=1.0, nu=1.0)


# ------------------------------------------------------------------ grid and discretize

def test_gridspec_guards():
    with pytest.raises(ValueError):
        S.GridSpec(-1.0, 1.0, 10.0, 0.5, 0.5)  # 4 cells in x
    with pytest.raises(ValueError):
        S.GridSpec(-10.0, 10.0, 10.0, 0.3, 0.5)  # non-integer ratio
    with pytest.raises(ValueError):
        S.GridSpec(outer_bc="periodic")
    g = S.small_grid()
    assert (g.nx, g.ny) == (81, 21)
    assert g.x[0] == -20.0 and g.x[-1] == 20.0 and g.w[-1] == 10.0


def test_discretize_constant(p):
    st_ = S.discretize(G.hyperbola(1.0), p, S.small_grid(), S.constant_datum(1.0, 1.0))
    assert np.all(st_.u == 1.0) and np.all(st_.v == 1.0)


def test_discretize_samples_sheared_field(p):
    geo = G.exact_cone(1.0)
    g = S.small_grid()
    st_ = S.discretize(geo, p, g, S.Datum(lambda x: x * 0 + 0.0, lambda x, y: np.exp(-y * y), False, None))
    rho = geo(g.x)
    assert np.allclose(st_.v, np.exp(-(g.w[None, :] + rho[:, None]) ** 2))


def test_discretize_compact_bump(p):
    g = S.small_grid()
    st_ = S.discretize(G.flat(), p, g, S.compact_datum(3.0, 1.0, 0.0, p))
    far = np.abs(g.x) > 3.0
    assert np.all(st_.u[far] == 0) and np.all(st_.v[far] == 0)
    assert st_.u[np.argmin(np.abs(g.x))] == 1.0


def test_discretize_margin_guard(p):
    with pytest.raises(ValueError, match="cells inside"):
        S.discretize(G.flat(), p, S.small_grid(), S.compact_datum(18.0, 1.0, 0.0, p))


def test_discretize_rejects_negative(p):
    with pytest.raises(ValueError):
        S.discretize(G.flat(), p, S.small_grid(), S.constant_datum(-1.0, 0.0))


# ------------------------------------------------------------------ step

@pytest.mark.parametrize("geo", GEOMETRIES, ids=IDS)
def test_equilibrium_exact(geo, p):
    assert S.equilibrium_residual(geo, p) <= 1e-13


def test_point_mass_feeds_contact_column_only(p):
    g = S.small_grid()
    st_ = S.discretize(G.exact_cone(1.0), p, g, S.zero_datum())
    i0 = g.nx // 2 + 5
    v = st_.v.copy()
    v[i0, 0] = 1.0
    st_ = dataclasses.replace(st_, v=v)
    dt = S.cfl_dt(st_, p)
    nxt = S.step(st_, dt, p)
    expect = np.zeros(g.nx)
    expect[i0] = p.nu * dt
    assert np.allclose(nxt.u, expect, rtol=1e-14, atol=0)
    assert nxt.t == pytest.approx(dt)


def test_step_rejects_large_dt(p):
    st_ = S.discretize(G.flat(), p, S.small_grid(), S.zero_datum())
    with pytest.raises(S.CFLError):
        S.step(st_, 1.01 * S.cfl_dt(st_, p, 1.0), p)
    with pytest.raises(S.CFLError):
        S.step(st_, 0.0, p)


def test_step_flags_nonfinite(p):
    st_ = S.discretize(G.flat(), p, S.small_grid(), S.zero_datum())
    v = st_.v.copy()
    v[40, 5] = np.nan
    with pytest.raises(S.NonFiniteError):
        S.step(dataclasses.replace(st_, v=v), S.cfl_dt(st_, p), p)


def test_mass_conserved_per_step(p):
    p0 = p.without_reaction()
    g = S.small_grid("reflecting")
    st_ = S.random_smooth_state(G.exact_cone(1.0), p0, g, np.random.default_rng(3))
    m0 = S.total_mass(st_)
    nxt = S.step(st_, S.cfl_dt(st_, p0), p0)
    assert abs(S.total_mass(nxt) - m0) <= 1e-12 * m0


# ------------------------------------------------------------------ CFL

def test_cfl_flat_reduction(p):
    h = 0.5
    st_ = S.discretize(G.flat(), p, S.small_grid(), S.zero_datum())
    bound = 0.4 * min(h * h / (4 * p.d), h * h / (2 * p.D), 1 / (p.mu + p.nu + p.fprime0))
    assert S.cfl_dt(st_, p) <= bound * (1 + 1e-12)
    assert S.cfl_dt(st_, p, 1.0) == pytest.approx(S.cfl_dt(st_, p) / 0.4)


@pytest.mark.parametrize("geo", GEOMETRIES[:3], ids=IDS[:3])
def test_cfl_refinement(geo, p):
    g = S.GridSpec(-20.0, 20.0, 10.0, 0.5, 0.5)
    g2 = dataclasses.replace(g, hx=0.25, hy=0.25)
    dt = S.cfl_dt(S.discretize(geo, p, g, S.zero_datum()), p)
    dt2 = S.cfl_dt(S.discretize(geo, p, g2, S.zero_datum()), p)
    # the exact cap carries the O(1/h) exchange rate 2 nu tau / hy: ratio 4 (1 - O(h))
    assert dt / dt2 >= 3.8
    # the analytic stencil term alone is purely diffusive and scales by exactly 4
    def stencil(h):
        q = np.abs(geo.drho(g.x))
        return np.min(h**4 / (2 * p.d * h * h * (2 + q * q + q)))
    assert stencil(0.5) / stencil(0.25) == pytest.approx(4.0, rel=1e-14)


def test_cfl_guard(p):
    st_ = S.discretize(G.flat(), p, S.small_grid(), S.zero_datum())
    with pytest.raises(ValueError):
        S.cfl_dt(st_, p, 0.0)


def test_long_run_stays_finite(p):
    g = S.small_grid("dirichlet_zero")
    st_ = S.random_smooth_state(G.exact_cone(1.0), p, g, np.random.default_rng(1))
    dt = S.cfl_dt(st_, p)
    u, v = S._advance(st_.u.copy(), st_.v.copy(), 100_000, dt, st_.op, p, True, np.zeros((1, 1)))
    assert np.all(np.isfinite(u)) and np.all(np.isfinite(v))
    assert u.min() >= -1e-10 and v.min() >= -1e-10 and v.max() <= 1 + 1e-12


# ------------------------------------------------------------------ mass

def test_total_mass_zero_state(p):
    assert S.total_mass(S.discretize(G.hyperbola(1.0), p, S.small_grid(), S.zero_datum())) == 0.0


@given(st.integers(-8, 8))
@settings(max_examples=15, deadline=None)
def test_total_mass_translation(shift):
    p = ModelParams()
    g = S.small_grid()
    a = S.discretize(G.flat(), p, g, S.compact_datum(4.0, 1.0, 0.0, p))
    b = S.discretize(G.flat(), p, g, S.compact_datum(4.0, 1.0, shift * g.hx, p))
    assert S.total_mass(a) == pytest.approx(S.total_mass(b), abs=1e-12)


def test_total_mass_arclength_weight(p):
    g = S.small_grid()
    st_ = S.discretize(G.exact_cone(1.0), p, g, S.constant_datum(1.0, 0.0))
    # road measure is the arclength of the graph: trapezoid sum of tau
    tau = G.metric(G.exact_cone(1.0)).tau(g.x)
    assert S.total_mass(st_) == pytest.approx(np.trapezoid(tau, g.x), rel=1e-14)


@pytest.mark.parametrize("geo", GEOMETRIES[:3], ids=IDS[:3])
def test_mass_drift_10k_steps(geo, p):
    assert S.mass_drift(geo, p, 10_000) <= 1e-6


# ------------------------------------------------------------------ ordering

def test_ordering_degenerate(p):
    g = S.small_grid("dirichlet_zero")
    st_ = S.random_smooth_state(G.exact_cone(1.0), p, g, np.random.default_rng(0))
    assert S.ordering_preserved(st_, st_, p, 200)
    zero = dataclasses.replace(st_, u=np.zeros_like(st_.u), v=np.zeros_like(st_.v))
    assert S.ordering_preserved(zero, st_, p, 200)


def test_ordering_guards(p):
    g = S.small_grid()
    a = S.random_smooth_state(G.flat(), p, g, np.random.default_rng(0))
    b = dataclasses.replace(a, v=a.v - 0.1)
    with pytest.raises(ValueError):
        S.ordering_preserved(a, b, p, 10)
    other = S.discretize(G.flat(), p, S.GridSpec(-10.0, 10.0, 10.0, 0.5, 0.5), S.zero_datum())
    with pytest.raises(ValueError):
        S.ordering_preserved(other, a, p, 10)


@given(st.integers(0, 2**31 - 1), st.sampled_from([0, 1, 2, 3]))
@settings(max_examples=12, deadline=None)
def test_ordering_random_pairs(seed, gi):
    p = ModelParams()
    assert S.ordering_trials(GEOMETRIES[gi], p, trials=1, n_steps=300, seed=seed) == 1


def test_operator_monotone_at_steep_apex():
    op = S.build_operator(G.exact_cone(1.0), S.small_grid())
    assert op.monotone
    assert np.all(op.ca >= 0) and np.all(op.cb >= 0) and np.all(op.kv >= 0)
    assert np.max(np.abs(op.offb)) == 2  # slope 1.347 spans two rows at hx = hy


# ------------------------------------------------------------------ run

def test_invasion(p):
    grid = S.GridSpec(-100.0, 100.0, 30.0, 0.5, 0.5, 200)
    cfg = S.RunConfig(p, G.exact_cone(1.0), grid, S.compact_datum(5.0, 1.0, 0.0, p, G.exact_cone(1.0)),
                      t_final=40.0)
    traj = S.run(cfg)
    diag = np.array(traj.diagnostics)
    assert diag[-1, 0] == pytest.approx(40.0)
    assert diag[-1, 5] <= 0.05
    assert diag[:, 2].min() >= -1e-10 and diag[:, 3].min() >= -1e-10


def test_run_without_reaction_mass_flat(p):
    p0 = p.without_reaction()
    grid = S.GridSpec(-30.0, 30.0, 15.0, 0.5, 0.5, 50, "reflecting")
    cfg = S.RunConfig(p0, G.hyperbola(1.0), grid, S.compact_datum(4.0, 1.0, 0.0, p0, G.hyperbola(1.0)),
                      t_final=5.0)
    m = np.array([row[1] for row in S.run(cfg).diagnostics])
    assert np.max(np.abs(m - m[0])) <= 1e-12 * m[0]


def test_run_zero_datum(p):
    grid = S.GridSpec(-20.0, 20.0, 10.0, 0.5, 0.5, 50)
    traj = S.run(S.RunConfig(p, G.exact_cone(0.0), grid, S.zero_datum(), t_final=3.0, store_field=True))
    assert all(np.all(u == 0) for u in traj.road)
    assert all(np.all(v == 0) for v in traj.field_snaps)


def test_run_reports_on_cadence(p):
    grid = S.GridSpec(-20.0, 20.0, 10.0, 0.5, 0.5, 25)
    traj = S.run(S.RunConfig(p, G.flat(), grid, S.compact_datum(3.0, 1.0, 0.0, p), t_final=2.0))
    n = round(2.0 / traj.dt)
    assert len(traj.times) == 1 + -(-n // 25)
    assert traj.times[-1] == pytest.approx(2.0) and np.all(np.diff(traj.times) > 0)


def test_front_guard(p):
    grid = S.GridSpec(-20.0, 20.0, 10.0, 0.5, 0.5, 50)
    cfg = S.RunConfig(p, G.flat(), grid, S.compact_datum(5.0, 1.0, 0.0, p), t_final=30.0,
                      front_guard=0.5)
    with pytest.raises(RuntimeError, match="outer margin"):
        S.run(cfg)


def test_run_deterministic(p, tmp_path):
    grid = S.GridSpec(-20.0, 20.0, 10.0, 0.5, 0.5, 50)
    cfg = S.RunConfig(p, G.hyperbola(1.0), grid, S.compact_datum(3.0, 1.0, 0.0, p, G.hyperbola(1.0)),
                      t_final=2.0, store_field=True)
    paths = []
    for k in range(2):
        traj = S.run(cfg)
        for name, writer in (("road", S.write_road_csv), ("field", S.write_field_csv),
                             ("diag", S.write_diagnostics_csv)):
            path = tmp_path / f"{name}{k}.csv"
            writer(path, traj, ["seed = 0"])
            paths.append(path)
    for a, b in zip(paths[:3], paths[3:]):
        assert a.read_bytes() == b.read_bytes()
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "# seed = 0" and lines[1] == "t,x,u"
    assert paths[1].read_text().splitlines()[1] == "t,x,w,v"
    assert paths[2].read_text().splitlines()[1] == "t,mass,min_u,min_v,max_v,steady_residual"

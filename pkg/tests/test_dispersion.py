import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fieldroad import dispersion as dp
from fieldroad.model import ModelParams

from oracles import base_cbrr, base_exists, base_residuals, strip_residuals

CBRR4 = 2.26928922534  # d=1, D=4, mu=nu=1, f'(0)=1 at tol 1e-8; dense-grid bisection oracle agrees


@pytest.mark.parametrize("d,fp,expected", [(1, 1, 2.0), (4, 1, 4.0), (1, 0.25, 1.0)])
def test_c_kpp(d, fp, expected):
    from fieldroad.model import logistic_reaction
    f = logistic_reaction()
    p = ModelParams(d=d, fprime0=fp, f=lambda v: fp * f(v), validate_kpp=False)
    assert dp.c_kpp(p) == expected


def test_curve_alpha_at_zero_beta():
    p = ModelParams(D=4.0)
    for c in (0.0, 1.0, 3.0):
        am, ap = dp.curve_alpha(c, 0.0, 0.0, 0.0, p)
        assert am == pytest.approx(0.0, abs=1e-15) and ap == pytest.approx(c / 4.0)


def test_curve_alpha_example():
    p = ModelParams(d=1, D=1, mu=1, nu=1)
    am, ap = dp.curve_alpha(3.0, 1.0, 0.0, 0.0, p)
    assert (am, ap) == pytest.approx(((3 - math.sqrt(11)) / 2, (3 + math.sqrt(11)) / 2))
    for a in (am, ap):
        assert -a * a + 3 * a - 0.5 + 1 == pytest.approx(0.0, abs=1e-12)


def test_curve_alpha_empty_below_threshold():
    p = ModelParams(D=4.0)
    # at c = 0.1 the discriminant c^2 + 4 D mu d beta/(nu + d beta) ... is negative for beta < 0 near -1
    assert dp.curve_alpha(0.1, -0.9, 0.0, 0.0, p) is None


def test_circle_alpha_examples():
    p = ModelParams()
    assert dp.circle_alpha(2.0, 0.0, p) == pytest.approx((1.0, 1.0))
    lo, hi = dp.circle_alpha(3.0, 0.0, p)
    assert (lo, hi) == pytest.approx(((3 - math.sqrt(5)) / 2, (3 + math.sqrt(5)) / 2))
    assert lo * lo - 3 * lo + 1 == pytest.approx(0.0, abs=1e-14)
    assert dp.circle_alpha(1.0, 0.0, p) is None
    assert dp.circle_alpha(3.0, 2.0, p) is None


@pytest.mark.parametrize("D", [1.5, 2.0])
def test_witness_just_above_kpp_matches_oracle(D):
    # the oracle finds a witness at D = 2d but none for D = 1.5 (see the decisions ledger)
    c = 2.0 + 1e-3
    p = ModelParams(D=D)
    expected = base_exists(c, 1, D, 1, 1, 1)
    assert expected == (D == 2.0)
    assert (dp.intersection_witness(c, 0.0, 0.0, p) is not None) == expected


def test_witness_residuals_and_gamma(params4, cbrr4):
    c = 1.01 * cbrr4
    assert base_exists(c, 1, 4, 1, 1, 1)
    w = dp.intersection_witness(c, 0.0, 0.0, params4.penalized())
    p = ModelParams(D=4.0, delta=0.0)
    w = dp.intersection_witness(1.01 * CBRR4, 0.0, 0.0, p)
    assert max(abs(r) for r in base_residuals(w.c, w.alpha, w.beta, w.gamma, 1, 4, 1, 1, 1)) <= 1e-10
    assert w.gamma == pytest.approx(1.0 / (1.0 + w.beta), abs=1e-12)
    assert w.alpha > 0 and w.beta > 0


def test_witness_below_kpp_is_precondition_error():
    with pytest.raises(ValueError):
        dp.intersection_witness(1.9, 0.0, 0.0, ModelParams())


def test_c_brr_regression():
    p = ModelParams(D=4.0)
    cb = dp.c_brr(p)
    assert cb == pytest.approx(CBRR4, abs=2e-8)
    assert base_cbrr(1, 4, 1, 1, 1, lo=2.26, hi=2.28, tol=1e-7) == pytest.approx(cb, abs=3e-7)


def test_c_brr_boundary_and_small_D():
    assert dp.c_brr(ModelParams(D=2.0)) == pytest.approx(2.0, abs=1e-6)
    assert not base_exists(2.0 - 1e-4, 1, 2, 1, 1, 1) and base_exists(2.0 + 1e-4, 1, 2, 1, 1, 1)
    assert dp.c_brr(ModelParams(D=1.0)) == 2.0


def test_c_brr_monotone_in_D_and_d():
    tol = 1e-8
    vals = [dp.c_brr(ModelParams(D=D)) for D in (2.5, 3.0, 4.0)]
    assert np.all(np.diff(vals) > 10 * tol)
    assert vals == pytest.approx([2.03434505, 2.10318662, CBRR4], abs=1e-7)
    # nonincreasing in d (fixed D = 6)
    from fieldroad.model import logistic_reaction
    ds = [dp.c_brr(ModelParams(d=d, D=6.0)) / 1.0 for d in (0.8, 1.0, 1.2)]
    kpp = [2 * math.sqrt(d) for d in (0.8, 1.0, 1.2)]
    assert all(c >= k for c, k in zip(ds, kpp))


def test_c_brr_tolerance_guard():
    with pytest.raises(ValueError):
        dp.c_brr(ModelParams(), tol=0.0)


@given(st.floats(min_value=0.5, max_value=2.0), st.floats(min_value=2.1, max_value=8.0))
@settings(max_examples=15, deadline=None)
def test_c_brr_at_least_kpp(d, D):
    p = ModelParams(d=d, D=D * d)
    assert dp.c_brr(p) >= dp.c_kpp(p) - 1e-12


def test_perturbed_witness_gap(params4_nodelta):
    p = params4_nodelta
    c = 1.05 * CBRR4
    base = dp.intersection_witness(c, 0.0, 0.0, p)
    w0, da0, db0 = dp.perturbed_witness(c, 0.0, p)
    assert (w0.alpha, w0.beta) == (base.alpha, base.beta) and da0 == 0
    w, da, db = dp.perturbed_witness(c, 1e-3, p)
    assert da <= 1e-2
    gaps = [dp.perturbed_witness(c, eta, p)[1] for eta in (1e-2, 5e-3, 2.5e-3)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_perturbed_witness_below_cbrr_raises(params4_nodelta):
    with pytest.raises(dp.DispersionError):
        dp.perturbed_witness(0.99 * CBRR4, 1e-3, params4_nodelta)


def test_z_residuals_examples(params4):
    sol = dp.ComplexDispersion(2.0, 10.0, 0j, 0j, 0j, 0j)
    z = dp.z_residuals(sol, params4)
    assert z[1] == pytest.approx(-params4.rate) and z[2] == pytest.approx(-params4.mu)
    b = 0.3 + 0.2j
    g1 = 0.7 - 0.1j
    g2 = -g1 * np.exp(-2 * b * 10.0)
    z = dp.z_residuals(dp.ComplexDispersion(2.0, 10.0, 0.5 + 0.1j, b, g1, g2), params4)
    assert abs(z[3]) <= 1e-15


@pytest.fixture(scope="module")
def cl10():
    p = ModelParams(D=4.0, delta=0.0)
    return p, dp.c_L(10.0, p)


def test_c_L_regression_and_bracket(cl10):
    p, c = cl10
    assert c == pytest.approx(2.2609308866, abs=1e-7)
    assert 2.0 < c < CBRR4


def test_solve_complex_just_below_c_L(cl10):
    p, c = cl10
    roots = dp.solve_complex(c - 1e-6, 10.0, p)
    assert roots
    for s in roots:
        z = strip_residuals(s.c, s.L, s.alpha, s.beta, s.gamma1, s.gamma2, 1, 4, 1, 1, p.rate)
        assert max(abs(v) for v in z) <= 1e-10
        assert s.beta.real > 0 and abs(s.beta.imag) >= 1e-8 and abs(s.alpha.imag) >= 1e-8
        conj = s.conjugate()
        zc = dp.z_residuals(conj, p)
        assert np.max(np.abs(zc)) <= 1e-10


def test_solve_complex_empty_at_c_brr(params4_nodelta):
    assert dp.solve_complex(CBRR4, 10.0, params4_nodelta) == []
    assert len(dp.complex_seeds(params4_nodelta)) >= 64


def test_solve_complex_guard(params4):
    with pytest.raises(ValueError):
        dp.solve_complex(2.1, 0.0, params4)

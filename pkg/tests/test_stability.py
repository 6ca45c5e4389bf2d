from __future__ import annotations

import numpy as np
import pytest
from conftest import calibrated
from hypothesis import given, settings
from hypothesis import strategies as st

from fraclap.extension import (
    boundary_operator,
    solve_boundary_reaction,
    solve_conormal_problem,
    solve_extension_dirichlet,
    ExtensionSolveError,
)
from fraclap.grid import (
    ExtensionField,
    FracParams,
    GridError,
    GridFunction,
    default_grading,
    make_extension_grid,
    make_line_grid,
    make_torus_grid,
)
from fraclap.nonlinearity import builtin, polynomial
from fraclap.stability import (
    CUTOFF_SLOPE,
    caccioppoli_check,
    cutoff,
    cutoff_derivative,
    lambda_min,
    sign_classification,
    stability_form_extension,
    stability_form_fractional,
    trace_derivative,
)


@pytest.fixture(scope="module")
def pn_layer():
    g = make_line_grid(80.0, 512)
    p = calibrated(0.5)
    init = GridFunction(g, np.tanh(g.nodes / 5), (-1.0, 1.0))
    rep = solve_boundary_reaction(builtin("pn_sine"), init, p)
    assert rep.converged
    return rep.solution, p


def torus(n=1, N=64):
    return make_torus_grid(n, 2 * np.pi, N)


# ---- quadratic forms --------------------------------------------------------


def test_fractional_form_of_constants():
    g = torus()
    p = calibrated(0.5)
    one = GridFunction(g, np.ones(64))
    v = GridFunction(g, np.zeros(64))
    assert stability_form_fractional(v, one, polynomial([0.0, -1.0]), p) == pytest.approx(2 * np.pi, rel=1e-12)
    assert stability_form_fractional(v, one, builtin("zero"), p) == pytest.approx(0.0, abs=1e-12)


def test_fractional_form_rejects_grid_mismatch():
    p = calibrated(0.5)
    with pytest.raises(GridError):
        stability_form_fractional(GridFunction(torus(N=32), np.zeros(32)),
                                  GridFunction(torus(N=64), np.zeros(64)), builtin("zero"), p)


def test_extension_form_examples(rng):
    g = torus(N=16)
    p = FracParams(0.4)
    eg = make_extension_grid(g, 3.0, 10, default_grading(p.alpha))
    u = ExtensionField(eg, rng.uniform(-1, 1, eg.shape))
    one = ExtensionField(eg, np.ones(eg.shape))
    nl = builtin("pn_sine")
    expected = -np.sum(nl.fprime(u.values[0])) * g.h
    assert stability_form_extension(u, one, nl, p) == pytest.approx(expected, rel=1e-12)
    phi = ExtensionField(eg, rng.standard_normal(eg.shape))
    assert stability_form_extension(u, phi, builtin("zero"), p) >= 0.0


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-10, 10), seed=st.integers(0, 2**31 - 1))
def test_fractional_form_scales_quadratically(c, seed):
    r = np.random.default_rng(seed)
    g = torus(N=32)
    p = calibrated(0.5)
    v = GridFunction(g, r.uniform(-1, 1, 32))
    psi = GridFunction(g, r.standard_normal(32))
    nl = builtin("pn_sine")
    base = stability_form_fractional(v, psi, nl, p)
    scaled = stability_form_fractional(v, psi.with_values(c * psi.values), nl, p)
    assert scaled == pytest.approx(c * c * base, rel=1e-10, abs=1e-12)


# ---- smallest eigenvalue ------------------------------------------------------


def test_stable_constant():
    g = torus()
    rep = lambda_min(GridFunction(g, np.zeros(64)), polynomial([0.0, -2.0]), calibrated(0.5))
    assert rep.lambda_min == pytest.approx(2.0, abs=1e-12)
    assert rep.stable


def test_unstable_constant():
    g = torus()
    rep = lambda_min(GridFunction(g, np.zeros(64)), polynomial([0.0, 1.0]), calibrated(0.5))
    assert rep.lambda_min == pytest.approx(-1.0, abs=1e-12)
    assert not rep.stable


def test_report_invariants(rng):
    g = torus(N=64)
    v = GridFunction(g, rng.uniform(-1, 1, 64))
    rep = lambda_min(v, builtin("pn_sine"), calibrated(0.5))
    assert rep.residual <= 1e-6
    assert rep.eigenfunction.norm() == pytest.approx(1.0, rel=1e-12)
    assert rep.form_value == pytest.approx(rep.lambda_min, abs=1e-8)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_eigenvalue_bounds_sampled_rayleigh_quotients(seed):
    r = np.random.default_rng(seed)
    g = torus(N=32)
    p = calibrated(0.5)
    v = GridFunction(g, r.uniform(-1.5, 1.5, 32))
    nl = builtin("pn_sine")
    lam = lambda_min(v, nl, p).lambda_min
    for _ in range(200):
        psi = GridFunction(g, r.standard_normal(32))
        q = stability_form_fractional(v, psi, nl, p) / psi.inner(psi)
        assert q >= lam - 1e-6


def test_iterative_and_dense_agree_in_two_dimensions(rng):
    g = torus(2, 16)
    v = GridFunction(g, rng.uniform(-1, 1, g.shape))
    p = calibrated(0.5, 2)
    nl = builtin("pn_sine")
    dense = lambda_min(v, nl, p, method="dense")
    it = lambda_min(v, nl, p, method="iterative")
    assert it.lambda_min == pytest.approx(dense.lambda_min, abs=1e-8)
    assert abs(it.eigenfunction.inner(dense.eigenfunction)) == pytest.approx(1.0, abs=1e-6)


def test_layer_translation_mode(pn_layer):
    v, p = pn_layer
    rep = lambda_min(v, builtin("pn_sine"), p)
    assert -1e-3 <= rep.lambda_min <= 1e-3
    vy = trace_derivative(v).values
    e = rep.eigenfunction.values
    corr = abs(np.dot(e, vy)) / (np.linalg.norm(e) * np.linalg.norm(vy))
    assert corr >= 0.99


def test_layer_rayleigh_quotient_at_derivative(pn_layer):
    v, p = pn_layer
    A, _, free = boundary_operator(v.grid, p, v.far_field)
    # clamping at the window edges creates a boundary layer that breaks
    # translation invariance there; the zero mode lives in the interior
    y = v.grid.nodes[free]
    psi = trace_derivative(v).values[free] * (np.abs(y) <= 30.0)
    L = A - np.diag(builtin("pn_sine").fprime(v.values[free]))
    assert abs(psi @ L @ psi) <= 1e-3 * (psi @ psi)


# ---- trichotomy ----------------------------------------------------------------


def test_sign_classification_examples(pn_layer):
    v, _ = pn_layer
    assert sign_classification(trace_derivative(v)) == "positive"
    g = torus()
    assert sign_classification(trace_derivative(GridFunction(g, np.full(64, 2.0)))) == "zero"
    assert sign_classification(GridFunction(g, np.sin(g.nodes))) == "mixed"
    assert sign_classification(GridFunction(g, -1.0 - np.cos(g.nodes) ** 2)) == "negative"


def test_trace_derivative_is_spectral_on_torus():
    g = torus()
    dv = trace_derivative(GridFunction(g, np.sin(3 * g.nodes)))
    np.testing.assert_allclose(dv.values, 3 * np.cos(3 * g.nodes), atol=1e-12)


# ---- cutoff and Caccioppoli chain ---------------------------------------------


def test_cutoff_profile():
    t = np.linspace(0, 3, 3001)
    z = cutoff(t)
    assert np.all(z[t <= 1] == 1.0) and np.all(z[t >= 2] == 0.0)
    assert np.all(np.diff(z) <= 1e-13)
    dz = cutoff_derivative(t)
    assert np.max(np.abs(dz)) == pytest.approx(CUTOFF_SLOPE, rel=1e-6)
    mid = (t > 1.05) & (t < 1.95)
    step = 1e-5
    num = (cutoff(t[mid] + step) - cutoff(t[mid] - step)) / (2 * step)
    np.testing.assert_allclose(num, dz[mid], atol=1e-7)


def caccioppoli_setup(s=0.5, N=64, M=64):
    g = torus(N=N)
    p = FracParams(s)
    eg = make_extension_grid(g, 8.0, M, default_grading(p.alpha))
    return g, p, eg


def test_caccioppoli_constant_sigma():
    g, p, eg = caccioppoli_setup()
    sigma = ExtensionField(eg, np.full(eg.shape, 2.0))
    one = ExtensionField(eg, np.ones(eg.shape))
    rec = caccioppoli_check(sigma, one, p, np.pi / 4)
    assert rec.lhs == 0.0 and rec.rhs >= 0.0


def test_caccioppoli_zero_flux_solution():
    g, p, eg = caccioppoli_setup(0.75)
    top = GridFunction(g, np.cos(g.nodes))
    sigma = solve_conormal_problem(None, p, eg, top)
    one = ExtensionField(eg, np.ones(eg.shape))
    for R in (np.pi / 4, np.pi / 2):
        rec = caccioppoli_check(sigma, one, p, R)
        assert abs(rec.boundary_term) <= 1e-10 * rec.lhs
        assert rec.lhs <= 1.05 * rec.rhs
        assert rec.rhs <= rec.rhs_density * (1 + 1e-12)


def test_caccioppoli_dirichlet_solution_obeys_identity_with_flux_term():
    # with nonzero flux at x = 0 the chain holds once the boundary term is kept
    g, p, eg = caccioppoli_setup(0.5)
    sigma = solve_extension_dirichlet(GridFunction(g, np.cos(g.nodes)), p, eg)
    one = ExtensionField(eg, np.ones(eg.shape))
    rec = caccioppoli_check(sigma, one, p, np.pi / 2)
    assert rec.boundary_term > 0
    assert rec.lhs <= 1.05 * (rec.rhs + rec.boundary_term)


def test_caccioppoli_linear_field():
    g = make_line_grid(200.0, 400)
    p = FracParams(0.5)
    eg = make_extension_grid(g, 60.0, 120, 1.0)
    Y = np.broadcast_to(g.nodes[None, :], eg.shape)
    sigma = ExtensionField(eg, Y, (g.nodes[0], g.nodes[-1]))
    one = ExtensionField(eg, np.ones(eg.shape))
    recs = [caccioppoli_check(sigma, one, p, R) for R in (5.0, 10.0, 20.0)]
    for rec in recs:
        assert rec.lhs <= 1.05 * rec.rhs
    # the energy near the origin grows like R^2: no decay with R
    lhs = [r.lhs for r in recs]
    assert lhs[0] < lhs[1] < lhs[2]


def test_caccioppoli_rejects_non_solutions(rng):
    g, p, eg = caccioppoli_setup(N=16, M=16)
    sigma = ExtensionField(eg, rng.standard_normal(eg.shape))
    one = ExtensionField(eg, np.ones(eg.shape))
    with pytest.raises(ExtensionSolveError):
        caccioppoli_check(sigma, one, p, np.pi / 4)


def test_caccioppoli_rejects_oversized_ball():
    g, p, eg = caccioppoli_setup(N=16, M=16)
    sigma = ExtensionField(eg, np.ones(eg.shape))
    with pytest.raises(GridError):
        caccioppoli_check(sigma, sigma, p, np.pi)

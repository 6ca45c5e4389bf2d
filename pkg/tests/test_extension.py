from __future__ import annotations

import numpy as np
import pytest
from conftest import calibrated, exact_params
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from fraclap.extension import (
    ExtensionSolveError,
    apply_extension,
    assemble_extension,
    dirichlet_to_neumann,
    interior_residual,
    neumann_trace,
    solve_boundary_reaction,
    solve_conormal_problem,
    solve_extension_dirichlet,
    weak_residual,
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
    weighted_energy,
)
from fraclap.nonlinearity import Nonlinearity, builtin, polynomial
from fraclap.ops import fraclap_fourier, poisson_extend


def setup(s=0.5, n=1, N=64, M=64, X=8.0, L=2 * np.pi):
    g = make_torus_grid(n, L, N)
    p = FracParams(s, n)
    return g, p, make_extension_grid(g, X, M, default_grading(p.alpha))


def test_constant_trace_gives_constant_field():
    g, p, eg = setup(0.3)
    u = solve_extension_dirichlet(GridFunction(g, np.full(64, 2.5)), p, eg)
    np.testing.assert_allclose(u.values, 2.5, atol=1e-12)
    assert weighted_energy(u, p.alpha) == pytest.approx(0.0, abs=1e-20)


def test_half_power_extension_of_cosine():
    g, p, eg = setup(0.5)
    u = solve_extension_dirichlet(GridFunction(g, np.cos(g.nodes)), p, eg)
    X, Y = np.meshgrid(eg.x, g.nodes, indexing="ij")
    exact = np.exp(-X) * np.cos(Y)
    assert np.linalg.norm(u.values - exact) / np.linalg.norm(exact) <= 1e-3


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_extension_follows_mode_profile(s):
    g, p, eg = setup(s, M=128)
    u = solve_extension_dirichlet(GridFunction(g, np.cos(g.nodes)), p, eg)
    theta = u.values[:, 32] / np.cos(g.nodes[32])
    assert np.max(np.abs(theta - oracles.mode_profile(s, eg.x))) <= 1e-3


@pytest.mark.parametrize("n", [1, 2])
def test_solver_methods_agree(n, rng):
    g, p, eg = setup(0.35, n=n, N=16 if n == 2 else 32, M=16)
    v = GridFunction(g, rng.standard_normal(g.shape))
    ref = solve_extension_dirichlet(v, p, eg, method="modes").values
    for method in ("direct", "pcg"):
        other = solve_extension_dirichlet(v, p, eg, method=method).values
        assert np.max(np.abs(other - ref)) <= 1e-9


def test_solution_satisfies_discrete_equation(rng):
    g, p, eg = setup(0.7, N=32, M=24)
    u = solve_extension_dirichlet(GridFunction(g, rng.standard_normal(32)), p, eg)
    assert interior_residual(u, p.alpha) <= 1e-10


def test_assembled_matrix_reproduces_energy(rng):
    g, p, eg = setup(0.6, n=2, N=8, M=10)
    u = ExtensionField(eg, rng.standard_normal(eg.shape))
    A = assemble_extension(eg, p.alpha)
    quad = float(u.values.ravel() @ (A @ u.values.ravel())) * g.cell_volume
    assert quad == pytest.approx(weighted_energy(u, p.alpha), rel=1e-12)
    np.testing.assert_allclose(apply_extension(u, p.alpha).ravel(), A @ u.values.ravel(), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(s=st.floats(0.1, 0.9), seed=st.integers(0, 2**31 - 1))
def test_minimizer_beats_perturbations(s, seed):
    r = np.random.default_rng(seed)
    g, p, eg = setup(s, N=16, M=12)
    u = solve_extension_dirichlet(GridFunction(g, r.standard_normal(16)), p, eg)
    pert = r.standard_normal(eg.shape)
    pert[0] = 0.0
    other = ExtensionField(eg, u.values + 0.1 * pert)
    assert weighted_energy(u, p.alpha) <= weighted_energy(other, p.alpha)


def test_minimizer_beats_poisson_extension():
    g, p, eg = setup(0.5, N=64, M=32)
    v = GridFunction(g, np.sin(g.nodes) + 0.4 * np.cos(3 * g.nodes))
    u = solve_extension_dirichlet(v, p, eg)
    w = poisson_extend(v, exact_params(0.5), eg)
    assert weighted_energy(u, 0.0) <= weighted_energy(w, 0.0)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_solver_agrees_with_poisson_extension_under_refinement(s):
    errs = []
    for N, M in ((32, 32), (64, 64), (128, 128)):
        g, p, eg = setup(s, N=N, M=M)
        v = GridFunction(g, np.exp(np.cos(g.nodes)))
        u = solve_extension_dirichlet(v, p, eg).values
        w = poisson_extend(v, exact_params(s), eg).values
        errs.append(np.linalg.norm(u - w) / np.linalg.norm(w))
    assert errs[-1] <= 1e-2
    assert errs[0] > errs[1] > errs[2]


def test_neumann_trace_of_constant_is_zero():
    g, p, eg = setup(0.4)
    u = ExtensionField(eg, np.full(eg.shape, 3.0))
    assert np.max(np.abs(neumann_trace(u, p).values)) == 0.0


def test_neumann_trace_of_exponential_mode():
    g, p, eg = setup(0.5)
    X, Y = np.meshgrid(eg.x, g.nodes, indexing="ij")
    u = ExtensionField(eg, np.exp(-X) * np.cos(Y))
    for method in ("variational", "fit"):
        flux = neumann_trace(u, p, method=method)
        assert np.max(np.abs(flux.values - np.cos(g.nodes))) <= 1e-3


def test_neumann_trace_rejects_non_solutions(rng):
    g, p, eg = setup(0.5, N=16, M=8)
    u = ExtensionField(eg, rng.standard_normal(eg.shape))
    with pytest.raises(ExtensionSolveError, match="residual"):
        neumann_trace(u, p)


def test_dtn_examples():
    g, p, eg = setup(0.5)
    assert np.max(np.abs(dirichlet_to_neumann(GridFunction(g, np.full(64, 1.3)), p, eg).values)) < 1e-12
    out = dirichlet_to_neumann(GridFunction(g, np.cos(g.nodes)), p, eg)
    assert np.max(np.abs(out.values - np.cos(g.nodes))) <= 1e-3


@pytest.mark.parametrize("s", [0.3, 0.8])
def test_scaled_dtn_matches_multiplier(s):
    params = calibrated(s) if s in (0.25, 0.5, 0.75) else exact_params(s)
    g, _, eg = setup(s, N=64, M=96)
    v = GridFunction(g, np.sin(2 * g.nodes) + 0.5 * np.cos(3 * g.nodes))
    D = params.require("d_ns") * dirichlet_to_neumann(v, params, eg).values
    F = fraclap_fourier(v, s).values
    assert np.linalg.norm(D - F) / np.linalg.norm(F) <= 1e-2


def test_extension_rejects_mismatched_grid():
    g, p, eg = setup(0.5, N=32)
    with pytest.raises(GridError):
        solve_extension_dirichlet(GridFunction(make_torus_grid(1, 1.0, 16), np.zeros(16)), p, eg)


# ---- weak residual ------------------------------------------------------------


def test_weak_residual_of_constant():
    g, p, eg = setup(0.5, N=32, M=16)
    u = ExtensionField(eg, np.full(eg.shape, 4.0))
    assert weak_residual(u, GridFunction(g, np.zeros(32)), p) == 0.0


def test_weak_residual_of_discrete_solution(rng):
    g, p, eg = setup(0.35, N=32, M=24)
    u = solve_extension_dirichlet(GridFunction(g, rng.standard_normal(32)), p, eg)
    assert weak_residual(u, neumann_trace(u, p), p) <= 1e-8


def test_weak_residual_of_poisson_field_decreases_with_layers():
    g = make_torus_grid(1, 2 * np.pi, 64)
    p = exact_params(0.5)
    v = GridFunction(g, np.cos(g.nodes) + 0.3 * np.sin(2 * g.nodes))
    res = []
    for M in (8, 16, 32, 64):
        eg = make_extension_grid(g, 8.0, M, 1.0)
        res.append(weak_residual(poisson_extend(v, p, eg), None, p))
    assert res[-1] > 0
    assert all(a > b for a, b in zip(res, res[1:]))


def test_conormal_problem_has_zero_flux(rng):
    g, p, eg = setup(0.6, N=16, M=16)
    top = GridFunction(g, rng.standard_normal(16))
    coef = 1.0 + 0.5 * np.cos(g.nodes)[None, :] * np.exp(-eg.x)[:, None]
    u = solve_conormal_problem(None, p, eg, top, coef=coef)
    assert np.max(np.abs(apply_extension(u, p.alpha, coef)[:-1])) <= 1e-10
    np.testing.assert_allclose(u.values[-1], top.values)


# ---- boundary reaction ----------------------------------------------------------


def test_zero_reaction_keeps_constant():
    g = make_torus_grid(1, 2 * np.pi, 64)
    rep = solve_boundary_reaction(builtin("zero"), GridFunction(g, np.full(64, 0.3)), calibrated(0.5))
    assert rep.converged and rep.iterations == 0
    np.testing.assert_allclose(rep.solution.values, 0.3)


def test_trivial_polynomial_matches_zero_reaction(rng):
    g = make_torus_grid(1, 2 * np.pi, 64)
    init = GridFunction(g, 0.3 + 0.1 * np.cos(g.nodes))
    a = solve_boundary_reaction(builtin("zero"), init, calibrated(0.5))
    v_minus_v = Nonlinearity("v-v", f=lambda v: v - v, fprime=lambda v: 1.0 - np.ones_like(v),
                             G=lambda v: 0.5 * (v * v - v * v))
    b = solve_boundary_reaction(v_minus_v, init, calibrated(0.5))
    assert a.converged and b.converged
    np.testing.assert_array_equal(a.solution.values, b.solution.values)


def test_layer_recovery_and_report_invariants():
    g = make_line_grid(80.0, 512)
    y = g.nodes
    init = GridFunction(g, np.tanh(y / 5), (-1.0, 1.0))
    rep = solve_boundary_reaction(builtin("pn_sine"), init, exact_params(0.5))
    assert rep.converged and rep.iterations <= 20
    assert rep.final_residual <= 1e-10
    assert all(a >= b for a, b in zip(rep.history, rep.history[1:]))
    assert min(b / a for a, b in zip(rep.history, rep.history[1:])) <= 0.1
    inner = np.abs(y) <= 20
    assert np.max(np.abs(rep.solution.values - 2 / np.pi * np.arctan(y))[inner]) <= 1e-2


def test_layer_solution_is_weak_solution():
    g = make_line_grid(80.0, 512)
    p = calibrated(0.5)
    init = GridFunction(g, np.tanh(g.nodes / 5), (-1.0, 1.0))
    nl = builtin("pn_sine")
    rep = solve_boundary_reaction(nl, init, p)
    eg = make_extension_grid(g, 40.0, 256, 2.0)
    u = solve_extension_dirichlet(rep.solution, p, eg)
    # the discrete extension flux and d f(v) differ by the operator mismatch,
    # so compare against the extension's own flux and the interior equation
    assert weak_residual(u, neumann_trace(u, p), p) <= 10 * 1e-10
    assert weak_residual(u, None, p) <= 10 * 1e-10


def test_singular_jacobian_does_not_crash():
    g = make_torus_grid(1, 2 * np.pi, 32)
    nl = polynomial([0.0, 1.0])  # f(v) = v makes J = L - I singular on mode 1
    init = GridFunction(g, np.cos(g.nodes) + 0.2)
    rep = solve_boundary_reaction(nl, init, exact_params(0.5), max_iter=20)
    assert np.all(np.isfinite(rep.solution.values))
    assert rep.final_residual == min(rep.history)

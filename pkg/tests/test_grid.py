from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraclap.grid import (
    Constants,
    ExtensionField,
    FracParams,
    GridError,
    GridFunction,
    UncalibratedError,
    cell_energy_density,
    default_grading,
    make_extension_grid,
    make_line_grid,
    make_torus_grid,
    weighted_cell_integrals,
    weighted_energy,
)


def test_torus_nodes_start_at_minus_half_period():
    g = make_torus_grid(1, 2 * np.pi, 8)
    expected = -np.pi + np.pi / 4 * np.arange(8)
    np.testing.assert_allclose(g.nodes, expected, rtol=0, atol=1e-15)
    assert g.nodes[0] == -np.pi


def test_two_dimensional_grid_size_and_spacing():
    g = make_torus_grid(2, 10.0, 16)
    assert g.size == 256
    assert g.h == 0.625
    assert g.shape == (16, 16)


@pytest.mark.parametrize(
    "args, message",
    [((1, 2 * np.pi, 7), "N must be even"), ((1, 1.0, 6), "at least 8"),
     ((1, -1.0, 8), "L must be positive"), ((3, 1.0, 8), "n must be")],
)
def test_boundary_grid_rejects_bad_input(args, message):
    with pytest.raises(GridError, match=message):
        make_torus_grid(*args)


def test_uniform_extension_nodes():
    g = make_torus_grid(1, 1.0, 8)
    eg = make_extension_grid(g, 1.0, 10, 1.0)
    np.testing.assert_allclose(eg.x, np.linspace(0, 1, 11), atol=1e-15)


def test_graded_extension_first_node():
    eg = make_extension_grid(make_torus_grid(1, 1.0, 8), 1.0, 10, 2.0)
    assert eg.x[1] == pytest.approx(0.01, rel=1e-14)


def test_extension_grid_rejects_few_layers_and_coarsening():
    g = make_torus_grid(1, 1.0, 8)
    with pytest.raises(GridError, match="M too small"):
        make_extension_grid(g, 1.0, 4, 2.0)
    with pytest.raises(GridError, match="gamma"):
        make_extension_grid(g, 1.0, 10, 0.5)


@pytest.mark.parametrize("alpha, first", [(0.0, 1.0), (0.5, 2.0 / 3.0), (-0.5, 2.0)])
def test_weighted_cell_integral_of_unit_cell(alpha, first):
    eg = make_extension_grid(make_torus_grid(1, 1.0, 8), 8.0, 8, 1.0)
    W = weighted_cell_integrals(eg, alpha)
    assert W[0] == pytest.approx(first, rel=1e-14)


def test_uniform_weights_at_zero_alpha():
    eg = make_extension_grid(make_torus_grid(1, 1.0, 8), 1.0, 10, 1.0)
    np.testing.assert_allclose(weighted_cell_integrals(eg, 0.0), 0.1, rtol=1e-12)


def test_weight_rejects_alpha_outside_range():
    eg = make_extension_grid(make_torus_grid(1, 1.0, 8), 1.0, 10)
    with pytest.raises(GridError):
        weighted_cell_integrals(eg, 1.0)


@settings(max_examples=60, deadline=None)
@given(
    alpha=st.floats(-0.95, 0.95),
    gamma=st.floats(1.0, 4.0),
    X=st.floats(0.1, 50.0),
    M=st.integers(8, 200),
)
def test_weighted_integrals_sum_to_exact_total(alpha, gamma, X, M):
    eg = make_extension_grid(make_torus_grid(1, 1.0, 8), X, M, gamma)
    total = weighted_cell_integrals(eg, alpha).sum()
    assert total == pytest.approx(X ** (alpha + 1) / (alpha + 1), rel=1e-12)


def test_grid_construction_is_deterministic():
    a = make_extension_grid(make_torus_grid(2, 3.0, 16), 2.0, 20, 3.0)
    b = make_extension_grid(make_torus_grid(2, 3.0, 16), 2.0, 20, 3.0)
    assert np.array_equal(a.x, b.x)
    assert a == b and hash(a) == hash(b)


def test_uniform_refinement_nests_coarse_nodes():
    g = make_torus_grid(1, 1.0, 8)
    coarse = make_extension_grid(g, 2.0, 16, 1.0).x
    fine = make_extension_grid(g, 2.0, 32, 1.0).x
    np.testing.assert_allclose(fine[::2], coarse, atol=1e-14)


@pytest.mark.parametrize("alpha, gamma", [(-0.5, 4 / 3), (0.0, 2.0), (0.5, 4.0), (0.9, 4.0)])
def test_default_grading_matches_boundary_scale(alpha, gamma):
    assert default_grading(alpha) == pytest.approx(gamma)


def test_descriptor_lists_reproducibility_keys():
    eg = make_extension_grid(make_torus_grid(1, 2.0, 8), 1.0, 8, 2.0)
    assert set(eg.descriptor()) >= {"n", "L", "N", "X", "M", "gamma"}


def test_params_validation_and_constants():
    with pytest.raises(GridError, match=r"s must lie in \(0,1\)"):
        FracParams(1.5)
    p = FracParams(0.25)
    assert p.alpha == 0.5
    assert p.constants.state("d_ns") == "unset"
    with pytest.raises(UncalibratedError):
        p.require("d_ns")
    q = p.with_constants(Constants(d_ns=2.0))
    assert q.require("d_ns") == 2.0


def test_line_function_requires_far_field():
    g = make_line_grid(10.0, 16)
    with pytest.raises(GridError):
        GridFunction(g, np.zeros(16))
    with pytest.raises(GridError):
        GridFunction(make_torus_grid(1, 1.0, 8), np.zeros(8), (0.0, 1.0))
    with pytest.raises(GridError):
        GridFunction(g, np.full(16, np.nan), (0.0, 0.0))


def test_grid_function_quadrature():
    g = make_torus_grid(1, 2 * np.pi, 32)
    v = GridFunction(g, np.cos(g.nodes))
    assert v.integral() == pytest.approx(0.0, abs=1e-13)
    assert v.inner(v) == pytest.approx(np.pi, rel=1e-13)


def test_energy_of_linear_field_is_area():
    g = make_torus_grid(1, 4.0, 16)
    eg = make_extension_grid(g, 3.0, 12, 2.0)
    u = ExtensionField(eg, np.broadcast_to(eg.x[:, None], eg.shape))
    assert weighted_energy(u, 0.0) == pytest.approx(12.0, rel=1e-12)


def test_cell_energy_density_sums_to_energy(rng):
    g = make_torus_grid(2, 3.0, 8)
    eg = make_extension_grid(g, 2.0, 9, 2.0)
    u = ExtensionField(eg, rng.standard_normal(eg.shape))
    dens = cell_energy_density(u, 0.3)
    assert dens.sum() == pytest.approx(weighted_energy(u, 0.3), rel=1e-12)

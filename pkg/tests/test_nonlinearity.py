from __future__ import annotations

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from fraclap.nonlinearity import (
    BUILTINS,
    Nonlinearity,
    NonlinearityError,
    builtin,
    parse_nonlinearity,
    polynomial,
)


@pytest.mark.parametrize("name", list(BUILTINS))
def test_builtin_derivatives_are_consistent(name):
    errs = builtin(name).verify()
    assert errs["G_vs_f"] <= 1e-6 and errs["fprime_vs_f"] <= 1e-6


@pytest.mark.parametrize("name", list(BUILTINS))
def test_builtin_zeros_are_zeros(name):
    nl = builtin(name)
    for z in nl.zeros:
        assert abs(nl.f(np.array(z))) <= 1e-14


def test_sign_of_builtins():
    assert builtin("shifted_sine").is_nonnegative()
    assert builtin("cos_well").is_nonnegative()
    assert not builtin("pn_sine").is_nonnegative()


def test_wrong_potential_is_caught():
    bad = Nonlinearity("bad", f=np.sin, fprime=np.cos, G=np.sin)
    with pytest.raises(NonlinearityError, match="consistency"):
        bad.verify()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5))
@example([0.0, 1.0, 2.225073858507203e-309])
def test_polynomial_derivatives_are_consistent(coefs):
    polynomial(coefs).verify(tol=1e-5)


def test_polynomial_zeros_in_working_range():
    nl = polynomial([-1.0, 0.0, 1.0])  # v^2 - 1
    assert nl.zeros == (-1.0, 1.0)
    assert nl.zero_pairs() == [(-1.0, 1.0)]
    assert polynomial([1.0, 0.0, 1.0]).zeros == ()


def test_parse_builtin_and_coefficients():
    assert parse_nonlinearity("pn_sine").name == "pn_sine"
    nl = parse_nonlinearity("0, 1, -1")
    assert nl.coefficients == (0.0, 1.0, -1.0)
    assert nl.f(np.array(2.0)) == pytest.approx(-2.0)
    with pytest.raises(NonlinearityError, match="unknown nonlinearity"):
        parse_nonlinearity("not_a_function")


def test_hoelder_tag_range():
    with pytest.raises(NonlinearityError):
        Nonlinearity("x", np.sin, np.cos, np.cos, beta=1.0)

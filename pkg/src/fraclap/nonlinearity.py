"""Boundary nonlinearities f together with f' and a potential G, G' = -f."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

__all__ = [
    "Nonlinearity",
    "NonlinearityError",
    "BUILTINS",
    "builtin",
    "polynomial",
    "parse_nonlinearity",
    "WORKING_RANGE",
]

WORKING_RANGE = (-2.0, 2.0)


class NonlinearityError(ValueError):
    pass


@dataclass(frozen=True)
class Nonlinearity:
    """f, f' and G with G' = -f.

    ``zeros`` lists known zeros of f in increasing order (used to set far-field
    values of layer attempts); ``beta`` tags the Hoelder exponent of f'.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    fprime: Callable[[np.ndarray], np.ndarray]
    G: Callable[[np.ndarray], np.ndarray]
    zeros: tuple = ()
    beta: float = 0.5
    coefficients: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise NonlinearityError("beta must lie in (0,1)")

    def verify(self, samples: int = 100, rng_seed: int = 0, tol: float = 1e-6,
               interval=WORKING_RANGE) -> dict:
        """Central-difference checks of G' = -f and of f'.

        Returns the worst relative errors; raises when either exceeds ``tol``.
        """
        rng = np.random.default_rng(rng_seed)
        x = np.sort(rng.uniform(*interval, samples))
        step = 1e-5
        dG = (self.G(x + step) - self.G(x - step)) / (2 * step)
        df = (self.f(x + step) - self.f(x - step)) / (2 * step)
        f = self.f(x)
        fp = self.fprime(x)
        err_G = float(np.max(np.abs(dG + f) / np.maximum(1.0, np.abs(f))))
        err_f = float(np.max(np.abs(df - fp) / np.maximum(1.0, np.abs(fp))))
        out = {"G_vs_f": err_G, "fprime_vs_f": err_f}
        if err_G > tol or err_f > tol:
            raise NonlinearityError(
                f"{self.name}: derivative consistency failed "
                f"(G'+f: {err_G:.2e}, f'-Df: {err_f:.2e})"
            )
        return out

    def is_nonnegative(self, interval=WORKING_RANGE, samples: int = 20001,
                       tol: float = 1e-12) -> bool:
        x = np.linspace(*interval, samples)
        return bool(np.min(self.f(x)) >= -tol)

    def zero_pairs(self) -> list[tuple[float, float]]:
        """Consecutive pairs of known zeros."""
        z = list(self.zeros)
        return [(z[i], z[i + 1]) for i in range(len(z) - 1)]


def _zero():
    zero = lambda v: np.zeros_like(np.asarray(v, dtype=float))  # noqa: E731
    return Nonlinearity("zero", zero, zero, zero)


def _pn_sine():
    pi = np.pi
    return Nonlinearity(
        "pn_sine",
        f=lambda v: np.sin(pi * v) / pi,
        fprime=lambda v: np.cos(pi * v),
        G=lambda v: np.cos(pi * v) / pi**2,
        zeros=(-1.0, 1.0),
    )


def _shifted_sine():
    pi = np.pi
    return Nonlinearity(
        "shifted_sine",
        f=lambda v: (1.0 + np.sin(pi * v)) / pi,
        fprime=lambda v: np.cos(pi * v),
        G=lambda v: -v / pi + np.cos(pi * v) / pi**2,
        zeros=(-0.5, 1.5),
    )


def _cos_well():
    tau = 2.0 * np.pi
    return Nonlinearity(
        "cos_well",
        f=lambda v: 1.0 - np.cos(tau * v),
        fprime=lambda v: tau * np.sin(tau * v),
        G=lambda v: -(v - np.sin(tau * v) / tau),
        zeros=(0.0, 1.0),
    )


BUILTINS = {
    "zero": _zero,
    "pn_sine": _pn_sine,
    "shifted_sine": _shifted_sine,
    "cos_well": _cos_well,
}


def builtin(name: str) -> Nonlinearity:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise NonlinearityError(
            f"unknown nonlinearity {name!r} (builtins: {', '.join(BUILTINS)})"
        ) from None


def polynomial(coefficients, interval=WORKING_RANGE) -> Nonlinearity:
    """f(v) = sum_i c_i v^i; zeros are the real roots inside ``interval``."""
    coefs = tuple(float(c) for c in coefficients)
    if not coefs:
        raise NonlinearityError("polynomial needs at least one coefficient")
    P = Polynomial(coefs)
    dP = P.deriv()
    negG = P.integ()
    # negligible leading terms only add roots far outside the interval and
    # make the companion matrix overflow
    core = P.trim(1e-14 * float(np.max(np.abs(P.coef))))
    if core.degree() >= 1:
        roots = core.roots()
        real = np.real(roots[np.abs(np.imag(roots)) < 1e-10])
        zeros = tuple(sorted({round(float(r), 12) for r in real
                              if interval[0] <= r <= interval[1]}))
    else:
        zeros = ()
    return Nonlinearity(
        "poly(" + ",".join(repr(c) for c in coefs) + ")",
        f=lambda v: P(np.asarray(v, dtype=float)),
        fprime=lambda v: dP(np.asarray(v, dtype=float)),
        G=lambda v: -negG(np.asarray(v, dtype=float)),
        zeros=zeros,
        coefficients=coefs,
    )


def parse_nonlinearity(text: str) -> Nonlinearity:
    """A builtin name, or a comma-separated coefficient list c0,c1,..."""
    text = text.strip()
    if text in BUILTINS:
        return builtin(text)
    try:
        coefs = [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise NonlinearityError(
            f"unknown nonlinearity {text!r} (builtins: {', '.join(BUILTINS)}, "
            "or coefficients c0,c1,...)"
        ) from None
    return polynomial(coefs)

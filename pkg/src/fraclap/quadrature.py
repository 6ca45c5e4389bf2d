"""Lattice quadrature for integrals  I[v](y) = int K(|t|) (v(y+t) - v(y)) dt.

Both the singular-integral form of the fractional Laplacian and the Poisson
convolution of the extension are of this type with a radial kernel K that is
singular (or sharply peaked) at t = 0.  On the node lattice t_j = h*j the
integral is split into

* the self cell [-h/2, h/2]^n: v is replaced by its second-order expansion.
  Odd terms cancel and the quadratic term reduces, by cubic symmetry, to
  Lap v(y) * int_self |t|^2 K / (2n);
* lattice cells j != 0 inside the box |j|_inf <= J: weight w_j = int_cell K
  (Gauss-Legendre on the central period, midpoint beyond), applied to the
  difference v(y+t_j) - v(y).  On the central period the mismatch between the
  exact quadratic moment and sum w_j |t_j|^2 is moved onto the Laplacian
  coefficient so the rule stays exact for quadratics;
* the exterior of the box, where v is replaced by its mean (torus) or by the
  clamped far-field constants (line): weight = exterior kernel mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = ["RadialKernel", "LatticeRule", "lattice_rule", "singular_kernel", "poisson_kernel"]

_GAUSS_POINTS = 8


@dataclass(frozen=True)
class RadialKernel:
    """A radial kernel on R^n with the two analytic pieces the rule needs.

    density(r) evaluates K; self_moment(h) = int_{[-h/2,h/2]^n} |t|^2 K;
    tail_mass(R) = int_{outside [-R,R]^n} K.
    """

    n: int
    density: Callable[[np.ndarray], np.ndarray]
    self_moment: Callable[[float], float]
    tail_mass: Callable[[float], float]
    label: str = ""


def _square_polar(fn_of_rho, n):
    """Integrate over the square [-1,1]^n given the radial integral to rho.

    ``fn_of_rho(rho)`` must return the radial integral from 0 (or to infinity)
    at the square boundary radius rho = 1/cos(theta).
    """
    if n == 1:
        return 2.0 * fn_of_rho(1.0)
    val, _ = integrate.quad(
        lambda th: fn_of_rho(1.0 / np.cos(th)), 0.0, np.pi / 4, epsabs=0, epsrel=1e-13
    )
    return 8.0 * val


def singular_kernel(n: int, s: float) -> RadialKernel:
    """K(r) = r^-(n+2s), unnormalized."""
    p = n + 2.0 * s

    def density(r):
        return r ** (-p)

    # radial integrals:  int_0^rho r^2 r^-p r^(n-1) dr = rho^(2-2s)/(2-2s)
    #                    int_rho^inf r^-p r^(n-1) dr = rho^(-2s)/(2s)
    def self_moment(h):
        half = 0.5 * h
        return _square_polar(lambda rho: (half * rho) ** (2 - 2 * s) / (2 - 2 * s), n)

    def tail_mass(R):
        return _square_polar(lambda rho: (R * rho) ** (-2 * s) / (2 * s), n)

    return RadialKernel(n, density, self_moment, tail_mass, label=f"singular(s={s})")


def poisson_kernel(n: int, alpha: float, x: float, c: float) -> RadialKernel:
    """P(x, r) = c x^(1-alpha) / (x^2 + r^2)^((n+1-alpha)/2) at fixed height x."""
    p = 0.5 * (n + 1 - alpha)
    pref = c * x ** (1.0 - alpha)
    x2 = x * x

    def density(r):
        return pref * (x2 + r * r) ** (-p)

    if n == 1:

        def self_moment(h):
            val, _ = integrate.quad(
                lambda t: t * t * (x2 + t * t) ** (-p), 0.0, 0.5 * h,
                points=[min(x, 0.25 * h)], epsabs=0, epsrel=1e-12, limit=200,
            )
            return 2.0 * pref * val

        def tail_mass(R):
            val, _ = integrate.quad(
                lambda t: (x2 + t * t) ** (-p), R, np.inf, epsabs=0, epsrel=1e-12, limit=200
            )
            return 2.0 * pref * val

    else:
        a = 0.5 * (1.0 + alpha)  # 2 - p
        b = 0.5 * (alpha - 1.0)  # 1 - p

        def radial_moment(rho):
            # int_0^rho r^3 (x^2+r^2)^-p dr  via w = x^2 + r^2
            def prim(w):
                return 0.5 * (w**a / a - x2 * w**b / b)

            return prim(x2 + rho * rho) - prim(x2)

        def self_moment(h):
            half = 0.5 * h
            return pref * _square_polar(lambda rho: radial_moment(half * rho), 2)

        def tail_mass(R):
            # int_rho^inf r (x^2+r^2)^-p dr = (x^2+rho^2)^(-(1-alpha)/2)/(1-alpha)
            return pref * _square_polar(
                lambda rho: (x2 + (R * rho) ** 2) ** (-0.5 * (1 - alpha)) / (1 - alpha), 2
            )

    return RadialKernel(n, density, self_moment, tail_mass, label=f"poisson(x={x})")


@lru_cache(maxsize=8)
def _gauss(G):
    g, w = np.polynomial.legendre.leggauss(G)
    return 0.5 * g, 0.5 * w


@dataclass(frozen=True)
class LatticeRule:
    """Weights of the lattice rule on offsets |j|_inf <= J (centre excluded)."""

    n: int
    h: float
    J: int
    weights: np.ndarray  # shape (2J+1,)*n, zero at the centre
    lap_coef: float      # multiplies the discrete Laplacian of v
    tail: float          # kernel mass outside the box


def lattice_rule(kernel: RadialKernel, h: float, J: int, J_near: int) -> LatticeRule:
    n = kernel.n
    J_near = min(J_near, J)
    gx, gw = _gauss(_GAUSS_POINTS)
    offs = np.arange(-J, J + 1)

    # midpoint weights everywhere
    if n == 1:
        r = np.abs(offs) * h
    else:
        a, b = np.meshgrid(offs, offs, indexing="ij")
        r = np.hypot(a, b) * h
    with np.errstate(divide="ignore"):
        weights = kernel.density(r) * h**n
    centre = (J,) * n
    weights[centre] = 0.0

    # Gauss cell integrals and quadratic moments on the near box
    near = np.arange(-J_near, J_near + 1)
    pts = (near[:, None] + gx[None, :]).ravel() * h  # (2Jn+1)*G
    wts = np.tile(gw, near.size) * h
    if n == 1:
        rr = np.abs(pts)
        mass = (kernel.density(rr) * wts).reshape(near.size, -1).sum(axis=1)
        mom = (kernel.density(rr) * rr**2 * wts).reshape(near.size, -1).sum(axis=1)
        rc = np.abs(near) * h
    else:
        P1, P2 = np.meshgrid(pts, pts, indexing="ij")
        W2 = np.outer(wts, wts)
        rr2 = P1**2 + P2**2
        K = kernel.density(np.sqrt(rr2)) * W2
        shp = (near.size, _GAUSS_POINTS, near.size, _GAUSS_POINTS)
        mass = K.reshape(shp).sum(axis=(1, 3))
        mom = (K * rr2).reshape(shp).sum(axis=(1, 3))
        a, b = np.meshgrid(near, near, indexing="ij")
        rc = np.hypot(a, b) * h
    nc = (J_near,) * n
    mass[nc] = 0.0
    mom[nc] = 0.0
    sl = tuple(slice(J - J_near, J + J_near + 1) for _ in range(n))
    weights[sl] = mass

    mismatch = float(np.sum(mom - rc**2 * mass))
    lap_coef = (kernel.self_moment(h) + mismatch) / (2.0 * n)
    tail = kernel.tail_mass((J + 0.5) * h)
    return LatticeRule(n=n, h=h, J=J, weights=weights, lap_coef=lap_coef, tail=tail)


def fold_to_torus(rule: LatticeRule, N: int) -> np.ndarray:
    """Sum lattice weights over periodic images: Omega_r, r in [0, N)^n."""
    idx = np.arange(-rule.J, rule.J + 1) % N
    if rule.n == 1:
        return np.bincount(idx, weights=rule.weights, minlength=N)
    flat = (idx[:, None] * N + idx[None, :]).ravel()
    return np.bincount(flat, weights=rule.weights.ravel(), minlength=N * N).reshape(N, N)


def torus_symbol(rule: LatticeRule, N: int) -> np.ndarray:
    """Fourier symbol of v -> I[v] on the N^n torus (FFT ordering).

    The exterior mass multiplies (mean(v) - v), i.e. -tail on every mode but 0.
    """
    omega = fold_to_torus(rule, N)
    total = omega.sum()
    sym = np.real(np.fft.fftn(omega)) - total
    q = 2.0 * np.pi * np.fft.fftfreq(N)
    lap = (2.0 * np.cos(q) - 2.0) / rule.h**2
    if rule.n == 1:
        sym = sym + rule.lap_coef * lap
    else:
        sym = sym + rule.lap_coef * (lap[:, None] + lap[None, :])
    tail = np.full_like(sym, -rule.tail)
    tail[(0,) * rule.n] = 0.0
    return sym + tail


def line_operator(rule: LatticeRule, N: int, a_minus: float, a_plus: float):
    """Affine form I[v] = A v + b on a truncated line with clamped exterior.

    Requires J >= N so that every node sees the whole window inside the box.
    """
    if rule.n != 1 or rule.J < N:
        raise ValueError("line operator needs a 1D rule with J >= N")
    from scipy.linalg import toeplitz

    J = rule.J
    w = rule.weights
    col = w[J : J + N]  # offsets 0..N-1
    A = toeplitz(col)
    lap = rule.lap_coef / rule.h**2
    i = np.arange(N)
    # total weight leaving each node: all lattice weights + Laplacian + tail
    A[i, i] = -(w.sum() + 2.0 * lap + rule.tail)
    A[i[:-1], i[:-1] + 1] += lap
    A[i[1:], i[1:] - 1] += lap
    # exterior nodes: offsets reaching left of node 0 or right of node N-1
    cw = np.concatenate([[0.0], np.cumsum(w[J + 1 :])])  # cw[m] = sum_{k=1..m} w_{+k}
    total_side = cw[-1]
    right_inside = cw[N - 1 - i]  # offsets +1..N-1-i are inside
    left_inside = cw[i]
    b = a_plus * (total_side - right_inside) + a_minus * (total_side - left_inside)
    b[-1] += lap * a_plus
    b[0] += lap * a_minus
    b += 0.5 * rule.tail * (a_minus + a_plus)
    return A, b

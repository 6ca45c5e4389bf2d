"""Second variation of the boundary-reaction problem and related diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, interpolate
from scipy.sparse import linalg as spla

from .extension import (
    ExtensionSolveError,
    _diag_scale,
    _torus_operator,
    apply_extension,
    boundary_operator,
)
from .grid import (
    ExtensionField,
    FracParams,
    GridError,
    GridFunction,
    layer_weights,
    weighted_energy,
)
from .nonlinearity import Nonlinearity
from .ops import half_power_energy, spectral_multiplier

__all__ = [
    "StabilityReport",
    "stability_form_fractional",
    "stability_form_extension",
    "lambda_min",
    "stability_tolerance",
    "sign_classification",
    "trace_derivative",
    "cutoff",
    "cutoff_derivative",
    "CUTOFF_SLOPE",
    "CaccioppoliRecord",
    "caccioppoli_check",
]


@dataclass(frozen=True)
class StabilityReport:
    lambda_min: float
    eigenfunction: GridFunction
    form_value: float
    method: str
    residual: float
    tolerance: float

    @property
    def stable(self) -> bool:
        return self.lambda_min >= -self.tolerance

    def record(self) -> dict:
        return {
            "lambda_min": self.lambda_min,
            "form_value": self.form_value,
            "method": self.method,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "stable": self.stable,
        }


def _check_same_grid(a: GridFunction, b: GridFunction):
    if a.grid != b.grid:
        raise GridError("grid functions live on different grids")


def stability_form_fractional(
    v: GridFunction, psi: GridFunction, nl: Nonlinearity, params: FracParams
) -> float:
    """(1/d) int |(-Lap)^(s/2) psi|^2 - int f'(v) psi^2  on the torus."""
    _check_same_grid(v, psi)
    d = params.require("d_ns")
    frac = half_power_energy(psi, params.s) / d
    return float(frac - np.sum(nl.fprime(v.values) * psi.values**2) * v.grid.cell_volume)


def stability_form_extension(
    u: ExtensionField, phi: ExtensionField, nl: Nonlinearity, params: FracParams
) -> float:
    """int x^alpha |grad phi|^2 - int f'(u(0,.)) phi(0,.)^2."""
    if u.egrid != phi.egrid:
        raise GridError("fields live on different extension grids")
    bnd = u.egrid.boundary
    energy = weighted_energy(phi, params.alpha)
    bterm = np.sum(nl.fprime(u.values[0]) * phi.values[0] ** 2) * bnd.cell_volume
    return float(energy - bterm)


def stability_tolerance(fp: np.ndarray) -> float:
    """Zero-mode slack 1e-3 * (1 + max|f'(v)|)."""
    return 1e-3 * (1.0 + float(np.max(np.abs(fp))))


def _normalize(vec, h_n):
    vec = vec / np.sqrt(np.sum(vec**2) * h_n)
    # deterministic sign: largest-magnitude entry positive
    if vec[np.argmax(np.abs(vec))] < 0:
        vec = -vec
    return vec


def _dense_min(Lmat):
    w, V = np.linalg.eigh(Lmat)
    return float(w[0]), V[:, 0]


def _iterative_min(v: GridFunction, fp: np.ndarray, params: FracParams, tol=1e-12):
    """Shift-invert Lanczos with conjugate-gradient inner solves (torus only).

    The shift sigma = min(-fp) - 1 lies below the spectrum, so L - sigma is
    positive definite; the inner solves are preconditioned by the spectral
    part plus the mean potential.
    """
    grid = v.grid
    d = params.require("d_ns")
    mult = spectral_multiplier(grid, params.s).values / d
    pot = -fp.ravel()
    sigma = float(np.min(pot)) - 1.0
    size = grid.size
    shape = grid.shape

    def L(x):
        x = np.asarray(x).reshape(shape)
        out = np.real(np.fft.ifftn(mult * np.fft.fftn(x))) + pot.reshape(shape) * x
        return out.ravel()

    Lop = spla.LinearOperator((size, size), matvec=L, dtype=float)
    shifted = spla.LinearOperator((size, size), matvec=lambda x: L(x) - sigma * x, dtype=float)
    precond_sym = mult + float(np.mean(pot)) - sigma

    def precond(r):
        r = np.asarray(r).reshape(shape)
        return np.real(np.fft.ifftn(np.fft.fftn(r) / precond_sym)).ravel()

    Pop = spla.LinearOperator((size, size), matvec=precond, dtype=float)

    def inv(b):
        x, info = spla.cg(shifted, b, rtol=tol, atol=0.0, M=Pop, maxiter=10 * size)
        if info != 0:
            raise ExtensionSolveError("inner conjugate-gradient solve did not converge")
        return x

    OPinv = spla.LinearOperator((size, size), matvec=inv, dtype=float)
    x0 = np.ones(size)
    w, V = spla.eigsh(Lop, k=1, sigma=sigma, which="LM", OPinv=OPinv, v0=x0, tol=1e-12)
    return float(w[0]), V[:, 0], Lop


def lambda_min(
    v: GridFunction,
    nl: Nonlinearity,
    params: FracParams,
    method: str = "auto",
) -> StabilityReport:
    """Smallest eigenvalue of L = (1/d)(-Lap)^s - f'(v).

    Torus: spectral operator, dense for n = 1 with N <= 2048, otherwise
    shift-invert iteration (falling back to dense when that fails and the
    problem is small enough).  Line: the singular-integral operator on the
    free nodes used by the layer solver, always dense.
    """
    grid = v.grid
    h_n = grid.cell_volume
    fp_all = nl.fprime(v.values).ravel()
    tol_stable = stability_tolerance(fp_all)
    if grid.periodic:
        free = np.ones(grid.size, dtype=bool)
        dense_ok = grid.n == 1 and grid.N <= 2048
        if method == "auto":
            method = "dense" if dense_ok else "iterative"
        Lmat = None
        if method == "iterative":
            try:
                lam, vec, Lop = _iterative_min(v, fp_all, params)
            except (ExtensionSolveError, spla.ArpackError, spla.ArpackNoConvergence):
                if grid.size > 8192:
                    raise
                method = "dense"
        if method == "dense":
            d = params.require("d_ns")
            Lmat = _torus_operator(grid, params.s) / d - np.diag(fp_all)
    else:
        A, _, free = boundary_operator(grid, params, v.far_field)
        Lmat = A - np.diag(fp_all[free])
        method = "dense"
    if Lmat is not None:
        lam, vec = _dense_min(Lmat)
        Lop = Lmat
    vec_n = _normalize(vec, h_n)
    Lvec = Lop @ vec_n
    res = float(np.sqrt(np.sum((Lvec - lam * vec_n) ** 2) * h_n))
    form = float(np.sum(vec_n * Lvec) * h_n)
    full = np.zeros(grid.size)
    full[free] = vec_n
    eig = GridFunction(grid, full.reshape(grid.shape),
                       None if grid.periodic else (0.0, 0.0))
    return StabilityReport(lam, eig, form, method, res, tol_stable)


# --------------------------------------------------------------------------
# trichotomy


def trace_derivative(v: GridFunction) -> GridFunction:
    """d v / d y: spectral on a torus (n = 1), second-order differences on a line."""
    grid = v.grid
    if grid.n != 1:
        raise GridError("the trichotomy is a one-dimensional statement")
    if grid.periodic:
        (xi,) = grid.wavenumbers()
        xi = xi.copy()
        xi[grid.N // 2] = 0.0
        dv = np.real(np.fft.ifft(1j * xi * np.fft.fft(v.values)))
    else:
        dv = np.gradient(v.values, grid.h, edge_order=2)
    return v.with_values(dv)


def sign_classification(vy: GridFunction, tol: float = 1e-6) -> str:
    """positive / negative / zero / mixed classification of a derivative."""
    if vy.grid.n != 1:
        raise GridError("the trichotomy is a one-dimensional statement")
    vals = vy.values
    if np.max(np.abs(vals)) <= tol:
        return "zero"
    if np.min(vals) > tol:
        return "positive"
    if np.max(vals) < -tol:
        return "negative"
    return "mixed"


# --------------------------------------------------------------------------
# cutoff and the Caccioppoli chain


def _bump(w):
    w = np.asarray(w, dtype=float)
    out = np.zeros_like(w)
    inside = np.abs(w) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - w[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_table():
    """Cubic Hermite interpolant of int_{-1}^{w} bump from adaptive quadrature."""
    w = np.linspace(-1.0, 1.0, 2001)
    pieces = [integrate.quad(_bump, a, b, epsabs=1e-15, epsrel=1e-13)[0]
              for a, b in zip(w[:-1], w[1:])]
    values = np.concatenate([[0.0], np.cumsum(pieces)])
    return interpolate.CubicHermiteSpline(w, values, _bump(w))


def _bump_integral(w):
    """int_{-1}^{w} bump."""
    w = np.clip(np.asarray(w, dtype=float), -1.0, 1.0)
    return _bump_table()(w)


_BUMP_MASS = float(_bump_integral(np.array(1.0)))
CUTOFF_SLOPE = 2.0 / _BUMP_MASS  # sup |zeta'|


def cutoff(t):
    """Smooth step: 1 on [0,1], 0 on [2,inf), built from exp(1 - 1/(1-w^2))."""
    t = np.asarray(t, dtype=float)
    return 1.0 - _bump_integral(2.0 * t - 3.0) / _BUMP_MASS


def cutoff_derivative(t):
    t = np.asarray(t, dtype=float)
    return -2.0 * _bump(2.0 * t - 3.0) / _BUMP_MASS


@dataclass(frozen=True)
class CaccioppoliRecord:
    """Both sides of the cutoff energy inequality at radius R.

    rhs uses the exact cutoff gradient; rhs_density bounds |grad zeta_R| by
    CUTOFF_SLOPE / R and so involves R^-2 int_{B_2R} x^alpha (phi sigma)^2.
    boundary_term is int zeta^2 sigma (conormal flux of sigma); it vanishes
    when sigma has zero flux at x = 0.
    """

    R: float
    lhs: float
    rhs: float
    rhs_density: float
    r2_density: float
    annulus: float
    boundary_term: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else (0.0 if self.lhs == 0 else np.inf)

    def record(self) -> dict:
        return {k: getattr(self, k) for k in
                ("R", "lhs", "rhs", "rhs_density", "r2_density", "annulus", "boundary_term")}


def _radius(egrid):
    bnd = egrid.boundary
    x = egrid.x.reshape((-1,) + (1,) * bnd.n)
    r2 = x**2
    for c in bnd.mesh():
        r2 = r2 + c[None] ** 2
    return np.sqrt(r2)


def caccioppoli_check(
    sigma: ExtensionField,
    phi: ExtensionField,
    params: FracParams,
    R: float,
    residual_tol: float = 1e-8,
) -> CaccioppoliRecord:
    """Evaluate lhs = int zeta_R^2 phi^2 x^alpha |grad sigma|^2 and its bound.

    sigma must solve div(x^alpha phi^2 grad sigma) = 0 at every node of the
    support of zeta_R away from x = 0; the check is relative to the largest
    diagonal entry of the weighted operator.
    """
    egrid = sigma.egrid
    if phi.egrid != egrid:
        raise GridError("sigma and phi live on different extension grids")
    bnd = egrid.boundary
    alpha = params.alpha
    if 2.0 * R > min(egrid.X, 0.5 * bnd.L):
        raise GridError("the ball of radius 2R does not fit in the grid")
    coef = phi.values**2
    r = _radius(egrid)
    support = r < 2.0 * R

    Au = apply_extension(sigma, alpha, coef)
    interior = support.copy()
    interior[0] = False
    scale = _diag_scale(egrid, alpha, coef) * max(float(np.max(np.abs(sigma.values))), 1e-300)
    res = float(np.max(np.abs(Au[interior]))) / scale if interior.any() else 0.0
    if res > residual_tol:
        raise ExtensionSolveError(
            f"sigma fails the interior residual check ({res:.3e} > {residual_tol:g})"
        )

    zeta = cutoff(r / R)
    dzeta = np.abs(cutoff_derivative(r / R)) / R
    _, _, m = layer_weights(egrid, alpha)
    mw = m.reshape((-1,) + (1,) * bnd.n) * bnd.cell_volume

    lhs = weighted_energy(sigma, alpha, coef * zeta**2)
    ring = (dzeta > 0).astype(float)
    annulus = weighted_energy(sigma, alpha, coef * zeta**2 * ring)
    grad_term = float(np.sum(mw * coef * sigma.values**2 * dzeta**2))
    big = float(np.sum(mw * coef * sigma.values**2 * support))
    small = float(np.sum(mw * coef * sigma.values**2 * (r < R)))
    rhs = 2.0 * np.sqrt(annulus) * np.sqrt(grad_term)
    rhs_density = 2.0 * np.sqrt(annulus) * CUTOFF_SLOPE * np.sqrt(big / R**2)
    bterm = float(np.sum(zeta[0] ** 2 * sigma.values[0] * Au[0]) * bnd.cell_volume)
    return CaccioppoliRecord(
        R=float(R), lhs=lhs, rhs=float(rhs), rhs_density=float(rhs_density),
        r2_density=small / R**2, annulus=annulus, boundary_term=bterm,
    )

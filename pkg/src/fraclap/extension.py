"""Weighted extension solves, Neumann traces and the boundary-reaction problem.

The discrete energy of :func:`fraclap.grid.weighted_energy` is a weighted
graph Laplacian on the tensor grid: x-edges between layers k and k+1 carry
W_k/dx_k^2, y-edges inside layer k carry m_k/h^2 (times an optional node
coefficient averaged to the edge).  Its Hessian A (scaled by the cell volume)
is assembled here.  The top cap x = X is left free, which is the zero-flux
condition of the variational problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .grid import (
    ExtensionField,
    ExtensionGrid,
    FracParams,
    GridError,
    GridFunction,
    layer_weights,
    weighted_energy,
)

__all__ = [
    "ExtensionSolveError",
    "SolveReport",
    "assemble_extension",
    "apply_extension",
    "solve_extension_dirichlet",
    "solve_conormal_problem",
    "interior_residual",
    "neumann_trace",
    "dirichlet_to_neumann",
    "weak_residual",
    "solve_boundary_reaction",
    "boundary_operator",
    "pinned_values",
    "relax_boundary_reaction",
]


class ExtensionSolveError(RuntimeError):
    pass


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    final_residual: float
    solution: object
    history: list = field(default_factory=list)
    message: str = ""
    method: str = ""

    def record(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "history": list(self.history),
            "message": self.message,
            "method": self.method,
        }


# --------------------------------------------------------------------------
# assembly


def _check_match(v: GridFunction, egrid: ExtensionGrid):
    if egrid.boundary != v.grid:
        raise GridError("extension grid does not match the boundary grid")


def _edges(egrid: ExtensionGrid, alpha: float, coef=None):
    """List of (p, q, w) index/weight arrays of the weighted graph."""
    bnd = egrid.boundary
    W, dx, m = layer_weights(egrid, alpha)
    shape = egrid.shape
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    ext = (1,) * bnd.n
    out = []

    wx = np.broadcast_to((W / dx**2).reshape((-1,) + ext), (egrid.M,) + bnd.shape)
    if coef is not None:
        wx = wx * 0.5 * (coef[:-1] + coef[1:])
    out.append((idx[:-1].ravel(), idx[1:].ravel(), np.ravel(wx)))

    for ax in range(1, bnd.n + 1):
        if bnd.periodic:
            nb = np.roll(idx, -1, axis=ax)
            p, q = idx, nb
            mm = np.broadcast_to(m.reshape((-1,) + ext), shape)
            c = None if coef is None else 0.5 * (coef + np.roll(coef, -1, axis=ax))
        else:
            lo = [slice(None)] * len(shape)
            hi = [slice(None)] * len(shape)
            lo[ax] = slice(None, -1)
            hi[ax] = slice(1, None)
            p, q = idx[tuple(lo)], idx[tuple(hi)]
            mm = np.broadcast_to(m.reshape((-1,) + ext), p.shape)
            c = None if coef is None else 0.5 * (coef[tuple(lo)] + coef[tuple(hi)])
        w = mm / bnd.h**2
        if c is not None:
            w = w * c
        out.append((p.ravel(), q.ravel(), np.ravel(w)))
    return out


def assemble_extension(egrid: ExtensionGrid, alpha: float, coef=None) -> sparse.csr_matrix:
    """Sparse matrix A with  h^n u^T A u = weighted_energy(u).

    Rows are ordered layer-major (k slowest).  ``coef`` is an optional positive
    node coefficient of shape ``egrid.shape``.
    """
    size = int(np.prod(egrid.shape))
    rows, cols, vals = [], [], []
    for p, q, w in _edges(egrid, alpha, coef):
        rows += [p, q, p, q]
        cols += [p, q, q, p]
        vals += [w, w, -w, -w]
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )
    return A.tocsr()


def apply_extension(u: ExtensionField, alpha: float, coef=None) -> np.ndarray:
    """A u reshaped to the grid, computed edge by edge without a matrix."""
    flat = u.values.ravel()
    out = np.zeros_like(flat)
    for p, q, w in _edges(u.egrid, alpha, coef):
        d = w * (flat[p] - flat[q])
        np.add.at(out, p, d)
        np.add.at(out, q, -d)
    return out.reshape(u.egrid.shape)


def interior_residual(u: ExtensionField, alpha: float, coef=None, top_fixed=False) -> float:
    """Relative residual of the discrete weighted Laplace equation.

    max |(A u)_k| over interior layers, divided by max|diag A| * max|u|.
    """
    Au = apply_extension(u, alpha, coef)
    rows = Au[1:-1] if top_fixed else Au[1:]
    diag = _diag_scale(u.egrid, alpha, coef)
    scale = diag * max(float(np.max(np.abs(u.values))), 1e-300)
    return float(np.max(np.abs(rows)) / scale) if rows.size else 0.0


def _diag_scale(egrid, alpha, coef):
    d = np.zeros(int(np.prod(egrid.shape)))
    for p, q, w in _edges(egrid, alpha, coef):
        np.add.at(d, p, w)
        np.add.at(d, q, w)
    return float(np.max(d))


# --------------------------------------------------------------------------
# linear solves


def _mode_eigenvalues(bnd):
    """Eigenvalues of the periodic second-difference operator -D^2 per FFT mode."""
    q = 2.0 * np.pi * np.fft.fftfreq(bnd.N)
    lam = (2.0 - 2.0 * np.cos(q)) / bnd.h**2
    if bnd.n == 1:
        return lam
    return lam[:, None] + lam[None, :]


def _thomas(lower, diag, upper, rhs):
    """Tridiagonal solve along axis 0, vectorized over the trailing axes."""
    n = diag.shape[0]
    c = np.empty_like(diag)
    d = np.empty_like(rhs)
    c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - lower[i - 1] * c[i - 1]
        if i < n - 1:
            c[i] = upper[i] / den
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / den
    x = np.empty_like(rhs)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def _solve_modes(egrid, alpha, bottom_hat):
    """Exact solve per y-Fourier mode on a torus with constant coefficient.

    Each mode gives a tridiagonal system in x for layers 1..M (zero flux at
    the top).  Returns the layer transforms.
    """
    bnd = egrid.boundary
    W, dx, m = layer_weights(egrid, alpha)
    ext = (1,) * bnd.n
    a = (W / dx**2).reshape((-1,) + ext)
    diag = np.zeros((egrid.M + 1,) + bnd.shape)
    diag[:-1] += a
    diag[1:] += a
    diag = diag + m.reshape((-1,) + ext) * _mode_eigenvalues(bnd)
    off = -np.broadcast_to(a, (egrid.M,) + bnd.shape)
    rhs = np.zeros((egrid.M,) + bnd.shape, dtype=complex)
    rhs[0] = -off[0] * bottom_hat
    out = np.empty((egrid.M + 1,) + bnd.shape, dtype=complex)
    out[0] = bottom_hat
    out[1:] = _thomas(off[1:], diag[1:], off[1:], rhs)
    return out


def _ifft_layers(vals, n):
    axes = tuple(range(1, n + 1))
    return np.real(np.fft.ifftn(vals, axes=axes))


def _sparse_dirichlet(egrid, alpha, trace, coef=None, top=None, method="direct", tol=1e-12,
                      maxiter=None):
    A = assemble_extension(egrid, alpha, coef)
    nb = egrid.boundary.size
    size = A.shape[0]
    fixed = np.zeros(size, dtype=bool)
    u = np.zeros(size)
    if trace is not None:
        fixed[:nb] = True
        u[:nb] = trace.ravel()
    if top is not None:
        fixed[-nb:] = True
        u[-nb:] = top.ravel()
    free = ~fixed
    Aff = A[free][:, free].tocsc()
    rhs = -(A[free][:, fixed] @ u[fixed])
    sol, info = _linear_solve(Aff, rhs, method, tol, maxiter)
    u[free] = sol
    return u.reshape(egrid.shape), info


def _linear_solve(A, rhs, method, tol, maxiter):
    if method == "pcg":
        d = A.diagonal()
        pre = spla.LinearOperator(A.shape, matvec=lambda r: r / d)
        x, code = spla.cg(A, rhs, rtol=tol, atol=0.0, M=pre,
                          maxiter=maxiter or 20 * A.shape[0])
        if code == 0:
            return x, "pcg"
        if A.shape[0] > 400_000:
            raise ExtensionSolveError(f"conjugate gradient did not converge (code {code})")
    return spla.splu(A.tocsc()).solve(rhs), "direct"


def solve_extension_dirichlet(
    v: GridFunction,
    params: FracParams,
    egrid: ExtensionGrid,
    *,
    coef: np.ndarray | None = None,
    method: str = "auto",
    tol: float = 1e-12,
) -> ExtensionField:
    """Minimize the discrete weighted Dirichlet energy with trace v.

    ``method``: "modes" (exact per-Fourier-mode tridiagonal solves; torus with
    constant coefficient), "direct" (sparse LU), "pcg" (diagonally
    preconditioned conjugate gradient, falling back to LU).  "auto" picks
    "modes" when applicable and "direct" otherwise.
    """
    _check_match(v, egrid)
    alpha = params.alpha
    bnd = egrid.boundary
    if method == "auto":
        method = "modes" if (bnd.periodic and coef is None) else "direct"
    if method == "modes":
        if not bnd.periodic or coef is not None:
            raise GridError("mode solver needs a torus and constant coefficient")
        hat = _solve_modes(egrid, alpha, np.fft.fftn(v.values))
        vals = _ifft_layers(hat, bnd.n)
        vals[0] = v.values
    elif method in ("direct", "pcg"):
        if not bnd.periodic and v.far_field is None:
            raise GridError("line grid needs far-field values")
        vals, _ = _sparse_dirichlet(egrid, alpha, v.values, coef, method=method, tol=tol)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ExtensionField(egrid, vals, v.far_field)


def solve_conormal_problem(
    flux: GridFunction | None,
    params: FracParams,
    egrid: ExtensionGrid,
    top: GridFunction,
    *,
    coef: np.ndarray | None = None,
) -> ExtensionField:
    """Solve div(x^alpha coef grad u) = 0 with prescribed conormal flux at x = 0
    (zero if ``flux`` is None) and Dirichlet data ``top`` at x = X."""
    alpha = params.alpha
    bnd = egrid.boundary
    A = assemble_extension(egrid, alpha, coef)
    nb = bnd.size
    size = A.shape[0]
    fixed = np.zeros(size, dtype=bool)
    fixed[-nb:] = True
    u = np.zeros(size)
    u[-nb:] = top.values.ravel()
    free = ~fixed
    rhs = -(A[free][:, fixed] @ u[fixed])
    if flux is not None:
        rhs[:nb] += flux.values.ravel()
    u[free] = spla.splu(A[free][:, free].tocsc()).solve(rhs)
    return ExtensionField(egrid, u.reshape(egrid.shape), top.far_field)


# --------------------------------------------------------------------------
# traces


def neumann_trace(
    u: ExtensionField,
    params: FracParams,
    *,
    method: str = "variational",
    coef: np.ndarray | None = None,
    residual_tol: float = 1e-6,
) -> GridFunction:
    """Boundary flux -x^alpha u_x at x = 0.

    "variational" (default) returns the discrete flux of the energy, i.e. row 0
    of A u, so that the discrete Green identity  sum phi^T A u = <flux, phi_0>
    holds exactly.  "fit" returns the one-layer expansion: with
    u(x_1) - u(0) = c x_1^(1-alpha), the flux is -(1-alpha) c.

    Fields whose interior residual exceeds ``residual_tol`` are rejected.
    """
    alpha = params.alpha
    res = interior_residual(u, alpha, coef)
    if res > residual_tol:
        raise ExtensionSolveError(
            f"field fails the interior residual check ({res:.3e} > {residual_tol:g})"
        )
    if method == "variational":
        flux = apply_extension(u, alpha, coef)[0]
    elif method == "fit":
        x1 = u.egrid.x[1]
        c = (u.values[1] - u.values[0]) / x1 ** (1.0 - alpha)
        flux = -(1.0 - alpha) * c
    else:
        raise ValueError(f"unknown method {method!r}")
    return GridFunction(u.egrid.boundary, flux, u.far_field)


def dirichlet_to_neumann(
    v: GridFunction, params: FracParams, egrid: ExtensionGrid, **kwargs
) -> GridFunction:
    """Gamma_alpha(v): flux of the weighted extension of v."""
    u = solve_extension_dirichlet(v, params, egrid, **kwargs)
    return neumann_trace(u, params)


# --------------------------------------------------------------------------
# weak residual


def _bump(t):
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    out[inside] = (1.0 - t[inside] ** 2) ** 2
    return out


def _trial_fields(egrid: ExtensionGrid, trials: int, seed: int):
    rng = np.random.default_rng(seed)
    bnd = egrid.boundary
    x = egrid.x
    X = egrid.X
    coords = bnd.mesh()
    for _ in range(trials):
        rx = rng.uniform(0.05, 0.5) * X
        xc = 0.0 if rng.random() < 0.5 else rng.uniform(0.0, X - rx)
        phi = _bump((x - xc) / rx).reshape((-1,) + (1,) * bnd.n)
        prof = 1.0
        for c in coords:
            ry = rng.uniform(max(3.0 * bnd.h, 0.02 * bnd.L), 0.25 * bnd.L)
            lo = -0.5 * bnd.L + ry
            yc = rng.uniform(lo, -lo)
            d = c - yc
            if bnd.periodic:
                d = (d + 0.5 * bnd.L) % bnd.L - 0.5 * bnd.L
            prof = prof * _bump(d / ry)
        yield phi * prof


def weak_residual(
    u: ExtensionField,
    rhs: GridFunction | None,
    params: FracParams,
    trials: int = 20,
    seed: int = 0,
    coef: np.ndarray | None = None,
) -> float:
    """max over random bump fields phi of |a(u,phi) - <rhs,phi_0>| / ||phi||.

    a is the discrete weighted form; ||phi||^2 = energy(phi) + int x^alpha phi^2.
    With ``rhs=None`` the bumps vanish on x = 0 and only the interior
    equation is tested.
    """
    alpha = params.alpha
    egrid = u.egrid
    bnd = egrid.boundary
    Au = apply_extension(u, alpha, coef)
    _, _, m = layer_weights(egrid, alpha)
    vol = bnd.cell_volume
    worst = 0.0
    for phi in _trial_fields(egrid, trials, seed):
        if rhs is None:
            phi[0] = 0.0
        form = vol * float(np.sum(Au * phi))
        load = 0.0 if rhs is None else vol * float(np.sum(rhs.values * phi[0]))
        pf = ExtensionField(egrid, phi)
        mass = vol * float(np.sum(m.reshape((-1,) + (1,) * bnd.n) * phi**2))
        norm = np.sqrt(weighted_energy(pf, alpha, coef) + mass)
        if norm > 0:
            worst = max(worst, abs(form - load) / norm)
    return worst


# --------------------------------------------------------------------------
# boundary reaction


def _torus_operator(grid, s):
    """Dense matrix of the Fourier multiplier |xi|^(2s) on the torus."""
    from .ops import spectral_multiplier

    mult = spectral_multiplier(grid, s).values
    size = grid.size
    eye = np.eye(size).reshape((size,) + grid.shape)
    axes = tuple(range(1, grid.n + 1))
    cols = np.real(np.fft.ifftn(mult * np.fft.fftn(eye, axes=axes), axes=axes))
    A = cols.reshape(size, size).T
    return 0.5 * (A + A.T)


def boundary_operator(grid, params: FracParams, far_field=None):
    """Affine form of (1/d)(-Lap)^s restricted to the free nodes.

    Returns (A, b, free): on the free nodes, (1/d)(-Lap)^s v = A v[free] + b.
    Torus: spectral multiplier, every node free.  Line: singular integral with
    the exterior clamped to ``far_field``; node 0 (y = -L/2) is pinned to
    a_minus, so together with the first exterior node y = +L/2 (clamped to
    a_plus) the free nodes are symmetric about y = 0.
    """
    from .ops import singular_line_operator

    d = params.require("d_ns")
    if grid.periodic:
        A = _torus_operator(grid, params.s) / d
        return A, np.zeros(grid.size), np.ones(grid.size, dtype=bool)
    if far_field is None:
        raise GridError("line mode needs far-field values a_minus, a_plus")
    C = params.require("C_ns")
    A, b = singular_line_operator(grid, params.s, far_field, C)
    free = np.ones(grid.size, dtype=bool)
    free[0] = False
    b = (b[free] + A[free][:, 0] * far_field[0]) / d
    return A[free][:, free] / d, b, free


def pinned_values(grid, far_field, values) -> np.ndarray:
    """Copy of ``values`` with the pinned line-mode node set to a_minus."""
    out = np.array(values, dtype=float).ravel()
    if not grid.periodic:
        out[0] = far_field[0]
    return out


def _newton_step(J, r, mu):
    """Newton step, or Levenberg-Marquardt step when mu > 0 or J is singular."""
    if mu == 0.0:
        try:
            delta = np.linalg.solve(J, -r)
            ok = (np.all(np.isfinite(delta))
                  and np.max(np.abs(J @ delta + r)) <= 1e-8 * max(np.max(np.abs(r)), 1e-300)
                  and np.max(np.abs(delta)) <= 1e8)
            if ok:
                return delta
        except np.linalg.LinAlgError:
            pass
        mu = 1e-12 * float(np.sum(J * J)) / J.shape[0]
    JtJ = J.T @ J
    JtJ[np.diag_indices_from(JtJ)] += mu
    return np.linalg.solve(JtJ, -(J.T @ r))


def solve_boundary_reaction(
    nl,
    init: GridFunction,
    params: FracParams,
    tol: float = 1e-10,
    max_iter: int = 100,
    operator=None,
    stagnation: int = 10,
) -> SolveReport:
    """Damped Newton for (1/d)(-Lap)^s v = f(v).

    The mode (torus or truncated line) follows ``init.grid``; on a line the
    far-field constants of ``init`` clamp the exterior.  Steps are halved
    until the sup-norm residual decreases (down to 2^-20); if no damped step
    decreases it, Levenberg-Marquardt regularization is increased.  On failure
    the best iterate is returned, as it is when the residual has dropped by
    less than 10% over the last ``stagnation`` iterations.  ``operator`` may
    pass a precomputed :func:`boundary_operator` triple.
    """
    grid = init.grid
    A, b, free = operator if operator is not None else boundary_operator(
        grid, params, init.far_field)
    full = pinned_values(grid, init.far_field, init.values)
    v = full[free].copy()

    def residual(w):
        return A @ w + b - nl.f(w)

    r = residual(v)
    rn = float(np.max(np.abs(r)))
    history = [rn]
    it = 0
    message = ""
    while rn > tol and it < max_iter:
        J = A - np.diag(nl.fprime(v))
        mu = 0.0
        accepted = False
        for _ in range(8):
            delta = _newton_step(J, r, mu)
            lam = 1.0
            while lam >= 2.0**-20:
                trial = v + lam * delta
                rt = residual(trial)
                rtn = float(np.max(np.abs(rt)))
                if np.isfinite(rtn) and rtn < rn:
                    accepted = True
                    break
                lam *= 0.5
            if accepted:
                break
            scale = float(np.sum(J * J)) / J.shape[0]
            mu = max(100.0 * mu, 1e-8 * scale)
        if not accepted:
            message = "stalled: no damped step decreases the residual"
            break
        v, r, rn = trial, rt, rtn
        history.append(rn)
        it += 1
        if stagnation and it >= stagnation and rn > 0.9 * history[-1 - stagnation]:
            message = f"stagnated: residual fell by less than 10% in {stagnation} iterations"
            break
    converged = rn <= tol
    if not converged and not message:
        message = f"no convergence in {max_iter} iterations"
    full[free] = v
    sol = GridFunction(grid, full.reshape(grid.shape), init.far_field)
    return SolveReport(converged, it, rn, sol, history, message or "converged", method="newton")


def relax_boundary_reaction(
    nl,
    init: GridFunction,
    params: FracParams,
    t_final: float = 50.0,
    dt: float = 0.25,
) -> GridFunction:
    """Semi-implicit steps of  v_t = f(v) - (1/d)(-Lap)^s v  on a torus.

    (I + dt (1/d)|xi|^2s) v_new = v + dt f(v), solved by FFT.  Used to move
    random data into a basin of the Newton iteration.
    """
    from .ops import spectral_multiplier

    grid = init.grid
    if not grid.periodic:
        raise GridError("relaxation is implemented on the torus only")
    d = params.require("d_ns")
    denom = 1.0 + dt * spectral_multiplier(grid, params.s).values / d
    v = np.array(init.values, dtype=float)
    for _ in range(int(np.ceil(t_final / dt))):
        v = np.real(np.fft.ifftn(np.fft.fftn(v + dt * nl.f(v)) / denom))
    return init.with_values(v)

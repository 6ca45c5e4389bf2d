"""Discrete domains for the boundary problem and its weighted extension.

The boundary R^n is modelled either as a periodic torus of period L or (n = 1
only) as a truncated line [-L/2, L/2) whose exterior is clamped to far-field
constants.  The extension half-space is a graded half-cylinder
[0, X] x boundary whose layers cluster at x = 0, where the weight x^alpha is
degenerate (alpha > 0) or singular (alpha < 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "GridError",
    "UncalibratedError",
    "Constants",
    "FracParams",
    "BoundaryGrid",
    "GridFunction",
    "ExtensionGrid",
    "ExtensionField",
    "make_torus_grid",
    "make_line_grid",
    "make_extension_grid",
    "default_grading",
    "weighted_cell_integrals",
    "layer_weights",
    "weighted_energy",
    "cell_energy_density",
]


class GridError(ValueError):
    """Invalid grid or field construction."""


class UncalibratedError(RuntimeError):
    """An operation needed a normalizing constant that was never calibrated."""


_CONSTANT_NAMES = ("C_ns", "d_ns", "c_nalpha")


@dataclass(frozen=True)
class Constants:
    """Normalizing constants of the three realizations.

    ``None`` marks a constant as unset; any float marks it calibrated.
    """

    C_ns: float | None = None
    d_ns: float | None = None
    c_nalpha: float | None = None
    residuals: dict = field(default_factory=dict, compare=False)
    descriptor: dict = field(default_factory=dict, compare=False)

    def state(self, name: str) -> str:
        return "unset" if getattr(self, name) is None else "calibrated"

    def require(self, name: str) -> float:
        if name not in _CONSTANT_NAMES:
            raise KeyError(name)
        value = getattr(self, name)
        if value is None:
            raise UncalibratedError(f"constant {name} is not calibrated")
        return float(value)


@dataclass(frozen=True)
class FracParams:
    s: float
    n: int = 1
    constants: Constants = field(default_factory=Constants)

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise GridError("s must lie in (0,1)")
        if self.n not in (1, 2):
            raise GridError("n must be 1 or 2")

    @property
    def alpha(self) -> float:
        return 1.0 - 2.0 * self.s

    def require(self, name: str) -> float:
        return self.constants.require(name)

    def with_constants(self, constants: Constants) -> "FracParams":
        return replace(self, constants=constants)


@dataclass(frozen=True)
class BoundaryGrid:
    """Uniform vertex-centred grid with nodes y_j = -L/2 + j*h on each axis."""

    n: int
    L: float
    N: int
    periodic: bool = True

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N**self.n

    @property
    def nodes(self) -> np.ndarray:
        return -0.5 * self.L + self.h * np.arange(self.N)

    def mesh(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*([self.nodes] * self.n), indexing="ij")

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Angular frequencies 2*pi*k/L per axis in FFT order."""
        xi = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        return np.meshgrid(*([xi] * self.n), indexing="ij")

    def descriptor(self) -> dict:
        return {"n": self.n, "L": self.L, "N": self.N, "periodic": self.periodic}


def make_torus_grid(n: int, L: float, N: int) -> BoundaryGrid:
    return _make_grid(n, L, N, periodic=True)


def make_line_grid(L: float, N: int) -> BoundaryGrid:
    """Truncated line [-L/2, L/2) for layer solutions (exterior clamped)."""
    return _make_grid(1, L, N, periodic=False)


def _make_grid(n, L, N, periodic):
    if n not in (1, 2):
        raise GridError("n must be 1 or 2")
    if int(N) != N:
        raise GridError("N must be an integer")
    N = int(N)
    if N % 2:
        raise GridError("N must be even")
    if N < 8:
        raise GridError("N must be at least 8")
    if not L > 0:
        raise GridError("L must be positive")
    return BoundaryGrid(n=n, L=float(L), N=N, periodic=periodic)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real samples on a boundary grid.

    On a line grid ``far_field`` holds the clamped exterior values
    (a_minus, a_plus); on a torus it must be ``None``.
    """

    grid: BoundaryGrid
    values: np.ndarray
    far_field: tuple[float, float] | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise GridError(
                f"expected {self.grid.size} values, got {vals.size}"
            )
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise GridError("grid function has non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.grid.periodic:
            if self.far_field is not None:
                raise GridError("far-field values only apply on a line grid")
        elif self.far_field is None:
            raise GridError("line grid functions need far-field values")
        else:
            a, b = self.far_field
            object.__setattr__(self, "far_field", (float(a), float(b)))

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.far_field)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def inner(self, other: "GridFunction") -> float:
        return float(np.sum(self.values * other.values) * self.grid.cell_volume)

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))


def default_grading(alpha: float) -> float:
    """Grading exponent matched to the boundary scale x^(1-alpha)."""
    return float(np.clip(2.0 / (1.0 - alpha), 1.0, 4.0))


@dataclass(frozen=True, eq=False)
class ExtensionGrid:
    boundary: BoundaryGrid
    X: float
    M: int
    gamma: float

    @property
    def x(self) -> np.ndarray:
        k = np.arange(self.M + 1, dtype=float)
        x = self.X * (k / self.M) ** self.gamma
        x[0] = 0.0
        x[-1] = self.X
        return x

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M + 1,) + self.boundary.shape

    def descriptor(self) -> dict:
        d = self.boundary.descriptor()
        d.update({"X": self.X, "M": self.M, "gamma": self.gamma})
        return d

    def __eq__(self, other):
        if not isinstance(other, ExtensionGrid):
            return NotImplemented
        return self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(tuple(sorted(self.descriptor().items())))


def make_extension_grid(
    boundary: BoundaryGrid, X: float, M: int, gamma: float = 1.0
) -> ExtensionGrid:
    if int(M) != M or M < 8:
        raise GridError("M too small (need M >= 8)")
    if gamma < 1.0:
        raise GridError("gamma must be >= 1")
    if not X > 0:
        raise GridError("X must be positive")
    return ExtensionGrid(boundary=boundary, X=float(X), M=int(M), gamma=float(gamma))


@dataclass(frozen=True, eq=False)
class ExtensionField:
    """Samples u(x_k, y_j) on a graded half-cylinder; layer 0 is the trace."""

    egrid: ExtensionGrid
    values: np.ndarray
    far_field: tuple[float, float] | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.size != int(np.prod(self.egrid.shape)):
            raise GridError("field size does not match the extension grid")
        vals = vals.reshape(self.egrid.shape)
        if not np.all(np.isfinite(vals)):
            raise GridError("extension field has non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def trace(self) -> GridFunction:
        return GridFunction(self.egrid.boundary, self.values[0], self.far_field)

    def layer(self, k: int) -> GridFunction:
        return GridFunction(self.egrid.boundary, self.values[k], self.far_field)


def weighted_cell_integrals(egrid: ExtensionGrid, alpha: float) -> np.ndarray:
    """Exact per-layer integrals of x^alpha over [x_k, x_{k+1}]."""
    if not -1.0 < alpha < 1.0:
        raise GridError("alpha must lie in (-1,1)")
    p = alpha + 1.0
    return np.diff(egrid.x**p) / p


def layer_weights(egrid: ExtensionGrid, alpha: float):
    """Return (W, dx, m): cell weights, cell widths and lumped node weights.

    m_k = (W_{k-1} + W_k)/2 is the x^alpha mass of the dual cell of node k.
    """
    W = weighted_cell_integrals(egrid, alpha)
    dx = np.diff(egrid.x)
    m = np.zeros(egrid.M + 1)
    m[:-1] += 0.5 * W
    m[1:] += 0.5 * W
    return W, dx, m


def _ydiffs(values: np.ndarray, periodic: bool) -> list[np.ndarray]:
    """Forward differences along each boundary axis (axes 1..n)."""
    out = []
    for ax in range(1, values.ndim):
        if periodic:
            out.append(np.roll(values, -1, axis=ax) - values)
        else:
            out.append(np.diff(values, axis=ax))
    return out


def _edge_coef(coef, ax, periodic):
    if coef is None:
        return 1.0
    if periodic:
        return 0.5 * (coef + np.roll(coef, -1, axis=ax))
    sl_a = [slice(None)] * coef.ndim
    sl_b = [slice(None)] * coef.ndim
    sl_a[ax] = slice(None, -1)
    sl_b[ax] = slice(1, None)
    return 0.5 * (coef[tuple(sl_a)] + coef[tuple(sl_b)])


def weighted_energy(
    u: ExtensionField, alpha: float, coef: np.ndarray | None = None
) -> float:
    """Discrete  int x^alpha * coef * |grad u|^2  over the half-cylinder.

    x-derivatives are cellwise constant with the weight integrated exactly;
    y-derivatives are forward differences with lumped layer weights.
    """
    egrid = u.egrid
    bnd = egrid.boundary
    W, dx, m = layer_weights(egrid, alpha)
    vals = u.values
    ext = (1,) * bnd.n
    cx = _edge_coef(coef, 0, False)
    ex = np.sum(cx * (W / dx**2).reshape((-1,) + ext) * np.diff(vals, axis=0) ** 2)
    ey = 0.0
    for ax, d in enumerate(_ydiffs(vals, bnd.periodic), start=1):
        cy = _edge_coef(coef, ax, bnd.periodic)
        ey += np.sum(cy * m.reshape((-1,) + ext) * d**2) / bnd.h**2
    return float((ex + ey) * bnd.cell_volume)


def cell_energy_density(u: ExtensionField, alpha: float) -> np.ndarray:
    """Split the discrete energy into cells [x_k,x_k+1] x [y_j,y_j+h]^n.

    Each cell receives the averages of the edge terms on its faces so that the
    cell values sum exactly to :func:`weighted_energy` on a torus.  Returns an
    array of shape (M,) + (N or N-1,)*n.
    """
    egrid = u.egrid
    bnd = egrid.boundary
    W, dx, _ = layer_weights(egrid, alpha)
    vals = u.values
    n = bnd.n
    ext = (1,) * n
    h = bnd.h
    # squared x-differences on nodes of each boundary slice, then average
    # over the 2^n corners of every boundary cell
    gx = (np.diff(vals, axis=0) / dx.reshape((-1,) + ext)) ** 2
    gx = _corner_average(gx, bnd.periodic)
    gy = 0.0
    for ax, d in enumerate(_ydiffs(vals, bnd.periodic), start=1):
        sq = (d / h) ** 2
        sq = 0.5 * (sq[:-1] + sq[1:])
        # average over the remaining boundary axes
        for other in range(1, n + 1):
            if other != ax:
                sq = _axis_average(sq, other, bnd.periodic)
        gy = gy + sq
    return (gx + gy) * W.reshape((-1,) + ext) * bnd.cell_volume


def _axis_average(a, ax, periodic):
    if periodic:
        return 0.5 * (a + np.roll(a, -1, axis=ax))
    sl_a = [slice(None)] * a.ndim
    sl_b = [slice(None)] * a.ndim
    sl_a[ax] = slice(None, -1)
    sl_b[ax] = slice(1, None)
    return 0.5 * (a[tuple(sl_a)] + a[tuple(sl_b)])


def _corner_average(a, periodic):
    for ax in range(1, a.ndim):
        a = _axis_average(a, ax, periodic)
    return a

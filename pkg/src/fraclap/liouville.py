"""Energy growth, the Hamiltonian identity, 1D alignment and the solver suites."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import make_lsq_spline

from .extension import boundary_operator, relax_boundary_reaction, solve_boundary_reaction
from .grid import (
    ExtensionField,
    FracParams,
    GridError,
    GridFunction,
    cell_energy_density,
    make_line_grid,
    make_torus_grid,
)
from .nonlinearity import WORKING_RANGE, Nonlinearity, NonlinearityError
from .stability import lambda_min, sign_classification, trace_derivative

__all__ = [
    "EnergyScan",
    "energy_scan",
    "HamiltonianGap",
    "hamiltonian_gap",
    "Alignment",
    "one_d_alignment",
    "random_initial_data",
    "is_layer",
    "SuiteConfig",
    "SuiteReport",
    "liouville_suite",
    "trichotomy_suite",
]


# --------------------------------------------------------------------------
# energy growth


@dataclass(frozen=True)
class EnergyScan:
    radii: np.ndarray
    energies: np.ndarray
    fitted_exponent: float | None
    fit_window: tuple[int, int]
    fit_residual: float
    label: str = ""

    def record(self) -> dict:
        return {
            "radii": list(map(float, self.radii)),
            "energies": list(map(float, self.energies)),
            "fitted_exponent": self.fitted_exponent if self.fitted_exponent is not None
            else "zero-energy",
            "fit_window": f"{self.fit_window[0]}:{self.fit_window[1]}",
            "fit_residual": self.fit_residual,
        }


def _corner_coords(bnd):
    """Per-axis corner coordinates (lower, upper) of boundary cells."""
    y = bnd.nodes
    ncell = bnd.N if bnd.periodic else bnd.N - 1
    return y[:ncell], y[:ncell] + bnd.h


def _ball_fraction(egrid, alpha, R):
    """x^alpha-weighted fraction of each cell inside the half-ball of radius R.

    The x-extent is exact for every cell corner; the y-direction is resolved
    by averaging over the 2^n corners.
    """
    bnd = egrid.boundary
    p = alpha + 1.0
    x = egrid.x
    xl = x[:-1].reshape((-1,) + (1,) * bnd.n)
    xu = x[1:].reshape((-1,) + (1,) * bnd.n)
    lo, hi = _corner_coords(bnd)
    corners = [lo, hi]
    frac = 0.0
    count = 0
    if bnd.n == 1:
        combos = [(c,) for c in corners]
    else:
        combos = [(a, b) for a in corners for b in corners]
    for combo in combos:
        if bnd.n == 1:
            r2 = combo[0] ** 2
        else:
            r2 = combo[0][:, None] ** 2 + combo[1][None, :] ** 2
        xi = np.sqrt(np.maximum(R * R - r2, 0.0))[None]
        top = np.minimum(xi, xu)
        part = np.where(top > xl, top**p - xl**p, 0.0) / (xu**p - xl**p)
        frac = frac + np.clip(part, 0.0, 1.0)
        count += 1
    return frac / count


def energy_scan(
    u: ExtensionField,
    params: FracParams,
    radii,
    fit_window: tuple[int, int] | None = None,
) -> EnergyScan:
    """E(R) = int_{B_R^+} x^alpha |grad u|^2 for the half-balls centred at y = 0.

    Cells cut by the sphere contribute by their weighted overlap fraction.
    The exponent is the least-squares slope of log E against log R.
    """
    egrid = u.egrid
    bnd = egrid.boundary
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 2 or np.any(np.diff(radii) <= 0) or radii[0] <= 0:
        raise GridError("radii must be an increasing list of positive values")
    limit = min(egrid.X, 0.5 * bnd.L)
    if radii[-1] > limit:
        raise GridError(f"radius {radii[-1]:g} exceeds the grid (limit {limit:g})")
    dens = cell_energy_density(u, params.alpha)
    E = np.array([float(np.sum(dens * _ball_fraction(egrid, params.alpha, R))) for R in radii])
    E = np.maximum.accumulate(E)
    lo, hi = fit_window or (0, radii.size)
    scale = max(float(np.max(np.abs(u.values))), 1.0) ** 2
    if np.all(E[lo:hi] <= 1e-24 * scale):
        return EnergyScan(radii, E, None, (lo, hi), 0.0)
    lr, le = np.log(radii[lo:hi]), np.log(np.maximum(E[lo:hi], 1e-300))
    coef, res, *_ = np.polyfit(lr, le, 1, full=True)
    rms = float(np.sqrt(res[0] / lr.size)) if res.size else 0.0
    return EnergyScan(radii, E, float(coef[0]), (lo, hi), rms)


# --------------------------------------------------------------------------
# Hamiltonian identity


@dataclass(frozen=True)
class HamiltonianGap:
    a_minus: float
    a_plus: float
    gap: float
    f_integral: float

    @property
    def consistency(self) -> float:
        return abs(self.gap + self.f_integral)

    def record(self) -> dict:
        return {
            "a_minus": self.a_minus,
            "a_plus": self.a_plus,
            "gap": self.gap,
            "f_integral": self.f_integral,
            "consistency": self.consistency,
        }


def hamiltonian_gap(nl: Nonlinearity, a_minus: float, a_plus: float,
                    tol: float = 1e-6) -> HamiltonianGap:
    """G(a+) - G(a-) together with an independent quadrature of int f."""
    if not a_minus < a_plus:
        raise ValueError("need a_minus < a_plus")
    gap = float(nl.G(np.float64(a_plus)) - nl.G(np.float64(a_minus)))
    fint, _ = integrate.quad(lambda t: float(nl.f(np.float64(t))), a_minus, a_plus,
                             epsabs=1e-14, epsrel=1e-13, limit=200)
    out = HamiltonianGap(float(a_minus), float(a_plus), gap, float(fint))
    if out.consistency > tol:
        raise NonlinearityError(
            f"{nl.name}: potential inconsistent with f (|gap + int f| = {out.consistency:.2e})"
        )
    return out


# --------------------------------------------------------------------------
# one-dimensional alignment (n = 2)


@dataclass(frozen=True)
class Alignment:
    omega: np.ndarray | None
    residual: float
    flag: str = ""

    def record(self) -> dict:
        return {
            "omega": "undefined" if self.omega is None else list(map(float, self.omega)),
            "residual": self.residual,
            "flag": self.flag or "ok",
        }


def _trace_gradient(v: GridFunction):
    grid = v.grid
    hat = np.fft.fftn(v.values)
    grads = []
    for xi in grid.wavenumbers():
        xi = np.where(np.abs(xi) == np.max(np.abs(xi)), 0.0, xi)  # drop Nyquist
        grads.append(np.real(np.fft.ifftn(1j * xi * hat)))
    return grads


def one_d_alignment(u: ExtensionField, knots_per_node: float = 2.0) -> Alignment:
    """Direction omega and distance of u from the form u0(x, omega . y).

    omega is the principal eigenvector of the trace-gradient covariance; each
    layer is then fitted by a cubic least-squares spline in t = omega . y
    (a smoothed average along the level sets of t).
    """
    egrid = u.egrid
    bnd = egrid.boundary
    if bnd.n != 2:
        raise GridError("alignment needs a two-dimensional boundary")
    g1, g2 = _trace_gradient(u.trace())
    C = np.array([[np.mean(g1 * g1), np.mean(g1 * g2)],
                  [np.mean(g2 * g1), np.mean(g2 * g2)]])
    if np.trace(C) < 1e-12:
        return Alignment(None, 0.0, "constant")
    w, V = np.linalg.eigh(C)
    omega = V[:, -1]
    if omega[np.argmax(np.abs(omega))] < 0:
        omega = -omega
    y1, y2 = bnd.mesh()
    t = (omega[0] * y1 + omega[1] * y2).ravel()
    order = np.argsort(t, kind="stable")
    ts = t[order]
    # a spline needs data in every knot span; aligned directions give few distinct t
    distinct = np.unique(np.round(ts, 12)).size
    nint = max(4, min(int(knots_per_node * bnd.N), distinct // 2))
    inner = np.linspace(ts[0], ts[-1], nint + 1)[1:-1]
    k = 3
    knots = np.concatenate([[ts[0]] * (k + 1), inner, [ts[-1]] * (k + 1)])
    recon = np.empty_like(u.values)
    for layer in range(egrid.M + 1):
        vals = u.values[layer].ravel()[order]
        spl = make_lsq_spline(ts, vals, knots, k)
        out = np.empty(ts.size)
        out[order] = spl(ts)
        recon[layer] = out.reshape(bnd.shape)
    num = np.linalg.norm(u.values - recon)
    den = np.linalg.norm(u.values)
    return Alignment(omega, float(num / den) if den > 0 else 0.0)


# --------------------------------------------------------------------------
# random data and layer detection


def random_initial_data(grid, rng: np.random.Generator, working_range=WORKING_RANGE,
                        modes: int = 8, far_field=None) -> GridFunction:
    """Smooth random Fourier series with coefficient decay |k|^-2.

    The oscillation is scaled to an amplitude drawn from [0.1, 2] around an
    offset drawn from the working range.
    """
    kappa = 2.0 * np.pi / grid.L
    coords = grid.mesh()
    series = np.zeros(grid.shape)
    ks = range(-modes, modes + 1)
    if grid.n == 1:
        wave = [(k,) for k in range(1, modes + 1)]
    else:
        wave = [(k1, k2) for k1 in ks for k2 in ks
                if (k1, k2) > (0, 0) and k1 * k1 + k2 * k2 <= modes * modes]
    for kv in wave:
        a, b = rng.standard_normal(2)
        phase = kappa * sum(k * c for k, c in zip(kv, coords))
        series += (a * np.cos(phase) + b * np.sin(phase)) / float(np.dot(kv, kv))
    series /= max(float(np.max(np.abs(series))), 1e-300)
    amp = rng.uniform(0.1, 2.0)
    offset = rng.uniform(*working_range)
    return GridFunction(grid, offset + amp * series, far_field)


def is_layer(v: GridFunction, a_minus: float, a_plus: float) -> bool:
    """Strictly monotone profile joining the far-field values inside the window.

    The midpoint value must be crossed in the central half of the window and
    both ends must lie within 10% of |a+ - a-| of the far-field values.
    """
    vals = v.values
    jump = a_plus - a_minus
    d = np.diff(vals) * np.sign(jump)
    if not np.all(d > 0):
        return False
    tol = 0.1 * abs(jump)
    if abs(vals[1] - a_minus) > tol or abs(vals[-1] - a_plus) > tol:
        return False
    mid = 0.5 * (a_minus + a_plus)
    j = int(np.argmax((vals - mid) * np.sign(jump) >= 0))
    N = vals.size
    return N // 4 <= j <= 3 * N // 4


# --------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class SuiteConfig:
    torus_L: float = 2.0 * np.pi
    torus_N1: int = 128
    torus_N2: int = 32
    line_L: float = 80.0
    line_N: int = 512
    dims: tuple = (1, 2)
    layers: bool = True
    tol: float = 1e-10
    max_iter: int = 100
    relax_time: float = 50.0
    working_range: tuple = WORKING_RANGE
    threads: int | None = None

    def record(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "threads"}


@dataclass
class SuiteReport:
    name: str
    passed: bool
    records: list
    violations: list
    config: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        from .report import format_record

        out = [f"suite={self.name}", f"result={'PASS' if self.passed else 'FAIL'}"]
        out += format_record(self.config, prefix="config.")
        for i, rec in enumerate(self.records):
            out += format_record(rec, prefix=f"record.{i}.")
        for i, msg in enumerate(self.violations):
            out.append(f"violation.{i}={msg}")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _thread_count(threads):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("FRACLAP_THREADS")
    return max(1, int(env)) if env else 1


class _OperatorCache:
    """Dense boundary operators shared by trials with the same grid."""

    def __init__(self, params):
        self.params = params
        self._store = {}

    def get(self, grid, far_field):
        key = (tuple(sorted(grid.descriptor().items())), far_field)
        if key not in self._store:
            self._store[key] = boundary_operator(grid, self.params, far_field)
        return self._store[key]


def _solution_record(nl, rep, params, kind, working_range, classify):
    v = rep.solution
    rec = {
        "kind": kind,
        "converged": rep.converged,
        "iterations": rep.iterations,
        "final_residual": rep.final_residual,
    }
    if not rep.converged:
        rec["outcome"] = "no-convergence"
        return rec
    st = lambda_min(v, nl, params)
    width = working_range[1] - working_range[0]
    dev = float(np.ptp(v.values))
    rec.update({
        "lambda_min": st.lambda_min,
        "stable": st.stable,
        "deviation": dev,
        "constant": dev <= 1e-3 * width,
        "max_abs_f": float(np.max(np.abs(nl.f(v.values)))),
        "mean": float(np.mean(v.values)),
    })
    if classify:
        rec["classification"] = sign_classification(trace_derivative(v))
    rec["outcome"] = "converged"
    return rec


def _torus_trial(nl, params, cfg, rng, n, cache):
    """Newton from random data; on failure, relax the data and retry once."""
    N = cfg.torus_N1 if n == 1 else cfg.torus_N2
    grid = make_torus_grid(n, cfg.torus_L, N)
    init = random_initial_data(grid, rng, cfg.working_range)
    op = cache.get(grid, None)
    rep = solve_boundary_reaction(nl, init, params, tol=cfg.tol, max_iter=cfg.max_iter,
                                  operator=op)
    relaxed = False
    if not rep.converged and cfg.relax_time > 0:
        start = relax_boundary_reaction(nl, init, params, t_final=cfg.relax_time)
        rep = solve_boundary_reaction(nl, start, params, tol=cfg.tol,
                                      max_iter=cfg.max_iter, operator=op)
        relaxed = True
    rec = _solution_record(nl, rep, params, f"torus{n}", cfg.working_range,
                           classify=(n == 1))
    rec["relaxed"] = relaxed
    return rec


def _layer_trial(nl, params, cfg, rng, pair, ops_cache):
    a_minus, a_plus = pair
    gap = hamiltonian_gap(nl, a_minus, a_plus)
    grid = make_line_grid(cfg.line_L, cfg.line_N)
    # centred profiles: the window pins the translation mode only weakly
    width = rng.uniform(1.0, 5.0)
    y = grid.nodes
    prof = a_minus + (a_plus - a_minus) * 0.5 * (1.0 + np.tanh(y / width))
    init = GridFunction(grid, prof, (a_minus, a_plus))
    rep = solve_boundary_reaction(nl, init, params, tol=cfg.tol, max_iter=cfg.max_iter,
                                  operator=ops_cache.get(grid, (a_minus, a_plus)))
    rec = _solution_record(nl, rep, params, "layer", cfg.working_range,
                           classify=True)
    rec.update({"a_minus": a_minus, "a_plus": a_plus, "gap": gap.gap,
                "init_width": width})
    rec["layer"] = bool(rep.converged and is_layer(rep.solution, a_minus, a_plus))
    return rec


def _run_trials(family, params, trials, seed, cfg):
    caches = {n: _OperatorCache(params[n]) for n in params}
    # fill the operator caches serially so worker threads only read them
    for n in cfg.dims:
        N = cfg.torus_N1 if n == 1 else cfg.torus_N2
        caches[n].get(make_torus_grid(n, cfg.torus_L, N), None)
    if cfg.layers and 1 in params:
        for nl in family:
            for pair in nl.zero_pairs():
                caches[1].get(make_line_grid(cfg.line_L, cfg.line_N), pair)

    def work(task):
        fi, nl, t = task
        rng = np.random.default_rng([seed, fi, t])
        recs = [_torus_trial(nl, params[n], cfg, rng, n, caches[n]) for n in cfg.dims]
        if cfg.layers and 1 in params:
            for pair in nl.zero_pairs():
                recs.append(_layer_trial(nl, params[1], cfg, rng, pair, caches[1]))
        for r in recs:
            r["nonlinearity"] = nl.name
            r["trial"] = t
        return recs

    tasks = [(fi, nl, t) for fi, nl in enumerate(family) for t in range(trials)]
    threads = _thread_count(cfg.threads)
    if threads == 1:
        results = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    return [r for group in results for r in group]


def _params_by_dim(params, dims):
    """Accept one FracParams or a mapping n -> FracParams."""
    if isinstance(params, FracParams):
        if any(n != params.n for n in dims):
            raise GridError("supply calibrated parameters for every dimension as a dict")
        return {params.n: params}
    return dict(params)


def liouville_suite(
    family,
    params,
    trials: int = 50,
    seed: int = 0,
    config: SuiteConfig | None = None,
) -> SuiteReport:
    """Random solves with nonnegative nonlinearities.

    Passes when every converged stable torus solution is constant (within
    1e-3 of the working-range width) and sits at a zero of f, and when no
    layer attempt between zeros with |gap| > 1e-3 produces a monotone layer.
    ``params`` maps each dimension to calibrated parameters.
    """
    cfg = config or SuiteConfig()
    pmap = _params_by_dim(params, cfg.dims)
    violations = []
    for nl in family:
        if not nl.is_nonnegative(cfg.working_range):
            raise NonlinearityError(f"{nl.name} is negative somewhere on the working range")
    records = _run_trials(list(family), pmap, trials, seed, cfg)
    width = cfg.working_range[1] - cfg.working_range[0]
    for rec in records:
        tag = f"{rec['nonlinearity']}#{rec['trial']}:{rec['kind']}"
        if rec["kind"].startswith("torus") and rec.get("stable"):
            if not rec["constant"]:
                violations.append(f"{tag} stable but not constant (deviation {rec['deviation']!r})")
            elif rec["max_abs_f"] > 1e-3 * width:
                violations.append(f"{tag} stable constant away from a zero of f")
        if rec["kind"] == "layer" and abs(rec["gap"]) > 1e-3 and rec.get("layer"):
            violations.append(f"{tag} monotone layer with nonzero gap {rec['gap']!r}")
    cfgrec = cfg.record()
    cfgrec.update({"trials": trials, "seed": seed, "s": next(iter(pmap.values())).s,
                   "family": ",".join(nl.name for nl in family)})
    return SuiteReport("liouville", not violations, records, violations, cfgrec)


def trichotomy_suite(
    family,
    params: FracParams,
    trials: int = 50,
    seed: int = 0,
    config: SuiteConfig | None = None,
) -> SuiteReport:
    """One-dimensional solves (torus and layer attempts) classified by sign of v_y.

    Fails on any converged stable solution whose derivative changes sign.
    Balanced zero pairs with f' <= 0 at both ends also serve as a positive
    control: at least one of their layer attempts must converge to a layer.
    """
    base = config or SuiteConfig()
    cfg = SuiteConfig(**{**base.__dict__, "dims": (1,)})
    pmap = {1: params}
    records = _run_trials(list(family), pmap, trials, seed, cfg)
    violations = []
    for rec in records:
        tag = f"{rec['nonlinearity']}#{rec['trial']}:{rec['kind']}"
        if rec.get("stable") and rec.get("classification") == "mixed":
            violations.append(f"{tag} stable solution with sign-changing derivative")
    for nl in family:
        for a_minus, a_plus in nl.zero_pairs():
            gap = hamiltonian_gap(nl, a_minus, a_plus).gap
            admissible = (abs(gap) <= 1e-3 and nl.fprime(np.float64(a_minus)) <= 0
                          and nl.fprime(np.float64(a_plus)) <= 0)
            if not admissible:
                continue
            found = any(r.get("layer") for r in records
                        if r["nonlinearity"] == nl.name and r["kind"] == "layer"
                        and r["a_minus"] == a_minus)
            if not found:
                violations.append(f"{nl.name}: no layer found between {a_minus!r} and {a_plus!r}")
    cfgrec = cfg.record()
    cfgrec.update({"trials": trials, "seed": seed, "s": params.s,
                   "family": ",".join(nl.name for nl in family)})
    return SuiteReport("trichotomy", not violations, records, violations, cfgrec)

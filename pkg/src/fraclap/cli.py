"""Command-line entry point: ``fraclap <command> [--key value ...]``.

Exit codes: 0 success or PASS, 1 computational failure, 2 usage or
configuration error.  Every report starts with ``report=fraclap`` and echoes
the effective configuration as ``config.*`` lines, so a report file can be
passed back with ``--config`` to repeat the run.
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ALIASES, COMMANDS, KEYS, ConfigError, build_config, family_list, load_config
from .extension import (
    ExtensionSolveError,
    dirichlet_to_neumann,
    interior_residual,
    solve_boundary_reaction,
    solve_extension_dirichlet,
)
from .grid import (
    Constants,
    ExtensionField,
    default_grading,
    FracParams,
    GridError,
    GridFunction,
    make_extension_grid,
    make_line_grid,
    make_torus_grid,
    weighted_energy,
)
from .liouville import (
    SuiteConfig,
    energy_scan,
    hamiltonian_gap,
    liouville_suite,
    random_initial_data,
    trichotomy_suite,
)
from .nonlinearity import NonlinearityError, parse_nonlinearity
from .ops import (
    CalibrationError,
    TruncationWarning,
    calibrate_constants,
    fraclap_fourier,
    fraclap_singular,
    smooth_battery,
)
from .report import format_record, read_binary, write_binary, write_csv
from .stability import lambda_min, sign_classification, trace_derivative

__all__ = ["run_cli", "main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _option_strings(key):
    opts = [f"--{key}"]
    opts += [f"--{alias}" for alias, target in ALIASES.items() if target == key]
    if "_" in key:
        opts.append(f"--{key.replace('_', '-')}")
    return list(dict.fromkeys(opts))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fraclap", description="Fractional Laplacian toolkit.")
    parser.add_argument("--version", action="version", version=f"fraclap {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", dest="config_file", metavar="PATH")
        for key, (_, help_text) in KEYS.items():
            if key == "command":
                continue
            p.add_argument(*_option_strings(key), dest=key, metavar="VALUE", help=help_text)
    return parser


# --------------------------------------------------------------------------
# helpers


def _constants_for(cfg, n=None, s=None) -> FracParams:
    n = cfg["n"] if n is None else n
    s = cfg["s"] if s is None else s
    path = cfg.get("calibration")
    if path:
        rec = _read_record(path)
        try:
            rs, rn = float(rec["s"]), int(rec["n"])
        except KeyError:
            raise ConfigError(f"{path} is not a calibration record", "calibration") from None
        if rs != s or rn != n:
            raise ConfigError(
                f"calibration record is for s={rs!r}, n={rn} but the run uses s={s!r}, n={n}",
                "calibration",
            )
        consts = Constants(C_ns=float(rec["C_ns"]), d_ns=float(rec["d_ns"]),
                           c_nalpha=float(rec["c_nalpha"]))
        return FracParams(s, n, consts)
    return FracParams(s, n, calibrate_constants(FracParams(s, n)))


def _read_record(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", "calibration") from None
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _boundary_grid(cfg):
    if cfg["mode"] == "line":
        return make_line_grid(cfg["grid.L"], cfg["grid.N"])
    return make_torus_grid(cfg["n"], cfg["grid.L"], cfg["grid.N"])


def _extension_grid(cfg, bnd):
    return make_extension_grid(bnd, cfg["grid.X"], cfg["grid.M"], cfg["grid.gamma"])


def _far_field(cfg):
    if cfg["mode"] != "line":
        return None
    return (cfg["a_minus"], cfg["a_plus"])


def _input_function(cfg, grid) -> GridFunction:
    far = _far_field(cfg) if cfg["mode"] == "line" else None
    path = cfg.get("input")
    if path:
        if Path(path).suffix in (".bin", ".frlp"):
            field = read_binary(path, periodic=grid.periodic, far_field=far)
            if not isinstance(field, GridFunction) or field.grid != grid:
                raise ConfigError("input field does not match the configured grid", "input")
            return field
        try:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            vals = np.array([float(r["value"]) for r in rows])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read input {path}: {exc}", "input") from None
        if vals.size != grid.size:
            raise ConfigError(f"input has {vals.size} values, grid needs {grid.size}", "input")
        return GridFunction(grid, vals.reshape(grid.shape), far)
    if not grid.periodic:
        raise ConfigError("line mode needs --input data", "input")
    battery = dict(smooth_battery(grid))
    name = cfg["function"]
    if name not in battery:
        raise ConfigError(f"function {name!r} is not in the {grid.n}D battery "
                          f"({', '.join(battery)})", "function")
    return battery[name]


def _initial_data(cfg, grid) -> GridFunction:
    far = _far_field(cfg)
    kind = cfg["init"]
    if kind == "constant":
        return GridFunction(grid, np.full(grid.shape, cfg["init.value"]), far)
    if kind == "random":
        rng = np.random.default_rng(cfg["seed"])
        return random_initial_data(grid, rng, far_field=far)
    y = grid.mesh()[0]
    a_minus, a_plus = far if far else (-1.0, 1.0)
    prof = a_minus + (a_plus - a_minus) * 0.5 * (1.0 + np.tanh(y / cfg["init.width"]))
    return GridFunction(grid, prof, far)


def _emit_field(cfg, field, lines):
    out = cfg.get("out")
    if not out or cfg["format"] == "text" or field is None:
        return
    if cfg["format"] == "csv":
        write_csv(field, out)
    else:
        write_binary(field, out)
    lines.append(f"output.{cfg['format']}={out}")


def _constants_record(params):
    c = params.constants
    return {"C_ns": c.C_ns, "d_ns": c.d_ns, "c_nalpha": c.c_nalpha}


# --------------------------------------------------------------------------
# commands; each returns (status, result dict, field or None)


def cmd_apply(cfg):
    grid = _boundary_grid(cfg)
    v = _input_function(cfg, grid)
    params = _constants_for(cfg)
    op = cfg["operator"]
    res = {"operator": op}
    if op == "fourier":
        out = fraclap_fourier(v, cfg["s"])
    elif op == "singular":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TruncationWarning)
            out = fraclap_singular(v, cfg["s"], cfg.get("cutoff_images"),
                                   C_ns=params.constants.C_ns)
        res["truncation_warning"] = any(issubclass(w.category, TruncationWarning)
                                        for w in caught)
    else:
        egrid = _extension_grid(cfg, grid)
        out = dirichlet_to_neumann(v, params, egrid)
        out = out.with_values(params.constants.d_ns * out.values)
    res.update({"constants": _constants_record(params), "norm": out.norm(),
                "min": float(out.values.min()), "max": float(out.values.max())})
    return 0, res, out


def cmd_xvalidate(cfg):
    s_values = cfg["s_sweep"]
    grid = make_torus_grid(cfg["n"], cfg["grid.L"], cfg["grid.N"])
    res = {}
    worst = 0.0
    for s in s_values:
        params = _constants_for(cfg, s=s)
        # a sweep grades each exponent by its own default
        gamma = cfg["grid.gamma"] if len(s_values) == 1 else default_grading(1.0 - 2.0 * s)
        egrid = make_extension_grid(grid, cfg["grid.X"], cfg["grid.M"], gamma)
        c = params.constants
        for name, v in smooth_battery(grid):
            F = fraclap_fourier(v, s).values
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", TruncationWarning)
                S = fraclap_singular(v, s, cfg.get("cutoff_images"), C_ns=c.C_ns).values
            D = c.d_ns * dirichlet_to_neumann(v, params, egrid).values
            rows = {
                "fourier_singular": _rel(S, F),
                "fourier_dtn": _rel(D, F),
                "singular_dtn": _rel(D, S),
            }
            worst = max(worst, *rows.values())
            res[f"s={s!r}.{name}"] = rows
    res["worst"] = worst
    res["threshold"] = 1e-2
    status = 0 if worst < 1e-2 else 1
    res["result"] = "PASS" if status == 0 else "FAIL"
    return status, res, None


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def cmd_calibrate(cfg):
    if cfg.get("calibration"):
        raise ConfigError("calibrate computes constants; do not pass --calibration",
                          "calibration")
    consts = calibrate_constants(FracParams(cfg["s"], cfg["n"]))
    res = {"s": cfg["s"], "n": cfg["n"], "C_ns": consts.C_ns, "d_ns": consts.d_ns,
           "c_nalpha": consts.c_nalpha, "residual": dict(consts.residuals),
           "grid": dict(consts.descriptor)}
    return 0, res, None


def cmd_extend(cfg):
    grid = _boundary_grid(cfg)
    v = _input_function(cfg, grid)
    params = _constants_for(cfg)
    egrid = _extension_grid(cfg, grid)
    u = solve_extension_dirichlet(v, params, egrid)
    res = {"grid": egrid.descriptor(), "energy": weighted_energy(u, params.alpha),
           "interior_residual": interior_residual(u, params.alpha)}
    return 0, res, u


def cmd_dtn(cfg):
    grid = _boundary_grid(cfg)
    v = _input_function(cfg, grid)
    params = _constants_for(cfg)
    egrid = _extension_grid(cfg, grid)
    out = dirichlet_to_neumann(v, params, egrid)
    res = {"grid": egrid.descriptor(), "constants": _constants_record(params),
           "norm": out.norm()}
    return 0, res, out


def _solve(cfg):
    grid = _boundary_grid(cfg)
    nl = parse_nonlinearity(cfg["f"])
    params = _constants_for(cfg)
    init = _initial_data(cfg, grid)
    rep = solve_boundary_reaction(nl, init, params, tol=cfg["tol"], max_iter=cfg["max_iter"])
    return nl, params, rep


def cmd_solve(cfg):
    nl, params, rep = _solve(cfg)
    res = {"nonlinearity": nl.name, "solve": rep.record(),
           "solution": {"min": float(rep.solution.values.min()),
                        "max": float(rep.solution.values.max())}}
    return (0 if rep.converged else 1), res, rep.solution


def cmd_stability(cfg):
    nl, params, rep = _solve(cfg)
    res = {"nonlinearity": nl.name, "solve": rep.record()}
    if not rep.converged:
        return 1, res, rep.solution
    st = lambda_min(rep.solution, nl, params)
    res["stability"] = st.record()
    if rep.solution.grid.n == 1:
        res["classification"] = sign_classification(trace_derivative(rep.solution))
    return 0, res, st.eigenfunction


def cmd_energy_scan(cfg):
    s = cfg["s"]
    alpha = 1.0 - 2.0 * s
    kind = cfg["field"]
    if kind == "layer":
        if cfg["mode"] != "line":
            raise ConfigError("energy-scan of a layer needs --mode line", "mode")
        nl = parse_nonlinearity(cfg["f"])
        params = _constants_for(cfg)
        grid = make_line_grid(cfg["grid.L"], cfg["grid.N"])
        init = _initial_data(cfg, grid)
        rep = solve_boundary_reaction(nl, init, params, tol=cfg["tol"])
        if not rep.converged:
            return 1, {"solve": rep.record()}, None
        egrid = _extension_grid(cfg, grid)
        u = solve_extension_dirichlet(rep.solution, params, egrid)
    else:
        grid = _boundary_grid(cfg)
        egrid = _extension_grid(cfg, grid)
        params = FracParams(s, grid.n)
        if kind == "linear":
            vals = np.broadcast_to(egrid.x.reshape((-1,) + (1,) * grid.n), egrid.shape)
            u = ExtensionField(egrid, vals)
        else:
            params = _constants_for(cfg)
            u = solve_extension_dirichlet(_input_function(cfg, grid), params, egrid)
    limit = min(egrid.X, 0.5 * grid.L)
    radii = cfg.get("radii") or tuple(np.geomspace(limit / 8, limit, 7))
    scan = energy_scan(u, FracParams(s, grid.n), radii)
    res = {"field": kind, "alpha": alpha, "scan": scan.record(),
           "threshold": grid.n + alpha - 1.0}
    if cfg.get("out") and cfg["format"] == "csv":
        with open(cfg["out"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["radius", "energy"])
            for r, e in zip(scan.radii, scan.energies):
                w.writerow([repr(float(r)), repr(float(e))])
        res["output.csv"] = cfg["out"]
    return 0, res, None


def cmd_hamiltonian(cfg):
    nl = parse_nonlinearity(cfg["f"])
    gap = hamiltonian_gap(nl, cfg["a_minus"], cfg["a_plus"])
    res = {"nonlinearity": nl.name, **gap.record()}
    ok = gap.consistency <= 1e-8
    res["result"] = "PASS" if ok else "FAIL"
    return (0 if ok else 1), res, None


def cmd_liouville_suite(cfg):
    suite = cfg["suite"]
    family = family_list(cfg["family"])
    scfg = SuiteConfig(tol=cfg["tol"], max_iter=cfg["max_iter"],
                       dims=tuple(cfg["dims"]), threads=cfg.get("threads"))
    if suite == "liouville":
        params = {n: _constants_for(cfg, n=n) for n in scfg.dims}
        rep = liouville_suite(family, params, cfg["trials"], cfg["seed"], scfg)
    else:
        rep = trichotomy_suite(family, _constants_for(cfg, n=1), cfg["trials"],
                               cfg["seed"], scfg)
    lines = [ln for ln in rep.lines() if not ln.startswith("config.")]
    return (0 if rep.passed else 1), {"suite_lines": lines}, None


COMMAND_TABLE = {
    "apply": cmd_apply,
    "xvalidate": cmd_xvalidate,
    "calibrate": cmd_calibrate,
    "extend": cmd_extend,
    "dtn": cmd_dtn,
    "solve": cmd_solve,
    "stability": cmd_stability,
    "energy-scan": cmd_energy_scan,
    "hamiltonian": cmd_hamiltonian,
    "liouville-suite": cmd_liouville_suite,
}


# --------------------------------------------------------------------------


def _fail(kind, message, paragraph, key=None, stream=None):
    stream = stream or sys.stderr
    head = f"error kind={kind}"
    if key:
        head += f" key={key}"
    print(f"{head} reason={message}", file=stream)
    print(paragraph, file=stream)


def run_cli(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        _fail("usage", str(exc), parser.format_usage().strip())
        return 2
    if ns.command is None:
        _fail("usage", "missing command", parser.format_usage().strip())
        return 2
    overrides = {k: v for k, v in vars(ns).items()
                 if v is not None and k not in ("command", "config_file")}
    try:
        if ns.config_file:
            cfg = load_config(ns.config_file, overrides, command=ns.command)
        else:
            cfg = build_config(overrides, command=ns.command)
        status, res, field = COMMAND_TABLE[ns.command](cfg)
    except (ConfigError, NonlinearityError, GridError) as exc:
        key = getattr(exc, "key", None)
        _fail("config", str(exc),
              "The configuration was rejected before or while setting up the run; "
              "fix the named key and retry.", key)
        return 2
    except (CalibrationError, ExtensionSolveError, np.linalg.LinAlgError) as exc:
        _fail("compute", str(exc),
              "The computation did not complete; the message names the failing step.")
        return 1

    lines = ["report=fraclap", f"command={ns.command}"]
    lines += format_record(cfg.echo(), prefix="config.")
    suite_lines = res.pop("suite_lines", None)
    lines += format_record(res)
    if suite_lines:
        lines += suite_lines
    _emit_field(cfg, field, lines)
    text = "\n".join(lines) + "\n"
    stdout.write(text)
    out = cfg.get("out")
    if out and cfg["format"] == "text":
        Path(out).write_text(text)
    return status


def main() -> None:
    sys.exit(run_cli())

"""Flat ``key=value`` run configuration with dotted sections (grid.N=256)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .grid import FracParams, GridError, default_grading
from .nonlinearity import BUILTINS, NonlinearityError, parse_nonlinearity

__all__ = ["ConfigError", "RunConfig", "KEYS", "ALIASES", "COMMANDS", "load_config",
           "parse_config_text", "build_config", "family_list"]

COMMANDS = (
    "apply", "xvalidate", "calibrate", "extend", "dtn", "solve", "stability",
    "energy-scan", "hamiltonian", "liouville-suite",
)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def _choice(*options):
    def conv(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return conv


def _float_list(text):
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def _int_list(text):
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _str(text):
    return str(text)


# key -> (converter, help)
KEYS = {
    "command": (_choice(*COMMANDS), "subcommand"),
    "s": (float, "fractional exponent in (0,1)"),
    "s_sweep": (_float_list, "exponents checked by xvalidate"),
    "n": (int, "boundary dimension (1 or 2)"),
    "grid.L": (float, "period or window length"),
    "grid.N": (int, "samples per axis"),
    "grid.X": (float, "extension height"),
    "grid.M": (int, "extension layers"),
    "grid.gamma": (float, "grading exponent"),
    "mode": (_choice("torus", "line"), "boundary model"),
    "f": (_str, "nonlinearity: builtin name or coefficients c0,c1,..."),
    "a_minus": (float, "far-field value at -infinity"),
    "a_plus": (float, "far-field value at +infinity"),
    "init": (_choice("tanh", "random", "constant"), "initial data for solves"),
    "init.width": (float, "width of the tanh initial profile"),
    "init.value": (float, "value of the constant initial data"),
    "operator": (_choice("fourier", "singular", "dtn"), "operator for apply"),
    "function": (_choice("cos1", "mix23", "expcos", "mix"), "battery function"),
    "input": (_str, "input data file (CSV with a value column, or FRLP binary)"),
    "cutoff_images": (int, "periodic images for the singular integral"),
    "tol": (float, "Newton tolerance"),
    "max_iter": (int, "Newton iteration cap"),
    "seed": (int, "random seed"),
    "trials": (int, "random trials per nonlinearity"),
    "family": (_str, "comma-separated nonlinearities for the suites"),
    "dims": (_int_list, "torus dimensions for the Liouville suite"),
    "suite": (_choice("liouville", "trichotomy"), "which suite to run"),
    "field": (_choice("linear", "layer", "extend"), "field for energy-scan"),
    "radii": (_float_list, "radii for energy-scan"),
    "calibration": (_str, "calibration record to load"),
    "out": (_str, "output path"),
    "format": (_choice("text", "csv", "binary"), "output format for --out"),
    "threads": (int, "worker threads for suites"),
}

ALIASES = {
    "N": "grid.N", "L": "grid.L", "X": "grid.X", "M": "grid.M", "gamma": "grid.gamma",
    "a-minus": "a_minus", "a-plus": "a_plus", "max-iter": "max_iter",
    "cutoff-images": "cutoff_images", "init-width": "init.width",
    "init-value": "init.value",
}

DEFAULTS = {
    "s": 0.5,
    "n": 1,
    "mode": "torus",
    "f": "zero",
    "init.width": 5.0,
    "init.value": 0.0,
    "operator": "fourier",
    "function": "cos1",
    "tol": 1e-10,
    "max_iter": 100,
    "seed": 0,
    "trials": 50,
    "family": "shifted_sine,cos_well",
    "dims": (1, 2),
    "suite": "liouville",
    "field": "linear",
    "format": "text",
}


def family_list(text: str) -> list:
    """Nonlinearities separated by ',' (or by ';' when polynomials are listed)."""
    sep = ";" if ";" in text else ","
    return [parse_nonlinearity(t) for t in text.split(sep) if t.strip()]


def canonical_key(key: str) -> str:
    key = key.strip()
    key = ALIASES.get(key, key)
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}", key)
    return key


@dataclass
class RunConfig:
    """Validated settings; ``explicit`` holds the keys given by the user."""

    values: dict
    explicit: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def command(self) -> str:
        return self.values["command"]

    def params(self, constants=None) -> FracParams:
        return FracParams(self["s"], self["n"], constants)

    def echo(self) -> dict:
        """Effective configuration, in key order, for embedding in reports."""
        return {k: self.values[k] for k in KEYS if k in self.values}


def parse_config_text(text: str) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped.

    A report written by the CLI can be fed back: when a line ``report=fraclap``
    is present, only ``config.*`` lines are read.
    """
    lines = text.splitlines()
    is_report = any(line.strip() == "report=fraclap" for line in lines)
    out = {}
    for num, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {num}: expected key=value")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if is_report:
            if not key.startswith("config."):
                continue
            key = key[len("config."):]
        if not key:
            raise ConfigError(f"line {num}: empty key")
        try:
            out[canonical_key(key)] = value
        except ConfigError as exc:
            raise ConfigError(f"line {num}: {exc}", exc.key) from None
    return out


def _convert(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        conv = KEYS[key][0]
        if not isinstance(value, str):
            out[key] = value
            continue
        try:
            out[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key}: {value!r} ({exc})", key) from None
    return out


def _validate(values: dict) -> None:
    try:
        params = FracParams(values["s"], values["n"])
    except GridError as exc:
        key = "s" if "s must" in str(exc) else "n"
        raise ConfigError(str(exc), key) from None
    mode = values["mode"]
    if mode == "line" and params.n != 1:
        raise ConfigError("line mode requires n = 1", "mode")
    for key in ("grid.L", "grid.X"):
        if key in values and not (values[key] > 0 and math.isfinite(values[key])):
            raise ConfigError(f"{key} must be positive", key)
    if "grid.N" in values:
        N = values["grid.N"]
        if N % 2:
            raise ConfigError("N must be even", "grid.N")
        if N < 8:
            raise ConfigError("N must be at least 8", "grid.N")
    if "grid.M" in values and values["grid.M"] < 8:
        raise ConfigError("M too small (need M >= 8)", "grid.M")
    if "grid.gamma" in values and values["grid.gamma"] < 1:
        raise ConfigError("gamma must be >= 1", "grid.gamma")
    for key in ("trials", "max_iter"):
        if values.get(key, 1) < 1:
            raise ConfigError(f"{key} must be >= 1", key)
    if values.get("tol", 1.0) <= 0:
        raise ConfigError("tol must be positive", "tol")
    try:
        parse_nonlinearity(values["f"])
        family_list(values["family"])
    except NonlinearityError as exc:
        raise ConfigError(str(exc), "f") from None

    command = values["command"]
    if command == "hamiltonian" or (command in ("solve", "stability") and mode == "line"):
        missing = [k for k in ("a_minus", "a_plus") if k not in values]
        if missing:
            raise ConfigError(
                f"{command} ({mode} mode) needs far-field keys: {', '.join(missing)}",
                missing[0],
            )
        if command == "hamiltonian" and not values["a_minus"] < values["a_plus"]:
            raise ConfigError("need a_minus < a_plus", "a_minus")


def _fill_grid_defaults(values: dict) -> None:
    n, mode = values["n"], values["mode"]
    alpha = 1.0 - 2.0 * values["s"]
    if mode == "line":
        values.setdefault("grid.L", 80.0)
        values.setdefault("grid.N", 512)
    else:
        values.setdefault("grid.L", 2.0 * math.pi)
        values.setdefault("grid.N", 256 if n == 1 else 32)
    N = values["grid.N"]
    values.setdefault("grid.X", max(0.5 * values["grid.L"], 8.0))
    values.setdefault("grid.M", N if n == 1 else max(8, (5 * N) // 2))
    values.setdefault("grid.gamma", default_grading(alpha))
    values.setdefault("init", "tanh" if mode == "line" else "random")


def build_config(raw: dict, command: str | None = None) -> RunConfig:
    """Convert, default and validate a mapping of canonical keys to strings."""
    raw = dict(raw)
    if command is not None:
        raw["command"] = command
    if "command" not in raw:
        raise ConfigError("missing key 'command'", "command")
    explicit = _convert(raw)
    values = dict(DEFAULTS)
    values.update(explicit)
    _command_defaults(values, explicit)
    _validate(values)
    _fill_grid_defaults(values)
    return RunConfig(values, explicit)


def _command_defaults(values: dict, explicit: dict) -> None:
    """Defaults that depend on the command; stored so reports reproduce runs."""
    command = values["command"]
    if command == "xvalidate" and "s_sweep" not in explicit:
        values["s_sweep"] = (values["s"],) if "s" in explicit else (0.25, 0.5, 0.75)
    if values.get("suite") == "trichotomy" and "family" not in explicit:
        values["family"] = ",".join(BUILTINS)
    if command == "energy-scan" and values["field"] == "layer":
        if "f" not in explicit:
            values["f"] = "pn_sine"
        values.setdefault("a_minus", -1.0)
        values.setdefault("a_plus", 1.0)


def load_config(path, overrides: dict | None = None, command: str | None = None) -> RunConfig:
    """Read a config file; ``overrides`` (canonical keys) win over file values."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    raw = parse_config_text(text)
    raw.update(overrides or {})
    return build_config(raw, command)

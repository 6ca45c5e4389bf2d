from __future__ import annotations

import math

import pytest

from fraclap.config import ConfigError, build_config, load_config, parse_config_text


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_hamiltonian_file(tmp_path):
    cfg = load_config(write(tmp_path, "command=hamiltonian\nf=zero\na_minus=0\na_plus=1\n"))
    assert cfg.command == "hamiltonian"
    assert cfg["a_minus"] == 0.0 and cfg["a_plus"] == 1.0


def test_exponent_out_of_range(tmp_path):
    with pytest.raises(ConfigError, match=r"s must lie in \(0,1\)") as exc:
        load_config(write(tmp_path, "command=solve\ns=1.5\n"))
    assert exc.value.key == "s"


def test_line_solve_needs_far_field():
    with pytest.raises(ConfigError, match="a_minus, a_plus") as exc:
        build_config({"f": "pn_sine", "mode": "line"}, command="solve")
    assert exc.value.key == "a_minus"


def test_unknown_key_is_an_error(tmp_path):
    with pytest.raises(ConfigError, match="line 2: unknown key"):
        load_config(write(tmp_path, "command=solve\ngrid.Q=3\n"))


def test_parse_error_names_line(tmp_path):
    with pytest.raises(ConfigError, match="line 3"):
        load_config(write(tmp_path, "command=solve\n# comment\nnot a pair\n"))


def test_invalid_value_names_key():
    with pytest.raises(ConfigError) as exc:
        build_config({"grid.N": "many"}, command="solve")
    assert exc.value.key == "grid.N"


@pytest.mark.parametrize("key, value", [("grid.N", "7"), ("grid.N", "4"), ("grid.M", "4"),
                                        ("grid.gamma", "0.5"), ("tol", "0"), ("n", "3"),
                                        ("f", "banana")])
def test_validation_rejects(key, value):
    with pytest.raises(ConfigError):
        build_config({key: value}, command="solve")


def test_overrides_win_and_aliases(tmp_path):
    path = write(tmp_path, "command=solve\ns=0.25\nN=64\n")
    cfg = load_config(path, {"s": "0.75"})
    assert cfg["s"] == 0.75 and cfg["grid.N"] == 64


def test_defaults_follow_mode():
    torus = build_config({}, command="solve")
    assert torus["grid.L"] == pytest.approx(2 * math.pi) and torus["init"] == "random"
    line = build_config({"mode": "line", "a_minus": "-1", "a_plus": "1"}, command="solve")
    assert line["grid.L"] == 80.0 and line["grid.N"] == 512 and line["init"] == "tanh"
    assert line["grid.gamma"] == 2.0


def test_report_is_a_config(tmp_path):
    text = "report=fraclap\ncommand=hamiltonian\nconfig.command=hamiltonian\nconfig.f=pn_sine\n" \
           "config.a_minus=-1.0\nconfig.a_plus=1.0\ngap=0.0\n"
    raw = parse_config_text(text)
    assert raw == {"command": "hamiltonian", "f": "pn_sine", "a_minus": "-1.0", "a_plus": "1.0"}


def test_echo_lists_every_effective_key():
    cfg = build_config({}, command="xvalidate")
    echo = cfg.echo()
    assert {"s", "n", "grid.N", "grid.M", "grid.X", "grid.gamma", "seed"} <= set(echo)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/run.cfg")

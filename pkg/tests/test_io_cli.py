import csv
import re

import numpy as np
import pytest

from kvdot import io
from kvdot.cli import (
    EXIT_GRADCHECK, EXIT_USAGE, emit_outputs, gradient_check, main, parse_cli,
)
from kvdot.errors import ConfigurationError
from kvdot.experiment import ErrorReport, ExperimentConfig, run_ladder
from kvdot.mesh import build_mesh
from kvdot.optimizer import ReconConfig

SCI = re.compile(r"^-?\d\.\d{6,}e[+-]\d+$")


# ---------------------------------------------------------------- files

def test_vtk_round_trip(tmp_path, mesh8, rng):
    values = rng.normal(size=mesh8.n_nodes) * 10.0 ** rng.integers(-8, 8, mesh8.n_nodes)
    path = tmp_path / "f.vtk"
    io.write_vtk(path, mesh8, {"u": values, "v": -values})
    points, cells, fields = io.read_vtk(path)
    np.testing.assert_array_equal(points[:, :2], mesh8.nodes)
    np.testing.assert_array_equal(cells, mesh8.triangles)
    np.testing.assert_array_equal(fields["u"], values)
    np.testing.assert_array_equal(fields["v"], -values)
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 2.0")
    assert f"CELL_TYPES {mesh8.n_triangles}\n5\n" in text


def test_vtk_rejects_wrong_length(tmp_path, mesh4):
    with pytest.raises(ConfigurationError):
        io.write_vtk(tmp_path / "bad.vtk", mesh4, {"u": np.zeros(3)})
    assert list(tmp_path.iterdir()) == []


def test_field_csv(tmp_path, mesh4, rng):
    values = rng.normal(size=mesh4.n_nodes)
    path = tmp_path / "f.csv"
    io.write_field_csv(path, mesh4, values)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["node_index", "x1", "x2", "value"]
    assert len(rows) == 26
    assert all(SCI.match(c) for r in rows[1:] for c in r[1:])
    np.testing.assert_allclose(io.read_field_csv(path), values, rtol=1e-12)


def test_table_header_only(tmp_path):
    path = tmp_path / "table.csv"
    io.write_table(path, [])
    assert path.read_text().splitlines() == ["tau,delta,E_qa,E_N,E_M,E_D"]


def test_table_one_row(tmp_path):
    path = tmp_path / "table.csv"
    io.write_table(path, [ErrorReport(16, 1.5e-2, 0.27, 0.01, 0.02, 0.003)])
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    cells = lines[1].split(",")
    assert cells[0] == "16"
    assert all(SCI.match(c) for c in cells[1:])
    assert float(cells[2]) == 0.27


def test_pgm(tmp_path, mesh4):
    path = tmp_path / "q.pgm"
    io.write_pgm(path, mesh4, mesh4.nodes[:, 0])
    data = path.read_bytes()
    header = b"P5\n5 5\n255\n"
    assert data.startswith(header)
    pixels = np.frombuffer(data[len(header):], dtype=np.uint8).reshape(5, 5)
    np.testing.assert_array_equal(pixels[0], [0, 64, 128, 191, 255])


def test_unwritable_path(tmp_path, mesh4):
    with pytest.raises(OSError) as info:
        io.write_vtk(tmp_path / "missing" / "f.vtk", mesh4)
    assert "missing" in str(info.value)


def test_read_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\ntau-levels = 4,8  # inline\nseed=3\n\n")
    assert io.read_config(path) == {"tau_levels": "4,8", "seed": "3"}
    path.write_text("seed 3\n")
    with pytest.raises(ConfigurationError):
        io.read_config(path)


# ---------------------------------------------------------------- parsing

def test_parse_experiment():
    cmd = parse_cli(["experiment", "--tau-levels", "4,8,16", "--theta", "example1", "--seed", "7"])
    assert cmd.name == "experiment"
    assert cmd.options["tau_levels"] == [4, 8, 16]
    assert cmd.options["theta"] == "example1"
    assert cmd.options["seed"] == 7


def test_parse_defaults_reproduce_example1():
    opts = parse_cli(["experiment"]).options
    assert opts["tau_levels"] == [4, 8, 16, 32]
    assert (opts["theta"], opts["seed"], opts["measurement_mode"]) == ("example1", 0, "single")
    assert opts["max_iters"] == 800


@pytest.mark.parametrize("argv", [
    ["reconstruct", "--tau", "7"],
    ["reconstruct", "--tau", "-4"],
    ["experiment", "--bogus"],
    ["experiment", "--theta", "fixed:-1"],
    ["experiment", "--tau-levels", "4,x"],
    [],
    ["launch"],
])
def test_parse_rejects(argv):
    with pytest.raises(ConfigurationError):
        parse_cli(argv)


def test_fixed_theta():
    assert parse_cli(["reconstruct", "--theta", "fixed:0.05"]).options["theta"] == 0.05


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("tau_levels = 4,8\nseed = 5\ntheta = fixed:0.1\nmeasurement_mode = six\n")
    cmd = parse_cli(["experiment", "--config", str(cfg), "--seed", "9"])
    assert cmd.config_path == str(cfg)
    assert cmd.options["tau_levels"] == [4, 8]
    assert cmd.options["theta"] == 0.1
    assert cmd.options["measurement_mode"] == "six"
    assert cmd.options["seed"] == 9


def test_bad_config_value(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("seed = many\n")
    with pytest.raises(ConfigurationError):
        parse_cli(["experiment", "--config", str(cfg)])


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("KVDOT_OUTPUT_DIR", str(tmp_path / "env"))
    assert parse_cli(["forward"]).options["output_dir"] == str(tmp_path / "env")
    assert parse_cli(["forward", "--output-dir", "x"]).options["output_dir"] == "x"


# ---------------------------------------------------------------- commands

def test_main_usage_errors(capsys):
    assert main(["reconstruct", "--tau", "7"]) == EXIT_USAGE
    assert "tau must be even" in capsys.readouterr().err
    assert main(["experiment", "--nope"]) == EXIT_USAGE


def test_main_help(capsys):
    assert main(["experiment", "--help"]) == 0
    out = capsys.readouterr().out
    for flag in ("--tau-levels", "--theta", "--seed", "--measurement-mode", "--config", "--output-dir"):
        assert flag in out


def test_main_forward(tmp_path, capsys):
    assert main(["forward", "--tau", "8", "--output-dir", str(tmp_path)]) == 0
    _, _, fields = io.read_vtk(tmp_path / "u.vtk")
    assert fields["u"].shape == (81,)
    assert "tau=8" in capsys.readouterr().out


def test_main_reconstruct(tmp_path):
    rc = main(["reconstruct", "--tau", "8", "--max-iters", "5", "--checkpoint-every", "2",
               "--pgm", "--output-dir", str(tmp_path)])
    assert rc == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"table.csv", "q.vtk", "a.vtk", "diff_q.vtk", "diff_a.vtk", "log.csv", "q.pgm",
            "a.pgm", "q_iter2.csv"} <= names


def test_main_experiment(tmp_path):
    rc = main(["experiment", "--tau-levels", "4,8", "--max-iters", "5", "--output-dir", str(tmp_path)])
    assert rc == 0
    rows = (tmp_path / "table.csv").read_text().splitlines()
    assert rows[0] == "tau,delta,E_qa,E_N,E_M,E_D"
    assert [r.split(",")[0] for r in rows[1:]] == ["4", "8"]
    for tau in (4, 8):
        assert (tmp_path / f"tau{tau}" / "q.vtk").exists()
        assert (tmp_path / f"tau{tau}" / "log.csv").exists()


def test_main_experiment_rejects_bad_ladder(tmp_path):
    assert main(["experiment", "--tau-levels", "4,6", "--output-dir", str(tmp_path)]) == EXIT_USAGE


def test_outputs_byte_stable(tmp_path):
    config = ExperimentConfig(tau_levels=(4,), recon=ReconConfig(max_iters=5))
    a = emit_outputs(run_ladder(config), tmp_path / "a")
    b = emit_outputs(run_ladder(config), tmp_path / "b")
    for rel in ("table.csv", "tau4/q.vtk", "tau4/log.csv"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_gradcheck(capsys):
    assert gradient_check(tau=4, samples=3) <= 1e-5
    assert main(["gradcheck", "--tau", "4", "--samples", "2"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_failure_code(monkeypatch):
    monkeypatch.setattr("kvdot.cli.gradient_check", lambda *a, **k: 1.0)
    assert main(["gradcheck", "--tau", "4"]) == EXIT_GRADCHECK

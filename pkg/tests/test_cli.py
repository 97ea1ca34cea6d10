import csv
import json

import numpy as np
import pytest
import yaml

from sierl import shapes
from sierl.assembly import Material
from sierl.circuit import PortSpec
from sierl.cli import DEFAULTS_YAML, load_config, main, parse_config, run
from sierl.errors import ConfigError
from sierl.extract import build_model, frequency_sweep
from sierl.mesh import make_mesh, save_mesh


def write_config(tmp_path, body, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(body))
    return path


@pytest.fixture
def prism_run(tmp_path):
    save_mesh(shapes.prism(), tmp_path / "prism.msh")
    body = {
        "mesh": {"path": "prism.msh", "scale": 1e-6},
        "material": {"sigma": 5.8e7},
        "frequencies": {"list": [1e9, 1e10]},
        "ports": [{"name": "p", "source": {"ids": [0]}, "sink": {"ids": [1]}}],
        "solver": {"method": "direct"},
        "output": {"directory": "out"},
    }
    return tmp_path, body


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_prism_run_writes_outputs(prism_run, capsys):
    tmp, body = prism_run
    assert main(["extract", str(write_config(tmp, body))]) == 0
    rows = read_csv(tmp / "out" / "impedance.csv")
    assert rows[0] == ["freq_hz", "R_p_p", "L_p_p", "valid"]
    assert len(rows) == 3 and all(len(r) == 4 for r in rows)
    report = json.loads((tmp / "out" / "report.json").read_text())
    assert report["mesh"]["l"] == report["mesh"]["b"] - report["mesh"]["n"] + report["mesh"]["s"]
    assert report["mesh"]["l"] == 6
    assert sorted(report["field_files"]) == ["fields_p_1e+09Hz.vtk", "fields_p_1e+10Hz.vtk"]
    assert "impedance.csv" in capsys.readouterr().out


def test_values_round_trip_exactly(prism_run):
    tmp, body = prism_run
    assert main(["extract", str(write_config(tmp, body))]) == 0
    rows = read_csv(tmp / "out" / "impedance.csv")
    p = shapes.prism()
    m = make_mesh(p.vertices * 1e-6, p.triangles)
    model = build_model(m, [PortSpec("p", [0], [1])], Material(5.8e7))
    res = frequency_sweep(model, [1e9, 1e10], method="direct")
    for k in range(2):
        assert float(rows[k + 1][1]) == res.R[k, 0, 0]
        assert float(rows[k + 1][2]) == res.L[k, 0, 0]
        assert rows[k + 1][3] == "true"


def test_runs_are_deterministic(prism_run):
    tmp, body = prism_run
    cfg = write_config(tmp, body)
    main(["extract", str(cfg)])
    first = (tmp / "out" / "impedance.csv").read_text()
    vtk = (tmp / "out" / "fields_p_1e+09Hz.vtk").read_text()
    main(["extract", str(cfg)])
    assert (tmp / "out" / "impedance.csv").read_text() == first
    assert (tmp / "out" / "fields_p_1e+09Hz.vtk").read_text() == vtk


def test_vtk_content(prism_run):
    tmp, body = prism_run
    main(["extract", str(write_config(tmp, body))])
    lines = (tmp / "out" / "fields_p_1e+09Hz.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII" and lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert "POINTS 6 double" in lines
    assert "CELLS 8 32" in lines and "CELL_TYPES 8" in lines and "CELL_DATA 8" in lines
    i = lines.index("SCALARS potential_V double 1")
    phi = [float(v) for v in lines[i + 2 : i + 10]]
    assert phi[1] == 0.0 and phi[0] == pytest.approx(1.0)
    assert "SCALARS current_mag_A_per_m double 1" in lines


def test_four_port_csv_columns(tmp_path):
    wire = shapes.bar(4e-6, 1e-6, 1e-6, 1e-6)
    save_mesh(shapes.array_of(wire, (1, 4, 1), (0, 3e-6, 0)), tmp_path / "wires.msh")
    ports = []
    for k in range(4):
        y0, y1 = 3e-6 * k - 1e-7, 3e-6 * k + 1.1e-6
        ports.append({
            "name": f"w{k}",
            "source": {"box": [[-1e-7, y0, -1e-7], [1e-7, y1, 1.1e-6]]},
            "sink": {"box": [[3.9e-6, y0, -1e-7], [4.1e-6, y1, 1.1e-6]]},
        })
    body = {
        "mesh": {"path": "wires.msh"},
        "material": {"sigma": 5.8e7},
        "frequencies": {"list": [1e9]},
        "ports": ports,
        "output": {"directory": "out", "fields": False},
    }
    assert main(["extract", str(write_config(tmp_path, body))]) == 0
    rows = read_csv(tmp_path / "out" / "impedance.csv")
    assert len(rows[0]) == 34
    assert rows[0][1] == "R_w0_w0" and rows[0][17] == "L_w0_w0" and rows[0][-1] == "valid"


def test_oracle_reports_deviation(prism_run):
    tmp, body = prism_run
    body["solver"] = {"method": "gmres", "tol": 1e-6}
    assert main(["extract", str(write_config(tmp, body)), "--oracle", "mna"]) == 0
    report = json.loads((tmp / "out" / "report.json").read_text())
    assert report["oracle"]["kind"] == "mna"
    assert report["oracle"]["max_relative_deviation"] < 1e-4


def test_command_line_overrides(prism_run):
    tmp, body = prism_run
    body["solver"] = {}
    cfg = load_config(write_config(tmp, body), {"freq": [3e9], "backend": "pfft", "tol": 1e-4})
    assert cfg.frequencies.tolist() == [3e9]
    assert cfg.backend == "pfft" and cfg.tol == 1e-4


def test_print_defaults(capsys):
    assert main(["extract", "--print-defaults"]) == 0
    out = capsys.readouterr().out
    assert out == DEFAULTS_YAML
    d = yaml.safe_load(out)
    assert d["solver"]["backend"] == "dense"
    assert d["solver"]["tol"] == 1e-3


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_config_errors_exit_two(prism_run, capsys):
    tmp, body = prism_run
    bad = dict(body, solver={"backend": "fmm"})
    assert main(["extract", str(write_config(tmp, bad))]) == 2
    assert error_of(capsys)["error"] == "ConfigError"
    bad = dict(body, colour="red")
    assert main(["extract", str(write_config(tmp, bad))]) == 2
    assert "colour" in error_of(capsys)["message"]
    assert main(["extract", str(tmp / "missing.yaml")]) == 2
    assert error_of(capsys)["error"] == "ConfigError"
    assert main(["extract"]) == 2


def test_library_errors_reported(prism_run, capsys):
    tmp, body = prism_run
    body["ports"] = [{"name": "p", "source": {"ids": [0]}, "sink": {"ids": [0]}}]
    assert main(["extract", str(write_config(tmp, body))]) == 2
    assert error_of(capsys)["error"] == "OverlappingPorts"


def test_missing_mesh_is_io_error(prism_run, capsys):
    tmp, body = prism_run
    body["mesh"]["path"] = "nowhere.msh"
    assert main(["extract", str(write_config(tmp, body))]) == 3
    assert error_of(capsys)["error"] == "FileNotFoundError"


@pytest.mark.parametrize(
    "patch",
    [
        {"material": {"sigma": -1}},
        {"frequencies": {"list": [2e9, 1e9]}},
        {"frequencies": {"list": None, "start": 0, "stop": 1e9, "spacing": "log"}},
        {"ports": []},
        {"ports": [{"name": "a b", "source": {"ids": [0]}, "sink": {"ids": [1]}}]},
        {"solver": {"method": "direct", "backend": "pfft"}},
        {"solver": {"tol": 2}},
        {"oracle": "spice"},
    ],
)
def test_parse_config_rejects(prism_run, patch):
    _, body = prism_run
    data = {**body, **patch}
    with pytest.raises(ConfigError):
        parse_config(data)


def test_frequency_ranges(prism_run):
    _, body = prism_run
    cfg = parse_config({**body, "frequencies": {"start": 1e9, "stop": 1e11, "points": 3}})
    assert np.allclose(cfg.frequencies, [1e9, 1e10, 1e11])
    cfg = parse_config({**body, "frequencies": {"start": 1e9, "stop": 3e9, "points": 3, "spacing": "lin"}})
    assert np.allclose(cfg.frequencies, [1e9, 2e9, 3e9])


def test_run_returns_report(prism_run):
    tmp, body = prism_run
    report = run(load_config(write_config(tmp, body)))
    assert report["failed"] == [] and report["valid"].tolist() == [True, True]
    assert 0 < report["mesh"]["loop_to_mna_ratio"] < 1

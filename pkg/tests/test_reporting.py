import json

import jsonschema
import numpy as np
import pytest

from conftest import left_right_problem, unit_square
from test_calibration import small_scenario
from thermocal.calibration import StudyRecord
from thermocal.config import load_schema
from thermocal.exceptions import CalibrationError
from thermocal.fem import assemble, solve
from thermocal.mesh import SensorSet
from thermocal.reporting import (OutputError, atomic_write_text, emit_field_vtk, emit_report,
                                 emit_study_csv, fit_loglog_slope, format_field_csv,
                                 format_gnuplot, format_sensor_csv, study_slopes)
from thermocal.synthetic import NoiseSpec

# mean relative error of lambda_1 in the published example-1 convergence plot
FIG4_EPS1 = [(1, 7.365351520800415613e-04), (5, 3.774890516199529990e-04),
             (10, 2.609794287904584854e-04), (50, 9.740666956990822129e-05),
             (100, 7.507652967076603931e-05), (500, 3.546027706560411162e-05),
             (1000, 2.239143273328837372e-05), (5000, 1.297876602647626835e-05)]


def test_slope_exact_power_law():
    pts = [(n, n ** -0.5) for n in (1, 10, 100, 1000, 10000)]
    slope, intercept, half = fit_loglog_slope(pts)
    assert abs(slope + 0.5) <= 1e-12
    assert abs(intercept) <= 1e-12
    assert half <= 1e-12


def test_slope_constant_errors():
    slope, _, _ = fit_loglog_slope([(n, 3e-4) for n in (1, 2, 4, 8)])
    assert abs(slope) <= 1e-12


def test_slope_published_example1_data():
    slope, _, half = fit_loglog_slope(FIG4_EPS1)
    # least squares gives -0.493; the quoted -0.47 lies inside its 95 % interval
    assert abs(slope + 0.47) <= 0.03
    assert slope - half <= -0.47 <= slope + half


@pytest.mark.parametrize("pts", [[(1, 1.0), (2, 0.5), (4, 0.3)],
                                 [(1, 1.0), (2, 0.0), (4, 0.3), (8, 0.2)],
                                 [(0, 1.0), (2, 0.5), (4, 0.3), (8, 0.2)]])
def test_slope_invalid_points(pts):
    with pytest.raises(CalibrationError):
        fit_loglog_slope(pts)


def _record():
    rec = StudyRecord("s", "ex", 1.0, [1, 10, 100, 1000, 10000], [0, 1], ["a"])
    for n in rec.n_values:
        for s in rec.seeds:
            rec.errors[(n, s)] = {"a": (1 + 0.1 * s) * n ** -0.5}
    return rec


def test_study_slope_excludes_single_sample():
    rec = _record()
    rec.errors[(1, 0)] = rec.errors[(1, 1)] = {"a": 1e3}  # wild single-sample outlier
    slopes = study_slopes(rec)
    assert abs(slopes["a"]["slope"] + 0.5) <= 1e-12
    assert study_slopes(rec, exclude_n=())["a"]["slope"] < -0.9


def test_study_csv_deterministic(tmp_path):
    rec = _record()
    emit_study_csv(tmp_path / "a.csv", rec)
    emit_study_csv(tmp_path / "b.csv", rec)
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0] == "N,parameter,mean_rel_error,std_rel_error,n_seeds"
    n, p, m, s, k = lines[1].split(",")
    assert (n, p, k) == ("1", "a", "2") and float(m) == 1.05


def test_empty_study_writes_nothing(tmp_path):
    rec = StudyRecord("s", "ex", 1.0, [1, 2], [0], ["a"])
    rec.failures[(1, 0)] = "boom"
    with pytest.raises(CalibrationError):
        emit_study_csv(tmp_path / "out.csv", rec)
    assert list(tmp_path.iterdir()) == []


def test_gnuplot_script_plots_every_parameter():
    rec = _record()
    rec.parameters.append("b")
    text = format_gnuplot(rec, "study.csv")
    assert "set logscale xy" in text
    assert "'a'" in text and "'b'" in text


@pytest.fixture(scope="module")
def calibration_result():
    return small_scenario().run(NoiseSpec(1.0, 3), 5)


def test_report_byte_identical_and_schema_valid(tmp_path, calibration_result):
    emit_report(tmp_path / "a.json", calibration_result)
    emit_report(tmp_path / "b.json", calibration_result)
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    data = json.loads(a)
    jsonschema.validate(data, load_schema("report.schema.json"))
    assert [p["name"] for p in data["parameters"]] == ["lambda_1", "lambda_2"]
    assert "wall_time_s" not in data


def test_report_with_wall_time_still_valid(tmp_path, calibration_result):
    emit_report(tmp_path / "r.json", calibration_result, include_wall_time=True)
    data = json.loads((tmp_path / "r.json").read_text())
    jsonschema.validate(data, load_schema("report.schema.json"))
    assert data["wall_time_s"] >= 0


def _patch_field():
    mesh = unit_square(6)
    return solve(assemble(mesh, left_right_problem(1.0, 290.0, 300.0)))


def test_vtk_reimport_preserves_nodes(tmp_path):
    meshio = pytest.importorskip("meshio")
    field = _patch_field()
    emit_field_vtk(tmp_path / "f.vtk", field)
    m = meshio.read(tmp_path / "f.vtk")
    assert len(m.points) == field.mesh.n_nodes
    assert np.allclose(np.ravel(m.point_data["temperature_K"]), field.values)
    assert np.array_equal(m.cells[0].data, field.mesh.triangles)


def test_field_csv_layout():
    field = _patch_field()
    lines = format_field_csv(field).splitlines()
    assert lines[0] == "node_id,x,y,temperature_K"
    assert len(lines) == field.mesh.n_nodes + 1
    k, x, y, t = lines[1].split(",")
    assert float(t) == field.values[int(k)]


def test_sensor_csv_layout():
    field = _patch_field()
    sensors = SensorSet.from_points([[0.5, 0.5]], ids=["mid"], groups=["g"])
    lines = format_sensor_csv([field], sensors, ["op0"]).splitlines()
    assert lines[1].startswith("op0,mid,g,0.5,0.5,")
    assert abs(float(lines[1].split(",")[-1]) - 295.0) < 1e-10


def test_atomic_write_failure_names_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError, match="file"):
        atomic_write_text(blocker / "sub" / "out.txt", "data")

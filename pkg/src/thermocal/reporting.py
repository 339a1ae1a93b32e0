"""Error metrics and deterministic file output.

Every writer renders its full text in memory first and then replaces the
target atomically, so a failure never leaves a partial file behind. Floats
go through ``%.17g`` in CSV/VTK and through ``repr`` (shortest round-trip
form) in JSON; both are exact and stable across runs.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .exceptions import CalibrationError, ThermocalError
from .mesh import AllNodes, target_ids

STUDY_CSV_HEADER = "N,parameter,mean_rel_error,std_rel_error,n_seeds"
VTK_TRIANGLE = 5


class OutputError(ThermocalError, OSError):
    """A file could not be written; the message names the path."""


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def g17(x):
    return "%.17g" % x


def fit_loglog_slope(points):
    """Least-squares line through ``(log10 N, log10 eps)``.

    Parameters
    ----------
    points : iterable of (N, eps) pairs, at least 4, all positive.

    Returns
    -------
    (slope, intercept, half_width)
        ``half_width`` is the 95 % Student-t half-width of the slope
        estimated from the residual variance (0 for an exact fit).
    """
    pts = [(float(n), float(e)) for n, e in points]
    if len(pts) < 4:
        raise CalibrationError(f"slope fit needs at least 4 points, got {len(pts)}")
    if any(not (n > 0 and e > 0) for n, e in pts):
        raise CalibrationError("slope fit needs positive N and error values")
    x = np.log10([p[0] for p in pts])
    y = np.log10([p[1] for p in pts])
    if np.ptp(x) == 0:
        raise CalibrationError("slope fit needs at least two distinct N values")
    fit = stats.linregress(x, y)
    t = stats.t.ppf(0.975, len(pts) - 2)
    return float(fit.slope), float(fit.intercept), float(t * fit.stderr)


def study_slopes(record, exclude_n=(1,)):
    """Fitted decay rate per parameter; N values in ``exclude_n`` are left out.

    Parameters that do not have 4 usable points map to ``None``.
    """
    out = {}
    for p in record.parameters:
        pts = [(n, e) for n, e in record.mean_errors(p) if n not in exclude_n and e > 0]
        if len({n for n, _ in pts}) < 4:
            out[p] = None
            continue
        slope, intercept, half = fit_loglog_slope(pts)
        out[p] = {"slope": slope, "intercept": intercept, "half_width": half}
    return out


# calibration report ---------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            raise CalibrationError("report contains a non-finite number")
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def report_dict(result, include_wall_time=False, extra=None):
    """Plain-data view of a :class:`CalibrationResult`."""
    spec = result.parameters
    params = []
    for slot in spec.slots:
        entry = {"name": slot.name, "value": result.theta[slot.name],
                 "lower": slot.lower, "upper": slot.upper,
                 "initial": slot.initial, "scale": slot.scale}
        if slot.true is not None:
            entry["true"] = slot.true
            entry["relative_error"] = abs(result.theta[slot.name] - slot.true) / abs(slot.true)
        params.append(entry)
    out = {
        "version": __version__,
        "parameters": params,
        "fixed": dict(spec.fixed),
        "tied": dict(spec.tied),
        "cost_K2": result.cost,
        "iterations": result.iterations,
        "termination": result.termination,
        "cost_trace": list(result.cost_trace),
        "n_cost_evaluations": result.n_cost_evaluations,
        "n_forward_solves": result.n_forward_solves,
        "warnings": list(result.warnings),
        "provenance": result.provenance,
    }
    if include_wall_time:
        out["wall_time_s"] = result.wall_time
    if extra:
        out.update(extra)
    return _jsonable(out)


def dumps(data):
    return json.dumps(_jsonable(data), indent=2, sort_keys=False, allow_nan=False) + "\n"


def emit_report(path, result, include_wall_time=False, extra=None):
    """Write the JSON calibration report. Byte-identical for identical results
    unless ``include_wall_time`` is set."""
    return atomic_write_text(path, dumps(report_dict(result, include_wall_time, extra)))


def emit_json(path, data):
    return atomic_write_text(path, dumps(data))


# convergence study ----------------------------------------------------------

def format_study_csv(record):
    rows = record.summary()
    if not rows:
        raise CalibrationError("study has no successful replications; nothing to write")
    lines = [STUDY_CSV_HEADER]
    lines += [f"{n},{p},{g17(m)},{g17(s)},{k}" for n, p, m, s, k in rows]
    return "\n".join(lines) + "\n"


def emit_study_csv(path, record):
    """Write ``N,parameter,mean_rel_error,std_rel_error,n_seeds`` rows."""
    return atomic_write_text(path, format_study_csv(record))


def study_dict(record, exclude_n=(1,)):
    return {
        "version": __version__,
        "study_id": record.study_id,
        "example_id": record.example_id,
        "sigma_K": record.sigma,
        "n_values": list(record.n_values),
        "seeds": list(record.seeds),
        "parameters": list(record.parameters),
        "slope_excludes_n": list(exclude_n),
        "slopes": study_slopes(record, exclude_n),
        "failure_count": record.failure_count,
        "failures": [{"N": n, "seed": s, "message": m}
                     for (n, s), m in sorted(record.failures.items())],
        "terminations": [{"N": n, "seed": s, "termination": t}
                         for (n, s), t in sorted(record.terminations.items())],
    }


def format_gnuplot(record, csv_name, output="study.png"):
    """Gnuplot script drawing mean relative error over N on log-log axes."""
    lines = [
        "# relative parameter error over number of perturbed samples",
        "set terminal pngcairo size 800,600",
        f"set output '{output}'",
        "set datafile separator ','",
        "set logscale xy",
        "set format y '10^{%L}'",
        "set xlabel 'N'",
        "set ylabel 'mean relative error'",
        "set key top right",
        f"set title '{record.example_id}: sigma = {g17(record.sigma)} K'",
    ]
    plots = [f"'{csv_name}' using 1:(strcol(2) eq '{p}' ? $3 : 1/0) "
             f"with linespoints title '{p}'" for p in record.parameters]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def emit_gnuplot(path, record, csv_name, output=None):
    output = output or Path(csv_name).with_suffix(".png").name
    return atomic_write_text(path, format_gnuplot(record, csv_name, output))


# fields -----------------------------------------------------------------------

def format_vtk(field, title="thermocal temperature field"):
    """Legacy ASCII VTK unstructured grid with nodal temperature and cell regions."""
    mesh = field.mesh
    n, m = mesh.n_nodes, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out += [f"{g17(x)} {g17(y)} 0" for x, y in mesh.nodes]
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {m}")
    out += [str(VTK_TRIANGLE)] * m
    out += [f"CELL_DATA {m}", "SCALARS region int 1", "LOOKUP_TABLE default"]
    out += [str(int(r)) for r in mesh.regions]
    out += [f"POINT_DATA {n}", "SCALARS temperature_K double 1", "LOOKUP_TABLE default"]
    out += [g17(v) for v in field.values]
    return "\n".join(out) + "\n"


def emit_field_vtk(path, field):
    return atomic_write_text(path, format_vtk(field))


def format_field_csv(field):
    out = ["node_id,x,y,temperature_K"]
    out += [f"{k},{g17(x)},{g17(y)},{g17(t)}"
            for k, ((x, y), t) in enumerate(zip(field.mesh.nodes, field.values))]
    return "\n".join(out) + "\n"


def emit_field_csv(path, field):
    return atomic_write_text(path, format_field_csv(field))


def format_sensor_csv(fields, targets, op_ids):
    """One row per (operating point, sensor) with the interpolated temperature."""
    mesh = fields[0].mesh
    P = targets.interpolation_matrix(mesh)
    ids = target_ids(targets, mesh)
    if isinstance(targets, AllNodes):
        pos = mesh.nodes
        groups = [""] * mesh.n_nodes
    else:
        pos = targets.positions
        groups = [g or "" for g in targets.groups]
    out = ["op_id,sensor_id,group,x,y,temperature_K"]
    for op, f in zip(op_ids, fields):
        vals = P @ f.values
        out += [f"{op},{i},{g},{g17(x)},{g17(y)},{g17(t)}"
                for i, g, (x, y), t in zip(ids, groups, pos, vals)]
    return "\n".join(out) + "\n"


def emit_sensor_csv(path, fields, targets, op_ids):
    return atomic_write_text(path, format_sensor_csv(fields, targets, op_ids))

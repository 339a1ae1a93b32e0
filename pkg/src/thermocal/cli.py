"""``thermocal`` command-line interface.

Exit codes: 0 success, 1 usage or configuration error (including invalid
physical inputs), 2 numerical failure (solver errors and calibrations that
end without convergence; the report is still written), 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__, reporting
from .calibration import CalibrationProblem, calibrate, convergence_study, validate
from .exceptions import (CalibrationError, ConfigError, MeshError, ProblemError, SampleError,
                         SolverError, ThermocalError)
from .fem import heat_balance
from .mesh import target_ids
from .msh import write_msh
from .synthetic import SampleSet, split

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("thermocal")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (default: from the config)")
    common.add_argument("--seed", type=_u64, help="noise seed (overrides the config)")
    common.add_argument("--samples", type=_positive, help="samples per operating point")
    common.add_argument("--threads", type=_positive, help="worker threads (env THERMOCAL_THREADS)")
    common.add_argument("--quiet", action="store_true", help="only print errors")

    parser = _Parser(prog="thermocal", description="Calibrate thermal conductivities of 2D heat conduction models.")
    parser.add_argument("--version", action="version", version=f"thermocal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("mesh", parents=[common], help="build the mesh and export it")
    fwd = sub.add_parser("forward", parents=[common], help="solve and export fields")
    fwd.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                     help="parameter value (default: the configured true value)")
    sub.add_parser("synth", parents=[common], help="generate a synthetic sample set")
    cal = sub.add_parser("calibrate", parents=[common], help="estimate parameters, write a report")
    cal.add_argument("--samples-file", type=Path, help="sample CSV (default: synthesize)")
    sub.add_parser("validate", parents=[common], help="calibrate on a split and score the rest")
    sub.add_parser("study", parents=[common], help="convergence study over N and seeds")
    return parser


def _threads(args):
    if args.threads:
        return args.threads
    env = os.environ.get("THERMOCAL_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"THERMOCAL_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise UsageError("THERMOCAL_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _out_dir(args, cfg):
    return args.out or Path(cfg.data["output"]["directory"])


def _n_samples(args, cfg):
    return args.samples or cfg.data["samples"]["N"]


def _parse_params(items, parameters):
    theta = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects NAME=VALUE, got {item!r}")
        try:
            theta[name] = float(value)
        except ValueError:
            raise UsageError(f"--param {name}: not a number: {value!r}") from None
    unknown = set(theta) - set(parameters.names)
    if unknown:
        raise UsageError(f"--param: unknown parameter(s) {sorted(unknown)}")
    for slot in parameters.slots:
        if slot.name not in theta:
            if slot.true is None:
                raise UsageError(f"no value for {slot.name}: give --param or a configured true value")
            theta[slot.name] = slot.true
    return theta


def cmd_mesh(args, cfg):
    mesh = cfg.build_mesh()
    out = _out_dir(args, cfg)
    write_msh(mesh, out / "mesh.msh")
    info = {"version": __version__, "n_nodes": mesh.n_nodes, "n_triangles": mesh.n_triangles,
            "mesh_sha256": mesh.digest(),
            "regions": {name: {"tag": tag, "area_m2": mesh.region_area(tag)}
                        for name, tag in sorted(mesh.region_names.items(), key=lambda kv: kv[1])},
            "boundaries": dict(sorted(mesh.boundary_names.items(), key=lambda kv: kv[1]))}
    reporting.emit_json(out / "mesh.json", info)
    _say(args, f"mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles -> {out}")


def cmd_forward(args, cfg):
    mesh = cfg.build_mesh()
    model = cfg.model(mesh)
    parameters = cfg.parameters()
    theta = _parse_params(args.param, parameters)
    fields = model.solve_all(parameters.expand(theta))
    out = _out_dir(args, cfg)
    ops = [op.id for op in model.operating_points]
    balance = {}
    for op, field in zip(ops, fields):
        reporting.emit_field_vtk(out / f"field_{op}.vtk", field)
        reporting.emit_field_csv(out / f"field_{op}.csv", field)
        balance[op] = heat_balance(field)
    reporting.emit_sensor_csv(out / "sensors.csv", fields, cfg.targets(mesh), ops)
    reporting.emit_json(out / "forward.json", {"version": __version__, "parameters": theta,
                                               "mesh_sha256": mesh.digest(), "heat_balance_W": balance})
    _say(args, f"forward: {len(fields)} operating point(s) -> {out}")


def _synthesize(args, cfg, scenario):
    return scenario.synthesize(cfg.noise(args.seed), _n_samples(args, cfg))


def cmd_synth(args, cfg):
    scenario = cfg.scenario()
    samples = _synthesize(args, cfg, scenario)
    out = _out_dir(args, cfg)
    reporting.atomic_write_text(out / "samples.csv", samples.to_csv())
    reporting.atomic_write_text(out / "samples.provenance.json", samples.provenance_json())
    _say(args, f"synth: {samples.n_rows} rows x {samples.n_sensors} targets -> {out}")


def _calibrate(scenario, samples, cfg):
    problem = CalibrationProblem(scenario.model, scenario.parameters, samples, scenario.targets,
                                 rel_step=scenario.optimizer.fd_rel_step)
    return calibrate(problem, scenario.optimizer)


def _summary(result):
    return ", ".join(f"{k}={v:.6g}" for k, v in result.theta.items())


def _termination_code(result):
    if result.termination != "Converged":
        log.warning("calibration ended with %s", result.termination)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_calibrate(args, cfg):
    scenario = cfg.scenario()
    if args.samples_file:
        with open(args.samples_file, encoding="utf-8") as fh:
            samples = SampleSet.from_csv(fh.read(), {"source": str(args.samples_file)})
        if samples.sensor_ids != target_ids(scenario.targets, scenario.model.mesh):
            raise SampleError("sample CSV sensor ids do not match the configured sensors")
        if samples.op_ids != tuple(op.id for op in scenario.model.operating_points):
            raise SampleError("sample CSV operating points do not match the configuration")
    else:
        samples = _synthesize(args, cfg, scenario)
    result = _calibrate(scenario, samples, cfg)
    out = _out_dir(args, cfg)
    include = cfg.data["output"]["include_wall_time"]
    reporting.emit_report(out / "report.json", result, include, {"config": cfg.name})
    _say(args, f"calibrate: {result.termination} after {result.iterations} iterations: {_summary(result)}")
    return _termination_code(result)


def cmd_validate(args, cfg):
    scenario = cfg.scenario()
    samples = _synthesize(args, cfg, scenario)
    seed = cfg.noise(args.seed).seed
    cal, val = split(samples, cfg.data["samples"]["calibration_fraction"], seed)
    result = _calibrate(scenario, cal, cfg)
    metrics = validate(scenario.model, scenario.parameters, result.theta, val, scenario.targets)
    out = _out_dir(args, cfg)
    include = cfg.data["output"]["include_wall_time"]
    reporting.emit_report(out / "report.json", result, include, {"config": cfg.name})
    reporting.emit_json(out / "validation.json", {
        "version": __version__, "config": cfg.name, "seed": seed,
        "n_calibration_rows": cal.n_rows, "n_validation_rows": val.n_rows,
        "theta": result.theta, "relative_temperature_error": metrics})
    _say(args, f"validate: mean relative temperature error {metrics['overall']:.3e} ({metrics['temperature_scale']})")
    return _termination_code(result)


def cmd_study(args, cfg):
    scenario = cfg.scenario()
    n_values, seeds, exclude = cfg.study()
    if args.seed is not None:
        seeds = [args.seed + i for i in range(len(seeds))]
    if args.samples:
        n_values = [args.samples]
    record = convergence_study(scenario, n_values, seeds, cfg.noise().sigma,
                               threads=_threads(args), study_id=cfg.name)
    out = _out_dir(args, cfg)
    reporting.emit_study_csv(out / "study.csv", record)
    reporting.emit_gnuplot(out / "study.gp", record, "study.csv")
    reporting.emit_json(out / "study.json", reporting.study_dict(record, exclude))
    _say(args, f"study: {len(record.errors)} runs, {record.failure_count} failed -> {out}")
    if record.failure_count:
        log.warning("%d replication(s) failed", record.failure_count)


COMMANDS = {"mesh": cmd_mesh, "forward": cmd_forward, "synth": cmd_synth,
            "calibrate": cmd_calibrate, "validate": cmd_validate, "study": cmd_study}


def main(argv=None):
    """Entry point; returns the process exit code."""
    from .config import load_config

    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        code = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"thermocal: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except reporting.OutputError as exc:
        print(f"thermocal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, MeshError, ProblemError) as exc:
        print(f"thermocal: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, CalibrationError, SampleError, ThermocalError) as exc:
        print(f"thermocal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        where = f" {exc.filename}" if getattr(exc, "filename", None) else ""
        print(f"thermocal: I/O error:{where} {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""JSON run configuration: schema validation, defaults and object construction.

Temperatures in configuration files are in degrees Celsius and are
converted to kelvin here; everything downstream works in kelvin.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema

from .calibration import ParameterSlot, ParameterSpec, Scenario
from .exceptions import CalibrationError, ConfigError, MeshError, ThermocalError
from .fem import BoundaryCondition, ForwardModel, OperatingPoint, ProblemSpec
from .geometry import MachineGeometry, build_example1, build_example2, build_machine_quadrant
from .mesh import ALL_NODES, Sensor, SensorSet
from .msh import read_msh
from .optimize import OptimizerConfig
from .synthetic import NoiseSpec

KELVIN_OFFSET = 273.15

DEFAULTS = {
    "noise": {"sigma_K": 1.0, "seed": 0},
    "samples": {"N": 10, "calibration_fraction": 0.5},
    "optimizer": {"tolerance": 1e-6, "max_iterations": 500, "memory": 10, "fd_rel_step": 1e-6},
    "solver": {"method": "auto"},
    "sensors": "all-nodes",
    "operating_points": {"stack_length": 1.0, "symmetry_factor": 1.0,
                         "points": [{"id": "op0", "P": 0.0, "T0_C": 20.0}]},
    "output": {"directory": "runs", "include_wall_time": False},
}


def load_schema(name="config.schema.json"):
    return json.loads(resources.files("thermocal").joinpath("schemas", name).read_text("utf-8"))


def _pointer(path):
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path)


def _no_duplicate_keys(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise ConfigError(f"duplicate key {k!r}")
        seen[k] = v
    return seen


def celsius_to_kelvin(t):
    return float(t) + KELVIN_OFFSET


def validate_config(data):
    """Check ``data`` against the schema; raise ConfigError with JSON pointers."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        lines = [f"{_pointer(e.absolute_path)}: {e.message}" for e in _leaf_errors(errors)]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    names = [s["name"] for s in data["parameters"]["slots"]]
    for i, name in enumerate(names):
        if name in names[:i]:
            raise ConfigError(f"/parameters/slots/{i}/name: duplicate parameter slot {name!r}")


def _leaf_errors(errors):
    out = []
    for e in errors:
        if e.context:
            out.extend(_leaf_errors(sorted(e.context, key=lambda c: list(c.absolute_path))))
        else:
            out.append(e)
    return list({(_pointer(e.absolute_path), e.message): e for e in out}.values())


def load_config(path):
    """Read, validate and fill defaults of a JSON configuration file.

    Raises ``OSError`` if the file cannot be read and :class:`ConfigError`
    for parse and schema errors.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return RunConfig.from_dict(data, base_dir=path.parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def apply_defaults(data):
    out = copy.deepcopy(data)
    for key, default in DEFAULTS.items():
        if key not in out:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict):
            for k, v in default.items():
                out[key].setdefault(k, copy.deepcopy(v))
    for i, p in enumerate(out["operating_points"]["points"]):
        p.setdefault("id", f"op{i}")
        p.setdefault("P", 0.0)
    for slot in out["parameters"]["slots"]:
        slot.setdefault("scale", "log10")
    out["parameters"].setdefault("fixed", {})
    out["parameters"].setdefault("tied", {})
    out["materials"].setdefault("sources", {})
    out["materials"].setdefault("powered_regions", [])
    out.setdefault("name", out["geometry"]["kind"])
    return out


@dataclass
class RunConfig:
    """Validated configuration with defaults applied; builds pipeline objects."""

    data: dict
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, data, base_dir="."):
        validate_config(data)
        return cls(apply_defaults(data), Path(base_dir))

    @property
    def name(self):
        return self.data["name"]

    # geometry -------------------------------------------------------------
    def build_mesh(self):
        g = dict(self.data["geometry"])
        kind = g.pop("kind")
        try:
            if kind in ("example1", "example2"):
                if "disk_center" in g:
                    g["disk_center"] = tuple(g["disk_center"])
                if kind == "example1":
                    if "annulus_outer_radius" in g:
                        raise ConfigError("/geometry/annulus_outer_radius: only valid for example2")
                    return build_example1(**g)
                return build_example2(**g)
            if kind == "machine-quadrant":
                res = g.pop("resolution", 0.001)
                ang = g.pop("angular_resolution", None)
                return build_machine_quadrant(MachineGeometry(**g), res, ang)
            path = Path(g["path"])
            if not path.is_absolute():
                path = self.base_dir / path
            return read_msh(path)
        except MeshError as exc:
            raise ConfigError(f"/geometry: {exc}") from exc

    # physics ----------------------------------------------------------------
    def problem(self, mesh):
        mat = self.data["materials"]

        def region(key, where):
            try:
                return mesh.region_tag(int(key) if key.isdigit() else key)
            except MeshError as exc:
                raise ConfigError(f"{where}: {exc}") from None

        cond = {region(k, f"/materials/conductivity/{k}"): v for k, v in mat["conductivity"].items()}
        sources = {region(k, f"/materials/sources/{k}"): float(v) for k, v in mat["sources"].items()}
        powered = tuple(region(k, "/materials/powered_regions") for k in mat["powered_regions"])
        bcs = {}
        for key, b in self.data["boundaries"].items():
            try:
                tag = mesh.boundary_tag(int(key) if key.isdigit() else key)
            except MeshError as exc:
                raise ConfigError(f"/boundaries/{key}: {exc}") from None
            t = b.get("temperature_C")
            bcs[tag] = BoundaryCondition(b["kind"], None if t is None else celsius_to_kelvin(t),
                                         b.get("h", 0.0))
        spec = ProblemSpec(cond, bcs, sources, powered)
        try:
            spec.check(mesh)
        except ThermocalError as exc:
            raise ConfigError(f"/materials or /boundaries: {exc}") from None
        return spec

    def operating_points(self, mesh, spec):
        """Operating points with ``V = symmetry_factor * stack_length * powered area``."""
        block = self.data["operating_points"]
        area = sum(mesh.region_area(t) for t in spec.powered_regions)
        volume = block["symmetry_factor"] * block["stack_length"] * area if area > 0 else 1.0
        ids = [p["id"] for p in block["points"]]
        if len(set(ids)) != len(ids):
            raise ConfigError("/operating_points/points: duplicate operating point id")
        return [OperatingPoint(float(p["P"]), volume, celsius_to_kelvin(p["T0_C"]), p["id"])
                for p in block["points"]]

    def model(self, mesh=None):
        mesh = mesh or self.build_mesh()
        spec = self.problem(mesh)
        return ForwardModel(mesh, spec, self.operating_points(mesh, spec), self.data["solver"]["method"])

    def targets(self, mesh):
        sensors = self.data["sensors"]
        if sensors == "all-nodes":
            return ALL_NODES
        out = SensorSet(tuple(Sensor(s.get("id", f"s{i}"), (float(s["x"]), float(s["y"])), s.get("group", ""))
                              for i, s in enumerate(sensors)))
        try:
            out.interpolation_matrix(mesh)
        except MeshError as exc:
            raise ConfigError(f"/sensors: {exc}") from None
        return out

    # calibration ---------------------------------------------------------------
    def parameters(self):
        block = self.data["parameters"]
        try:
            slots = tuple(ParameterSlot(s["name"], s.get("lower", 1e-3), s.get("upper", 1e3),
                                        s.get("initial", _geometric_mid(s)), s["scale"], s.get("true"))
                          for s in block["slots"])
            return ParameterSpec(slots, dict(block["fixed"]), dict(block["tied"]))
        except CalibrationError as exc:
            raise ConfigError(f"/parameters: {exc}") from None

    def optimizer(self):
        o = self.data["optimizer"]
        return OptimizerConfig(tolerance=o["tolerance"], max_iterations=o["max_iterations"],
                               memory=o["memory"], fd_rel_step=o["fd_rel_step"])

    def noise(self, seed=None):
        n = self.data["noise"]
        return NoiseSpec(n["sigma_K"], n["seed"] if seed is None else seed)

    def scenario(self):
        mesh = self.build_mesh()
        model = self.model(mesh)
        return Scenario(self.name, model, self.parameters(), self.targets(mesh), self.optimizer())

    def study(self):
        s = self.data.get("study")
        if s is None:
            raise ConfigError("/study: configuration has no study block")
        return (list(s["n_values"]), list(s.get("seeds", [0, 1, 2, 3, 4])),
                tuple(s.get("slope_excludes_n", [1])))


def _geometric_mid(slot):
    lo, hi = slot.get("lower", 1e-3), slot.get("upper", 1e3)
    if slot.get("scale", "log10") == "log10" and lo > 0:
        return math.sqrt(lo * hi)
    return 0.5 * (lo + hi)

"""Least-squares calibration of thermal parameters against temperature samples."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CalibrationError, SampleError, ThermocalError, ForwardSolveError
from .mesh import AllNodes
from .optimize import OptimizerConfig, minimize
from .synthetic import NoiseSpec, generate

log = logging.getLogger(__name__)

LINEAR, LOG10 = "linear", "log10"
DEFAULT_BOUNDS = (1e-3, 1e3)


@dataclass(frozen=True)
class ParameterSlot:
    """One calibrated quantity; ``true`` is the ground truth for synthetic studies."""

    name: str
    lower: float = DEFAULT_BOUNDS[0]
    upper: float = DEFAULT_BOUNDS[1]
    initial: float = 1.0
    scale: str = LOG10
    true: float | None = None

    def __post_init__(self):
        if self.scale not in (LINEAR, LOG10):
            raise CalibrationError(f"{self.name}: unknown scale {self.scale!r}")
        if not self.lower < self.upper:
            raise CalibrationError(f"{self.name}: lower bound must be below upper bound")
        if not self.lower <= self.initial <= self.upper:
            raise CalibrationError(f"{self.name}: initial guess {self.initial} outside bounds")
        if self.scale == LOG10 and self.lower <= 0:
            raise CalibrationError(f"{self.name}: log10 scale needs positive bounds")

    def to_scaled(self, value):
        return math.log10(value) if self.scale == LOG10 else float(value)

    def from_scaled(self, z):
        return 10.0 ** z if self.scale == LOG10 else float(z)


@dataclass(frozen=True)
class ParameterSpec:
    """Calibrated slots plus fixed values and ties for non-calibrated slots.

    ``tied`` maps a slot name to the calibrated slot whose value it copies.
    """

    slots: tuple
    fixed: dict = field(default_factory=dict)
    tied: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        names = [s.name for s in self.slots]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise CalibrationError(f"duplicate parameter slot {sorted(dup)[0]!r}")
        if not names:
            raise CalibrationError("no parameters to calibrate")
        for name, src in self.tied.items():
            if src not in names:
                raise CalibrationError(f"{name!r} is tied to unknown slot {src!r}")

    @property
    def names(self):
        return tuple(s.name for s in self.slots)

    def bounds_scaled(self):
        lo = np.array([s.to_scaled(s.lower) for s in self.slots])
        hi = np.array([s.to_scaled(s.upper) for s in self.slots])
        return lo, hi

    def to_scaled(self, theta):
        return np.array([s.to_scaled(theta[s.name]) for s in self.slots])

    def from_scaled(self, z):
        return {s.name: s.from_scaled(v) for s, v in zip(self.slots, z)}

    def initial(self):
        return {s.name: s.initial for s in self.slots}

    def truth(self):
        if any(s.true is None for s in self.slots):
            raise CalibrationError("ground-truth values missing for some slots")
        return {s.name: s.true for s in self.slots}

    def expand(self, theta):
        """Full slot-name -> value map including fixed and tied slots."""
        out = dict(self.fixed)
        out.update(theta)
        for name, src in self.tied.items():
            out[name] = theta[src]
        return out

    def with_initial(self, values):
        return ParameterSpec(tuple(_replace(s, initial=values[s.name]) for s in self.slots),
                             dict(self.fixed), dict(self.tied))


def _replace(slot, **kw):
    d = slot.__dict__.copy()
    d.update(kw)
    return ParameterSlot(**d)


@dataclass
class CalibrationResult:
    """Estimated parameters and optimizer history."""

    theta: dict
    cost: float
    iterations: int
    termination: str
    cost_trace: list
    theta_trace: list
    n_cost_evaluations: int = 0
    n_forward_solves: int = 0
    warnings: list = field(default_factory=list)
    parameters: ParameterSpec | None = None
    wall_time: float | None = None
    provenance: dict = field(default_factory=dict)

    def relative_errors(self, truth=None):
        truth = truth or self.parameters.truth()
        return {k: relative_error(self.theta[k], truth[k]) for k in self.theta}


def relative_error(estimated, true):
    """``|estimated - true| / |true|``."""
    if true == 0:
        raise CalibrationError("relative error undefined for a zero true value")
    return abs(estimated - true) / abs(true)


class CalibrationProblem:
    """Cost and finite-difference gradient for one model, parameter set and data set.

    Parameters
    ----------
    model : ForwardModel
    parameters : ParameterSpec
    samples : SampleSet whose columns correspond to ``targets``.
    targets : ALL_NODES or a SensorSet.
    """

    def __init__(self, model, parameters, samples, targets, rel_step=1e-6, theta_scale=1.0):
        self.model = model
        self.parameters = parameters
        self.samples = samples
        self.targets = targets
        self.rel_step = rel_step
        self.theta_scale = theta_scale
        missing = set(model.slot_names) - set(parameters.expand(parameters.initial()))
        if missing:
            raise CalibrationError(f"model slots without value or calibration entry: {sorted(missing)}")
        if len(samples.op_ids) != len(model.operating_points):
            raise SampleError("samples and model disagree on the number of operating points")
        self._P = targets.interpolation_matrix(model.mesh)
        if self._P.shape[0] != samples.n_sensors:
            raise SampleError("sample columns do not match the targets")
        self._moments = samples.moments()
        self.lower, self.upper = parameters.bounds_scaled()
        self.n_cost = 0
        self.n_solves = 0
        self.evaluated = []
        self.warnings = []
        self._cache = {}

    # forward side ------------------------------------------------------
    def simulate(self, theta):
        """Simulated target temperatures, one row per operating point."""
        key = tuple(float(theta[n]) for n in self.parameters.names)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        full = self.parameters.expand(theta)
        try:
            fields = self.model.solve_all(full)
        except ThermocalError as exc:
            raise ForwardSolveError(str(exc), full) from exc
        self.n_solves += len(fields)
        sims = np.stack([self._P @ f.values for f in fields])
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = sims
        return sims

    def _misfit(self, theta):
        sims = self.simulate(theta)
        fit = 0.0
        for (n, mean, _), sim in zip(self._moments, sims):
            if n:
                fit += n * float(((sim - mean) ** 2).sum())
        return fit

    @property
    def residual_floor(self):
        """Sum of squared deviations of samples from their per-operating-point means."""
        return sum(m[2] for m in self._moments)

    def cost(self, theta):
        """Sum over samples and targets of (simulated - measured)^2 in K^2.

        Uses the exact split ``sum_i |s - m_i|^2 = n |s - mean|^2 + sum_i |m_i - mean|^2``
        so replicated samples at one operating point share a forward solve.
        """
        self.n_cost += 1
        return self._misfit(theta) + self.residual_floor

    def cost_scaled(self, z):
        theta = self.parameters.from_scaled(z)
        self._record(z)
        return self.cost(theta)

    def _record(self, z):
        if np.any(z < self.lower) or np.any(z > self.upper):
            raise CalibrationError(f"evaluation outside bounds at {z}")
        self.evaluated.append(np.array(z, float))

    def gradient_scaled(self, z, rel_step=None):
        """Central finite differences of the cost in scaled coordinates.

        Step ``rel_step * max(|z_k|, theta_scale)``; shrunk (or made one-sided)
        next to a bound, with a warning recorded.
        """
        z = np.asarray(z, float)
        rel = self.rel_step if rel_step is None else rel_step
        grad = np.empty_like(z)
        for k in range(len(z)):
            h = rel * max(abs(z[k]), self.theta_scale)
            up, down = self.upper[k] - z[k], z[k] - self.lower[k]
            zp, zm = z.copy(), z.copy()
            if h <= up and h <= down:
                zp[k] += h
                zm[k] -= h
                grad[k] = (self._fit_scaled(zp) - self._fit_scaled(zm)) / (2 * h)
                continue
            room = min(up, down)
            if room >= 1e-3 * h:
                self._warn(f"FD step for {self.parameters.names[k]} shrunk from {h:.3g} to {room:.3g} at a bound")
                zp[k] += room
                zm[k] -= room
                grad[k] = (self._fit_scaled(zp) - self._fit_scaled(zm)) / (2 * room)
            else:
                self._warn(f"one-sided FD step for {self.parameters.names[k]} at a bound")
                f0 = self._fit_scaled(z)
                if up >= down:
                    zp[k] += min(h, up)
                    grad[k] = (self._fit_scaled(zp) - f0) / (zp[k] - z[k])
                else:
                    zm[k] -= min(h, down)
                    grad[k] = (f0 - self._fit_scaled(zm)) / (z[k] - zm[k])
        return grad

    def _fit_scaled(self, z):
        self._record(z)
        return self._misfit(self.parameters.from_scaled(z))

    def _warn(self, msg):
        if msg not in self.warnings:
            log.info(msg)
            self.warnings.append(msg)


def calibrate(problem, config=None, initial=None):
    """Run the bounded quasi-Newton minimization on a :class:`CalibrationProblem`.

    Returns a :class:`CalibrationResult` with per-iteration parameters and cost.
    """
    cfg = config or OptimizerConfig()
    spec = problem.parameters
    theta0 = dict(initial or spec.initial())
    z0 = spec.to_scaled(theta0)
    t0 = time.perf_counter()
    res = minimize(problem.cost_scaled,
                   lambda z: problem.gradient_scaled(z, cfg.fd_rel_step),
                   z0, problem.lower, problem.upper, cfg)
    wall = time.perf_counter() - t0
    theta_trace = [spec.from_scaled(x) for x in res.x_trace]
    return CalibrationResult(
        theta=spec.from_scaled(res.x), cost=float(res.fun), iterations=res.iterations,
        termination=res.termination, cost_trace=[float(c) for c in res.cost_trace],
        theta_trace=theta_trace, n_cost_evaluations=problem.n_cost,
        n_forward_solves=problem.n_solves, warnings=list(problem.warnings),
        parameters=spec, wall_time=wall,
        provenance={"samples": dict(problem.samples.provenance),
                    "mesh_sha256": problem.model.mesh.digest()})


def sensor_groups(targets):
    if isinstance(targets, AllNodes):
        return None
    return targets.groups


def validate(model, parameters, theta, validation, targets):
    """Mean relative temperature error ``|T_cal - T_val| / T_val`` per sensor group.

    Temperatures are compared in kelvin, the scale stored in the sample set.
    """
    if validation.n_rows == 0:
        raise SampleError("validation set is empty")
    temps = validation.temperatures
    if np.any(temps == 0):
        raise SampleError("zero measured temperature; relative error undefined")
    fields = model.solve_all(parameters.expand(theta))
    P = targets.interpolation_matrix(model.mesh)
    sims = np.stack([P @ f.values for f in fields])
    cal = sims[validation.op_index]
    err = np.abs(cal - temps) / np.abs(temps)
    groups = sensor_groups(targets) or ("all",) * validation.n_sensors
    out = {"temperature_scale": "K", "overall": float(err.mean()), "groups": {}}
    for g in dict.fromkeys(groups):
        cols = [i for i, gi in enumerate(groups) if gi == g]
        out["groups"][g or "ungrouped"] = float(err[:, cols].mean())
    out["per_operating_point"] = {
        validation.op_ids[k]: float(err[validation.op_index == k].mean())
        for k in np.unique(validation.op_index)}
    return out


@dataclass
class Scenario:
    """Everything needed to run synthetic calibrations repeatedly."""

    name: str
    model: object
    parameters: ParameterSpec
    targets: object
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    _truth_fields: list | None = None

    def truth_fields(self):
        if self._truth_fields is None:
            theta = self.parameters.expand(self.parameters.truth())
            self._truth_fields = self.model.solve_all(theta)
        return self._truth_fields

    def synthesize(self, noise, n_samples):
        return generate(self.truth_fields(), self.targets, noise, n_samples,
                        theta_true=self.parameters.truth(),
                        op_ids=[op.id for op in self.model.operating_points],
                        mesh_digest=self.model.mesh.digest())

    def run(self, noise, n_samples):
        samples = self.synthesize(noise, n_samples)
        problem = CalibrationProblem(self.model, self.parameters, samples, self.targets,
                                     rel_step=self.optimizer.fd_rel_step)
        return calibrate(problem, self.optimizer)


@dataclass
class StudyRecord:
    """Relative errors per (N, seed, parameter) of a convergence study."""

    study_id: str
    example_id: str
    sigma: float
    n_values: list
    seeds: list
    parameters: list
    errors: dict = field(default_factory=dict)  # (N, seed) -> {param: error}
    failures: dict = field(default_factory=dict)  # (N, seed) -> message
    terminations: dict = field(default_factory=dict)

    @property
    def failure_count(self):
        return len(self.failures)

    def summary(self):
        """Rows ``(N, parameter, mean, std, n_seeds)`` over successful seeds."""
        rows = []
        for n in self.n_values:
            for p in self.parameters:
                vals = [self.errors[(n, s)][p] for s in self.seeds if (n, s) in self.errors]
                if not vals:
                    continue
                rows.append((n, p, float(np.mean(vals)), float(np.std(vals)), len(vals)))
        return rows

    def mean_errors(self, parameter):
        return [(n, m) for n, p, m, _, _ in self.summary() if p == parameter]


def convergence_study(scenario, n_values, seeds, sigma=1.0, threads=1, study_id="study"):
    """Calibrate on freshly perturbed data for every N and seed.

    Replications run on a thread pool; results are keyed by (N, seed) so
    they do not depend on scheduling. A failed replication is recorded and
    the study continues.
    """
    n_values = [int(n) for n in n_values]
    if any(b <= a for a, b in zip(n_values[:-1], n_values[1:])):
        raise CalibrationError("N list must be strictly increasing")
    seeds = [int(s) for s in seeds]
    truth = scenario.parameters.truth()
    scenario.truth_fields()
    record = StudyRecord(study_id, scenario.name, float(sigma), n_values, seeds,
                         list(scenario.parameters.names))

    def one(key):
        n, seed = key
        res = scenario.run(NoiseSpec(sigma, seed), n)
        return res

    keys = [(n, s) for n in n_values for s in seeds]

    def collect(key, fut_result):
        try:
            res = fut_result()
        except (ThermocalError, np.linalg.LinAlgError, FloatingPointError) as exc:
            record.failures[key] = str(exc)
            log.warning("replication N=%d seed=%d failed: %s", key[0], key[1], exc)
            return
        record.errors[key] = {p: relative_error(res.theta[p], truth[p]) for p in record.parameters}
        record.terminations[key] = res.termination

    if threads <= 1:
        for key in keys:
            collect(key, lambda key=key: one(key))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {key: pool.submit(one, key) for key in keys}
            for key in keys:
                collect(key, futures[key].result)
    return record

import numpy as np
import pytest

from conftest import unit_square
from thermocal.calibration import (CalibrationProblem, ParameterSlot, ParameterSpec, Scenario,
                                   calibrate, convergence_study, relative_error, validate)
from thermocal.exceptions import CalibrationError, SampleError, SolverError
from thermocal.fem import BoundaryCondition, ForwardModel, ProblemSpec
from thermocal.geometry import BACKGROUND, LEFT, RIGHT, SOURCE, build_example1
from thermocal.mesh import ALL_NODES, SensorSet
from thermocal.optimize import OptimizerConfig
from thermocal.synthetic import NoiseSpec, SampleSet


def small_scenario(targets=ALL_NODES, scale="log10", tol=1e-6):
    mesh = build_example1(disk_radius=0.25, resolution=16)
    bcs = {t: BoundaryCondition("neumann") for t in mesh.boundary_tags}
    bcs[LEFT] = bcs[RIGHT] = BoundaryCondition("dirichlet", 293.15)
    spec = ProblemSpec({BACKGROUND: "lambda_1", SOURCE: "lambda_2"}, bcs, {SOURCE: 500.0})
    params = ParameterSpec((ParameterSlot("lambda_1", initial=3.0, true=1.0, scale=scale),
                            ParameterSlot("lambda_2", initial=0.75, true=0.25, scale=scale)))
    return Scenario("small", ForwardModel(mesh, spec), params, targets, OptimizerConfig(tolerance=tol))


@pytest.mark.parametrize("est,true,expected", [(1.0, 1.0, 0.0), (1.5, 1.0, 0.5), (0.5, 1.0, 0.5),
                                                (-2.0, -1.0, 1.0)])
def test_relative_error(est, true, expected):
    assert relative_error(est, true) == expected


def test_relative_error_zero_truth():
    with pytest.raises(CalibrationError):
        relative_error(1.0, 0.0)


def test_zero_noise_recovers_truth():
    res = small_scenario().run(NoiseSpec(0.0), 1)
    assert res.termination == "Converged"
    assert max(res.relative_errors().values()) <= 1e-6


def test_zero_noise_linear_and_log_scale_agree():
    a = small_scenario(scale="log10", tol=1e-12).run(NoiseSpec(0.0), 1)
    b = small_scenario(scale="linear", tol=1e-12).run(NoiseSpec(0.0), 1)
    for k in a.theta:
        assert relative_error(b.theta[k], a.theta[k]) <= 1e-4


def test_noisy_run_close_and_bounded():
    sc = small_scenario()
    samples = sc.synthesize(NoiseSpec(1.0, 7), 10)
    problem = CalibrationProblem(sc.model, sc.parameters, samples, sc.targets)
    res = calibrate(problem, sc.optimizer)
    assert max(res.relative_errors().values()) < 0.05
    lo, hi = problem.lower, problem.upper
    assert all(np.all((z >= lo) & (z <= hi)) for z in problem.evaluated)
    assert np.all(np.diff(res.cost_trace) <= 0)
    assert len(res.theta_trace) == res.iterations + 1


def test_cost_equals_direct_sum_of_squares():
    sc = small_scenario()
    samples = sc.synthesize(NoiseSpec(1.0, 2), 4)
    problem = CalibrationProblem(sc.model, sc.parameters, samples, sc.targets)
    theta = {"lambda_1": 1.2, "lambda_2": 0.3}
    sim = problem.simulate(theta)
    direct = ((samples.temperatures - sim[samples.op_index]) ** 2).sum()
    assert abs(problem.cost(theta) - direct) <= 1e-10 * direct


def richardson_gradient(problem, z, h):
    """Step-halved Richardson extrapolation of central differences."""
    def central(step):
        g = np.empty_like(z)
        for k in range(len(z)):
            e = np.zeros_like(z)
            e[k] = step
            g[k] = (problem._fit_scaled(z + e) - problem._fit_scaled(z - e)) / (2 * step)
        return g
    return (4 * central(h / 2) - central(h)) / 3


def test_fd_gradient_matches_richardson():
    sc = small_scenario()
    problem = CalibrationProblem(sc.model, sc.parameters, sc.synthesize(NoiseSpec(1.0, 1), 3), sc.targets)
    rng = np.random.default_rng(4)
    for _ in range(3):
        z = rng.uniform(-1.0, 0.5, 2)
        g = problem.gradient_scaled(z)
        ref = richardson_gradient(problem, z, 1e-3)
        assert np.max(np.abs(g - ref)) <= 1e-4 * np.max(np.abs(ref))


def test_fd_step_shrinks_at_bound():
    sc = small_scenario()
    problem = CalibrationProblem(sc.model, sc.parameters, sc.synthesize(NoiseSpec(0.0), 1), sc.targets)
    z = problem.upper.copy()
    z[1] = -0.5
    g = problem.gradient_scaled(z)
    assert np.all(np.isfinite(g))
    assert problem.warnings
    assert all(np.all(e <= problem.upper) for e in problem.evaluated)


def test_sensor_only_calibration_runs():
    sensors = SensorSet.from_points([[0.5, 0.5], [0.2, 0.5], [0.5, 0.9]])
    res = small_scenario(sensors).run(NoiseSpec(0.0), 1)
    assert max(res.relative_errors().values()) <= 1e-5


def test_tied_and_fixed_slots():
    params = ParameterSpec((ParameterSlot("a"),), fixed={"c": 2.0}, tied={"b": "a"})
    assert params.expand({"a": 5.0}) == {"a": 5.0, "b": 5.0, "c": 2.0}
    with pytest.raises(CalibrationError):
        ParameterSpec((ParameterSlot("a"),), tied={"b": "zzz"})


def test_duplicate_slot_rejected():
    with pytest.raises(CalibrationError, match="lam"):
        ParameterSpec((ParameterSlot("lam"), ParameterSlot("lam")))


@pytest.mark.parametrize("kw", [dict(lower=2.0, upper=1.0), dict(initial=1e4),
                                dict(lower=0.0, scale="log10"), dict(scale="cubic")])
def test_invalid_slot(kw):
    with pytest.raises(CalibrationError):
        ParameterSlot("x", **kw)


def test_missing_slot_value_rejected():
    sc = small_scenario()
    params = ParameterSpec((ParameterSlot("lambda_1", true=1.0),))
    with pytest.raises(CalibrationError):
        CalibrationProblem(sc.model, params, sc.synthesize(NoiseSpec(0.0), 1), sc.targets)


# validation metric ------------------------------------------------------------------

def uniform_model(temp):
    mesh = unit_square(4)
    bcs = {t: BoundaryCondition("dirichlet", temp) for t in mesh.boundary_tags}
    return ForwardModel(mesh, ProblemSpec({1: "k"}, bcs))


def _one_sensor_set(value):
    return SampleSet([[value]], ("s",), [0], [0])


def test_validate_exact_data_gives_zero():
    model = uniform_model(303.0)
    sensors = SensorSet.from_points([[0.5, 0.5]], ids=["s"])
    params = ParameterSpec((ParameterSlot("k"),))
    out = validate(model, params, {"k": 1.0}, _one_sensor_set(303.0), sensors)
    assert out["overall"] == 0.0


def test_validate_single_pair():
    model = uniform_model(303.0)
    sensors = SensorSet.from_points([[0.5, 0.5]], ids=["s"], groups=["yoke"])
    params = ParameterSpec((ParameterSlot("k"),))
    out = validate(model, params, {"k": 1.0}, _one_sensor_set(300.0), sensors)
    assert abs(out["overall"] - 0.01) < 1e-15
    assert out["groups"] == {"yoke": out["overall"]}
    assert out["temperature_scale"] == "K"


def test_validate_zero_temperature_rejected():
    model = uniform_model(303.0)
    sensors = SensorSet.from_points([[0.5, 0.5]], ids=["s"])
    with pytest.raises(SampleError):
        validate(model, ParameterSpec((ParameterSlot("k"),)), {"k": 1.0}, _one_sensor_set(0.0), sensors)


# convergence study --------------------------------------------------------------------

def test_study_zero_noise_stays_at_floor():
    record = convergence_study(small_scenario(), [1, 4], [0, 1], sigma=0.0)
    assert record.failure_count == 0
    assert all(max(e.values()) <= 1e-6 for e in record.errors.values())


def test_study_threads_do_not_change_results():
    sc = small_scenario()
    a = convergence_study(sc, [2, 5], [0, 1], threads=1)
    b = convergence_study(sc, [2, 5], [0, 1], threads=3)
    assert a.errors == b.errors
    assert a.summary() == b.summary()


def test_study_records_failures_and_continues(monkeypatch):
    sc = small_scenario()
    real = Scenario.run

    def flaky(self, noise, n):
        if n == 3 and noise.seed == 1:
            raise SolverError("synthetic failure")
        return real(self, noise, n)

    monkeypatch.setattr(Scenario, "run", flaky)
    record = convergence_study(sc, [2, 3], [0, 1])
    assert record.failure_count == 1 and (3, 1) in record.failures
    assert [r[4] for r in record.summary() if r[0] == 3] == [1, 1]


def test_study_requires_increasing_n():
    with pytest.raises(CalibrationError):
        convergence_study(small_scenario(), [10, 5], [0])

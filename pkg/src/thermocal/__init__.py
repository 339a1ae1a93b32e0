"""Finite-element heat conduction and calibration of thermal parameters."""

__version__ = "0.1.0"

from .calibration import (CalibrationProblem, CalibrationResult, ParameterSlot, ParameterSpec,
                          Scenario, calibrate, convergence_study, relative_error, validate)
from .exceptions import ThermocalError
from .fem import (BoundaryCondition, ForwardModel, OperatingPoint, ProblemSpec, TemperatureField,
                  assemble, solve)
from .mesh import ALL_NODES, Mesh, Sensor, SensorSet
from .optimize import OptimizerConfig, minimize
from .synthetic import NoiseSpec, SampleSet, generate, split

__all__ = [
    "ALL_NODES", "BoundaryCondition", "CalibrationProblem", "CalibrationResult", "ForwardModel",
    "Mesh", "NoiseSpec", "OperatingPoint", "OptimizerConfig", "ParameterSlot", "ParameterSpec",
    "ProblemSpec", "SampleSet", "Scenario", "Sensor", "SensorSet", "TemperatureField",
    "ThermocalError", "assemble", "calibrate", "convergence_study", "generate", "minimize",
    "relative_error", "solve", "split", "validate",
]

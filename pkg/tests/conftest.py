from pathlib import Path

import numpy as np
import pytest

from thermocal.config import load_config
from thermocal.fem import BoundaryCondition, ProblemSpec
from thermocal.geometry import BOTTOM, LEFT, RIGHT, TOP, _rect_grid
from thermocal.mesh import Mesh

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def unit_square(n, width=1.0, height=1.0):
    """Structured unit-square mesh with a single region (tag 1)."""
    nodes, tris, edges, tags, _ = _rect_grid(width, height, n)
    return Mesh(nodes, tris, np.ones(len(tris), int), edges, tags,
                {"body": 1}, {"bottom": BOTTOM, "right": RIGHT, "top": TOP, "left": LEFT})


def all_sides(kind, **kw):
    return {t: BoundaryCondition(kind, **kw) for t in (BOTTOM, RIGHT, TOP, LEFT)}


def left_right_problem(conductivity=1.0, t_left=0.0, t_right=1.0, source=0.0):
    bcs = {LEFT: BoundaryCondition("dirichlet", t_left), RIGHT: BoundaryCondition("dirichlet", t_right),
           TOP: BoundaryCondition("neumann"), BOTTOM: BoundaryCondition("neumann")}
    return ProblemSpec({1: conductivity}, bcs, {1: source} if source else {})


@pytest.fixture(scope="session")
def example1_config():
    return load_config(CONFIGS / "example1.json")


@pytest.fixture(scope="session")
def example1_scenario(example1_config):
    return example1_config.scenario()


@pytest.fixture(scope="session")
def example2_scenario():
    return load_config(CONFIGS / "example2.json").scenario()


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    """Remember one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

"""Linear-triangle finite elements for -div(lambda grad T) = g in 2D.

Conductivity and heat source are constant per region. Boundaries are
Dirichlet (fixed temperature), Neumann (adiabatic) or Robin (convective,
``lambda dT/dn + h (T - T0) = 0``). Robin integrals are closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import IllPosedProblemError, ProblemError, SolverError

log = logging.getLogger(__name__)

DIRICHLET, NEUMANN, ROBIN = "dirichlet", "neumann", "robin"
DIRECT_SOLVE_LIMIT = 200_000
RESIDUAL_TOL = 1e-10
Value = Union[float, str]  # a number or the name of a parameter slot


def element_stiffness(coords, conductivity):
    """3x3 stiffness matrix of a linear triangle.

    ``conductivity * integral(grad N_i . grad N_j)`` over the element.
    """
    p = np.asarray(coords, float).reshape(3, 2)
    area = 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))
    if abs(area) <= 0.0:
        raise ProblemError("zero-area triangle")
    b = np.array([p[1, 1] - p[2, 1], p[2, 1] - p[0, 1], p[0, 1] - p[1, 1]])
    c = np.array([p[2, 0] - p[1, 0], p[0, 0] - p[2, 0], p[1, 0] - p[0, 0]])
    return conductivity * (np.outer(b, b) + np.outer(c, c)) / (4.0 * abs(area))


def element_load(coords, source):
    """Consistent load vector for a constant source: ``source * area / 3`` each."""
    p = np.asarray(coords, float).reshape(3, 2)
    area = 0.5 * abs((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))
    if area <= 0.0:
        raise ProblemError("zero-area triangle")
    return np.full(3, source * area / 3.0)


def edge_robin(length, h, ambient):
    """Robin edge block ``h L/6 [[2,1],[1,2]]`` and load ``h T0 L/2 (1,1)``."""
    mass = h * length / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return mass, np.full(2, h * ambient * length / 2.0)


@dataclass(frozen=True)
class BoundaryCondition:
    """Condition on one boundary tag.

    ``temperature`` is T0 in kelvin for Dirichlet and Robin; ``None`` takes
    the ambient temperature of the operating point. ``h`` may name a
    parameter slot.
    """

    kind: str
    temperature: Union[float, None] = None
    h: Value = 0.0

    def __post_init__(self):
        if self.kind not in (DIRICHLET, NEUMANN, ROBIN):
            raise ProblemError(f"unknown boundary kind {self.kind!r}")
        if self.kind == ROBIN and not isinstance(self.h, str) and self.h < 0:
            raise ProblemError("Robin heat-transfer coefficient must be >= 0")


@dataclass(frozen=True)
class OperatingPoint:
    """Injected power ``power`` (W) over copper volume ``volume`` (m^3) at ``ambient`` (K)."""

    power: float = 0.0
    volume: float = 1.0
    ambient: float = 293.15
    id: str = "op0"

    def __post_init__(self):
        if self.power < 0:
            raise ProblemError("power must be >= 0")
        if self.volume <= 0:
            raise ProblemError("volume must be > 0")

    @property
    def heat_density(self):
        return self.power / self.volume


@dataclass(frozen=True)
class ProblemSpec:
    """Materials, sources and boundary conditions keyed by mesh tags.

    Parameters
    ----------
    conductivity : region tag -> lambda in W/(m K) or a parameter slot name.
    boundaries : boundary tag -> BoundaryCondition.
    sources : region tag -> constant g in W/m^3 (missing tags mean g = 0).
    powered_regions : regions that receive ``g = P/V`` from the operating point.
    """

    conductivity: Mapping[int, Value]
    boundaries: Mapping[int, BoundaryCondition]
    sources: Mapping[int, float] = field(default_factory=dict)
    powered_regions: tuple = ()

    def slot_names(self):
        names = [v for v in self.conductivity.values() if isinstance(v, str)]
        names += [bc.h for bc in self.boundaries.values() if isinstance(bc.h, str)]
        return tuple(dict.fromkeys(names))

    def check(self, mesh):
        missing = set(mesh.region_tags) - set(self.conductivity)
        if missing:
            raise ProblemError(f"no conductivity for region tags {sorted(missing)}")
        missing = set(mesh.boundary_tags) - set(self.boundaries)
        if missing:
            raise ProblemError(f"no boundary condition for tags {sorted(missing)}")


def _value(v, params, what):
    if isinstance(v, str):
        try:
            return float(params[v])
        except KeyError:
            raise ProblemError(f"{what} refers to unknown parameter {v!r}") from None
    return float(v)


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """Global system after symmetric Dirichlet elimination.

    ``matrix``/``rhs`` are the reduced (solvable) system, ``full_matrix``/
    ``full_rhs`` the assembled ones before elimination, kept for flux
    post-processing.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dirichlet_nodes: np.ndarray
    dirichlet_values: np.ndarray
    full_matrix: sp.csr_matrix
    full_rhs: np.ndarray
    well_posed: bool
    mesh: object = None
    robin: tuple = ()  # (edge indices, h per edge, T0 per edge)

    @property
    def size(self):
        return self.matrix.shape[0]


class Discretization:
    """Per-mesh precomputation: region-wise stiffness pieces and load patterns.

    Building the global matrix for new conductivities is then a weighted sum
    of cached sparse matrices.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        n = mesh.n_nodes
        t = mesh.triangles
        p = mesh.nodes[t]
        area = mesh.areas
        b = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 1] - p[:, 0, 1], p[:, 0, 1] - p[:, 1, 1]], axis=1)
        c = np.stack([p[:, 2, 0] - p[:, 1, 0], p[:, 0, 0] - p[:, 2, 0], p[:, 1, 0] - p[:, 0, 0]], axis=1)
        ke = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area)[:, None, None]
        iu, ju = np.triu_indices(3)
        self._region_upper = {}
        for tag in mesh.region_tags:
            sel = mesh.regions == tag
            rows = t[sel][:, iu]
            cols = t[sel][:, ju]
            vals = ke[sel][:, iu, ju]
            lo = np.minimum(rows, cols).ravel()
            hi = np.maximum(rows, cols).ravel()
            self._region_upper[tag] = sp.csr_matrix((vals.ravel(), (lo, hi)), shape=(n, n))
            self._region_upper[tag].sum_duplicates()
        self._region_load = {}
        for tag in mesh.region_tags:
            sel = mesh.regions == tag
            self._region_load[tag] = np.bincount(t[sel].ravel(), np.repeat(area[sel] / 3.0, 3), minlength=n)
        self.edge_length = mesh.edge_lengths

    def stiffness_upper(self, weights):
        """Upper triangle (incl. diagonal) of sum_r weights[r] * K_r."""
        n = self.mesh.n_nodes
        out = sp.csr_matrix((n, n))
        for tag, w in weights.items():
            if w != 0.0:
                out = out + w * self._region_upper[tag]
        return out

    def region_load(self, tag):
        return self._region_load[tag]


def _symmetric(upper):
    upper = sp.csr_matrix(upper)
    return (upper + sp.triu(upper, k=1).T).tocsr()


def assemble(mesh, spec, params=None, operating_point=None, discretization=None):
    """Assemble the heat-conduction system for parameter values ``params``.

    ``params`` maps slot names used in ``spec`` to physical values.
    Raises :class:`ProblemError` for missing tags or non-positive
    conductivities.
    """
    params = params or {}
    op = operating_point or OperatingPoint()
    spec.check(mesh)
    disc = discretization or Discretization(mesh)
    n = mesh.n_nodes

    lam = {}
    for tag in mesh.region_tags:
        lam[tag] = _value(spec.conductivity[tag], params, f"region {tag}")
        if not lam[tag] > 0.0 or not np.isfinite(lam[tag]):
            raise ProblemError(f"conductivity of region {tag} must be positive, got {lam[tag]}")
    upper = disc.stiffness_upper(lam)

    rhs = np.zeros(n)
    for tag in mesh.region_tags:
        g = float(spec.sources.get(tag, 0.0))
        if tag in spec.powered_regions:
            g += op.heat_density
        if g != 0.0:
            rhs += g * disc.region_load(tag)

    edges = mesh.edges
    d_nodes, d_vals = [], []
    r_idx, r_h, r_t0 = [], [], []
    for tag in mesh.boundary_tags:
        bc = spec.boundaries[tag]
        sel = np.flatnonzero(mesh.edge_tags == tag)
        t0 = op.ambient if bc.temperature is None else float(bc.temperature)
        if bc.kind == DIRICHLET:
            nodes = np.unique(edges[sel])
            d_nodes.append(nodes)
            d_vals.append(np.full(len(nodes), t0))
        elif bc.kind == ROBIN:
            h = _value(bc.h, params, f"boundary {tag}")
            if h < 0:
                raise ProblemError(f"heat-transfer coefficient of boundary {tag} must be >= 0")
            if h > 0:
                r_idx.append(sel)
                r_h.append(np.full(len(sel), h))
                r_t0.append(np.full(len(sel), t0))

    if r_idx:
        r_idx = np.concatenate(r_idx)
        r_h = np.concatenate(r_h)
        r_t0 = np.concatenate(r_t0)
        a, b = edges[r_idx, 0], edges[r_idx, 1]
        L = disc.edge_length[r_idx]
        diag = r_h * L / 3.0
        off = r_h * L / 6.0
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        robin_upper = sp.csr_matrix((np.concatenate([diag, diag, off]),
                                     (np.concatenate([a, b, lo]), np.concatenate([a, b, hi]))), shape=(n, n))
        upper = upper + robin_upper
        load = r_h * r_t0 * L / 2.0
        rhs += np.bincount(a, load, minlength=n) + np.bincount(b, load, minlength=n)
        robin = (r_idx, r_h, r_t0)
    else:
        robin = ()

    full = _symmetric(upper)
    if d_nodes:
        dn = np.concatenate(d_nodes)
        dv = np.concatenate(d_vals)
        dn, first = np.unique(dn, return_index=True)
        dv = dv[first]
    else:
        dn = np.zeros(0, np.int64)
        dv = np.zeros(0)
    well_posed = len(dn) > 0 or len(robin) > 0
    matrix, reduced_rhs = _eliminate(full, rhs, dn, dv)
    return AssembledSystem(matrix, reduced_rhs, dn, dv, full, rhs, well_posed, mesh, robin)


def _eliminate(full, rhs, nodes, values):
    if len(nodes) == 0:
        return full, rhs.copy()
    n = full.shape[0]
    u_d = np.zeros(n)
    u_d[nodes] = values
    b = rhs - full @ u_d
    b[nodes] = values
    keep = np.ones(n)
    keep[nodes] = 0.0
    D = sp.diags(keep)
    m = (D @ full @ D).tocsr()
    m = m + sp.diags(1.0 - keep)
    m.eliminate_zeros()
    return m.tocsr(), b


@dataclass(frozen=True, eq=False)
class TemperatureField:
    """Nodal temperatures (K) on ``mesh``."""

    mesh: object
    values: np.ndarray
    system: AssembledSystem = None

    def __post_init__(self):
        v = np.array(self.values, float, copy=True)
        if v.shape != (self.mesh.n_nodes,):
            raise ProblemError("temperature vector length does not match node count")
        if not np.all(np.isfinite(v)):
            raise SolverError("non-finite temperatures")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _check_residual(matrix, u, rhs):
    norm_b = np.linalg.norm(rhs)
    res = np.linalg.norm(matrix @ u - rhs)
    rel = res / norm_b if norm_b > 0 else res
    if not rel <= RESIDUAL_TOL:
        raise SolverError(f"relative residual {rel:.3e} exceeds {RESIDUAL_TOL:g}")
    return rel


def pcg(matrix, rhs, rtol=1e-12, maxiter=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``matrix``."""
    n = matrix.shape[0]
    maxiter = maxiter or 10 * n
    inv_diag = 1.0 / matrix.diagonal()
    if np.any(~np.isfinite(inv_diag)) or np.any(inv_diag <= 0):
        raise SolverError("matrix has a non-positive diagonal; not SPD")
    M = spla.LinearOperator((n, n), matvec=lambda x: inv_diag * x, dtype=float)
    u, info = spla.cg(matrix, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    if info != 0:
        raise SolverError(f"conjugate gradients did not converge in {maxiter} iterations")
    return u


def factorize(matrix):
    """Sparse LU factorization of the reduced (SPD) system matrix."""
    try:
        return spla.splu(sp.csc_matrix(matrix), permc_spec="MMD_AT_PLUS_A",
                         diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from None


def _lu_solve(lu, matrix, rhs):
    u = lu.solve(rhs)
    return u + lu.solve(rhs - matrix @ u)  # one step of iterative refinement


def solve(system, method="auto"):
    """Solve an assembled system and return the :class:`TemperatureField`.

    ``method`` is ``"direct"``, ``"cg"`` or ``"auto"`` (direct up to
    200 000 unknowns, conjugate gradients above).
    """
    if not system.well_posed:
        raise IllPosedProblemError(
            "no Dirichlet or Robin boundary: the stiffness matrix is singular "
            "(constant temperatures are in its null space)")
    if method == "auto":
        method = "direct" if system.size <= DIRECT_SOLVE_LIMIT else "cg"
    if method == "direct":
        u = _lu_solve(factorize(system.matrix), system.matrix, system.rhs)
    elif method == "cg":
        u = pcg(system.matrix, system.rhs)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    if not np.all(np.isfinite(u)):
        raise SolverError("solver returned non-finite values")
    _check_residual(system.matrix, u, system.rhs)
    u[system.dirichlet_nodes] = system.dirichlet_values
    return TemperatureField(system.mesh, u, system)


def evaluate(field, sensors):
    """Interpolate ``field`` at sensor positions (barycentric, exact at nodes)."""
    P = sensors.interpolation_matrix(field.mesh)
    return P @ field.values


def heat_balance(field):
    """Heat leaving through Dirichlet and Robin boundaries vs generated heat (W/m).

    Dirichlet outflow is the nodal reaction ``-(K u - f)`` of the volume
    equations; Robin outflow is ``integral h (T - T0)``.
    """
    s = field.system
    if s is None:
        raise ProblemError("field carries no assembled system")
    u = field.values
    mesh = s.mesh
    n = mesh.n_nodes
    robin_nodal = np.zeros(n)
    robin_out = 0.0
    full = s.full_matrix
    if s.robin:
        idx, h, t0 = s.robin
        a, b = mesh.edges[idx, 0], mesh.edges[idx, 1]
        L = mesh.edge_lengths[idx]
        ta, tb = u[a], u[b]
        ra = h * L / 6.0 * (2 * ta + tb) - h * t0 * L / 2.0
        rb = h * L / 6.0 * (ta + 2 * tb) - h * t0 * L / 2.0
        robin_nodal = np.bincount(a, ra, minlength=n) + np.bincount(b, rb, minlength=n)
        robin_out = float(robin_nodal.sum())
    residual = full @ u - s.full_rhs  # includes Robin terms
    dirichlet_out = -float(residual[s.dirichlet_nodes].sum())
    # volume source is the load minus the Robin T0 part
    source = float(s.full_rhs.sum())
    if s.robin:
        idx, h, t0 = s.robin
        source -= float((h * t0 * mesh.edge_lengths[idx]).sum())
    return {"source": source, "dirichlet_outflow": dirichlet_out, "robin_outflow": robin_out,
            "total_outflow": dirichlet_out + robin_out}


class ForwardModel:
    """Mesh + problem + operating points, solved repeatedly for new parameters.

    One factorization per parameter vector is shared by all operating points.
    """

    def __init__(self, mesh, spec, operating_points=None, method="auto"):
        spec.check(mesh)
        self.mesh = mesh
        self.spec = spec
        self.operating_points = tuple(operating_points or (OperatingPoint(),))
        self.method = method
        self.discretization = Discretization(mesh)

    @property
    def slot_names(self):
        return self.spec.slot_names()

    def systems(self, params):
        return [assemble(self.mesh, self.spec, params, op, self.discretization)
                for op in self.operating_points]

    def solve_all(self, params):
        systems = self.systems(params)
        if not systems[0].well_posed:
            raise IllPosedProblemError("forward problem has no Dirichlet or Robin boundary")
        method = self.method
        if method == "auto":
            method = "direct" if systems[0].size <= DIRECT_SOLVE_LIMIT else "cg"
        if method == "cg":
            return [solve(s, "cg") for s in systems]
        lu = factorize(systems[0].matrix)
        fields = []
        for s in systems:
            u = _lu_solve(lu, s.matrix, s.rhs)
            if not np.all(np.isfinite(u)):
                raise SolverError("solver returned non-finite values")
            _check_residual(s.matrix, u, s.rhs)
            u[s.dirichlet_nodes] = s.dirichlet_values
            fields.append(TemperatureField(self.mesh, u, s))
        return fields

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermocal.exceptions import MeshError, OutOfDomainError
from thermocal.geometry import (BACKGROUND, COPPER_LOWER, COPPER_UPPER, INNER, INSULATION, JACKET,
                                LAYER, MACHINE_REGIONS, SOURCE, SYMMETRY, MachineGeometry,
                                build_example1, build_example2, build_machine_quadrant)
from thermocal.mesh import Mesh, SensorSet


def test_example1_total_area_is_exact():
    mesh = build_example1(1.0, 1.0, (0.5, 0.5), 0.2, resolution=20)
    assert abs(mesh.areas.sum() - 1.0) <= 1e-12


def test_example1_zero_radius_rejected():
    with pytest.raises(MeshError):
        build_example1(disk_radius=0.0)


def test_example1_disk_area_within_five_percent():
    r = 0.2
    mesh = build_example1(disk_radius=r, resolution=64)
    assert abs(mesh.region_area(SOURCE) / (math.pi * r ** 2) - 1) < 0.05


@pytest.mark.parametrize("kw", [
    dict(width=0.0), dict(height=-1.0),
    dict(disk_center=(0.1, 0.5), disk_radius=0.2),  # touches the left side
    dict(disk_radius=0.2, resolution=8),  # fewer than 4 elements across the disk
])
def test_example1_invalid_inputs(kw):
    with pytest.raises(MeshError):
        build_example1(**kw)


def test_example2_has_three_tags():
    mesh = build_example2(disk_radius=0.2, annulus_outer_radius=0.3, resolution=64)
    assert set(mesh.region_tags) == {BACKGROUND, SOURCE, LAYER}


def test_example2_empty_layer_rejected():
    with pytest.raises(MeshError):
        build_example2(disk_radius=0.2, annulus_outer_radius=0.2)


def test_example2_layer_area_within_five_percent():
    mesh = build_example2(disk_radius=0.2, annulus_outer_radius=0.3, resolution=64)
    exact = math.pi * (0.3 ** 2 - 0.2 ** 2)
    assert abs(mesh.region_area(LAYER) / exact - 1) < 0.05


def test_rectangle_sides_form_boundary():
    mesh = build_example1(2.0, 1.0, (1.0, 0.5), 0.2, resolution=40)
    assert mesh.n_nodes == 41 * 21
    assert sorted(mesh.boundary_tags) == [1, 2, 3, 4]
    assert abs(mesh.edge_lengths.sum() - 6.0) < 1e-12


@pytest.fixture(scope="module")
def quadrant():
    return build_machine_quadrant(resolution=0.002)


def test_machine_quadrant_regions(quadrant):
    assert set(quadrant.region_tags) == set(MACHINE_REGIONS.values())
    g = MachineGeometry()
    assert abs(quadrant.areas.sum() / g.quadrant_area() - 1) < 1e-3
    for tag in (COPPER_LOWER, COPPER_UPPER, INSULATION):
        assert quadrant.region_components(tag) == g.slots_per_quadrant


def test_machine_boundaries(quadrant):
    assert set(quadrant.boundary_tags) == {JACKET, SYMMETRY}
    jacket = quadrant.nodes[quadrant.boundary_nodes([JACKET])]
    assert np.allclose(np.hypot(*jacket.T), MachineGeometry().outer_radius)


def test_machine_hollow_shaft_has_inner_boundary():
    mesh = build_machine_quadrant(MachineGeometry(inner_radius=0.005), resolution=0.002)
    inner = mesh.nodes[mesh.boundary_nodes([INNER])]
    assert np.allclose(np.hypot(*inner.T), 0.005)


def test_lower_layer_lies_outside_upper_layer(quadrant):
    r = np.hypot(*quadrant.centroids.T)
    assert r[quadrant.regions == COPPER_LOWER].min() > r[quadrant.regions == COPPER_UPPER].max()


@pytest.mark.parametrize("kw", [
    dict(rotor_radius=0.05),  # beyond the bore
    dict(slot_width_fraction=1.0),
    dict(liner_thickness=0.01),
])
def test_machine_invalid_geometry(kw):
    with pytest.raises(MeshError):
        build_machine_quadrant(MachineGeometry(**kw), resolution=0.002)


# mesh invariants ---------------------------------------------------------------

def _two_triangles():
    nodes = [[0, 0], [1, 0], [1, 1], [0, 1]]
    tris = [[0, 1, 2], [0, 2, 3]]
    edges = [[0, 1], [1, 2], [2, 3], [3, 0]]
    return nodes, tris, edges


def test_mesh_rejects_clockwise_triangle():
    nodes, tris, edges = _two_triangles()
    tris[0] = [0, 2, 1]
    with pytest.raises(MeshError):
        Mesh(nodes, tris, [1, 1], edges, [1, 1, 1, 1])


def test_mesh_rejects_bad_index():
    nodes, tris, edges = _two_triangles()
    edges[0] = [0, 7]
    with pytest.raises(MeshError):
        Mesh(nodes, tris, [1, 1], edges, [1, 1, 1, 1])


def test_mesh_rejects_incomplete_boundary():
    nodes, tris, edges = _two_triangles()
    with pytest.raises(MeshError):
        Mesh(nodes, tris, [1, 1], edges[:3], [1, 1, 1])


def test_mesh_arrays_are_read_only():
    nodes, tris, edges = _two_triangles()
    mesh = Mesh(nodes, tris, [1, 1], edges, [1, 1, 1, 1])
    with pytest.raises(ValueError):
        mesh.nodes[0, 0] = 5.0


# point location --------------------------------------------------------------------

SMALL = build_example1(resolution=16)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, SMALL.n_nodes - 1))
def test_locate_on_node_gives_unit_barycentric(k):
    tri, bary = SMALL.locate(SMALL.nodes[k])
    verts = list(SMALL.triangles[tri])
    assert k in verts
    assert bary[verts.index(k)] == 1.0
    assert bary.sum() == 1.0


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_locate_interior_reproduces_point(x, y):
    tri, bary = SMALL.locate((x, y))
    assert np.all(bary >= 0) and abs(bary.sum() - 1) < 1e-15
    assert np.allclose(bary @ SMALL.nodes[SMALL.triangles[tri]], (x, y), atol=1e-12)


def test_locate_snaps_within_tolerance():
    eps = 0.5e-9 * SMALL.diameter
    tri, bary = SMALL.locate((1.0 + eps, 0.3))
    assert np.allclose(bary @ SMALL.nodes[SMALL.triangles[tri]], (1.0, 0.3), atol=1e-12)


def test_locate_outside_raises():
    with pytest.raises(OutOfDomainError):
        SMALL.locate((1.0 + 1e-6, 0.3))


def test_sensor_interpolation_is_exact_for_linear_field():
    pts = np.array([[0.13, 0.71], [0.5, 0.5], [0.999, 0.001]])
    P = SensorSet.from_points(pts).interpolation_matrix(SMALL)
    u = 2 * SMALL.nodes[:, 0] - 3 * SMALL.nodes[:, 1] + 1
    assert np.allclose(P @ u, 2 * pts[:, 0] - 3 * pts[:, 1] + 1, atol=1e-13)


def test_duplicate_sensor_ids_rejected():
    with pytest.raises(MeshError):
        SensorSet.from_points([[0.1, 0.1], [0.2, 0.2]], ids=["a", "a"])

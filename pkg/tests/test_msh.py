import numpy as np
import pytest

from thermocal.exceptions import MshFormatError
from thermocal.geometry import build_example2
from thermocal.msh import format_msh, parse_msh, read_msh, write_msh

SQUARE = """$MeshFormat
2.2 0 8
$EndMeshFormat
$PhysicalNames
1
2 1 "body"
$EndPhysicalNames
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
6
1 1 2 7 1 1 2
2 1 2 7 2 2 3
3 1 2 8 3 3 4
4 1 2 8 4 4 1
5 2 2 1 1 1 2 3
6 2 2 1 1 1 3 4
$EndElements
"""


def test_round_trip_preserves_mesh(tmp_path):
    mesh = build_example2(resolution=24)
    path = tmp_path / "m.msh"
    write_msh(mesh, path)
    back = read_msh(path)
    assert np.array_equal(back.nodes, mesh.nodes)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.regions, mesh.regions)
    assert np.array_equal(back.edge_tags, mesh.edge_tags)
    assert format_msh(back) == path.read_text()


def test_parse_small_file():
    mesh = parse_msh(SQUARE)
    assert mesh.n_nodes == 4 and mesh.n_triangles == 2
    assert sorted(mesh.boundary_tags) == [7, 8]


def test_clockwise_triangles_are_flipped():
    text = SQUARE.replace("5 2 2 1 1 1 2 3", "5 2 2 1 1 1 3 2")
    mesh = parse_msh(text)
    assert np.all(mesh.areas > 0)


def _line_of(text, needle):
    return text.splitlines().index(needle) + 1


@pytest.mark.parametrize("old,new", [
    ("6 2 2 1 1 1 3 4", "6 3 2 1 1 1 3 4 2"),  # quadrilateral
    ("6 2 2 1 1 1 3 4", "6 2 2 1 1 1 3 9"),  # undefined node
    ("6 2 2 1 1 1 3 4", "6 2 2 1 1 1 3"),  # too few nodes
])
def test_bad_element_reports_line(old, new):
    text = SQUARE.replace(old, new)
    with pytest.raises(MshFormatError) as exc:
        parse_msh(text, path="bad.msh")
    assert exc.value.line == _line_of(text, new)
    assert "bad.msh" in str(exc.value)


def test_wrong_version_rejected():
    with pytest.raises(MshFormatError) as exc:
        parse_msh(SQUARE.replace("2.2 0 8", "4.1 0 8"))
    assert exc.value.line == 2


def test_node_count_mismatch_rejected():
    with pytest.raises(MshFormatError):
        parse_msh(SQUARE.replace("$Nodes\n4", "$Nodes\n5"))


def test_missing_end_rejected():
    with pytest.raises(MshFormatError):
        parse_msh(SQUARE.replace("$EndElements\n", ""))


def test_written_file_readable_by_meshio(tmp_path):
    meshio = pytest.importorskip("meshio")
    mesh = build_example2(resolution=16)
    path = tmp_path / "m.msh"
    write_msh(mesh, path)
    m = meshio.read(path)
    assert len(m.points) == mesh.n_nodes
    assert sum(len(c.data) for c in m.cells if c.type == "triangle") == mesh.n_triangles

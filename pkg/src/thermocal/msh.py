"""Reader and writer for the ASCII MSH 2.2 subset used by thermocal.

Only 2-node lines (type 1, boundary edges) and 3-node triangles (type 2)
are accepted. The first element tag is the physical tag.
"""

from __future__ import annotations

import os

import numpy as np

from .exceptions import MeshError, MshFormatError
from .mesh import Mesh, signed_areas

LINE, TRIANGLE = 1, 2
_NODES_PER_TYPE = {LINE: 2, TRIANGLE: 3}


def _sections(lines, path):
    """Yield (name, header_line_number, body) for each $Section."""
    i = 0
    n = len(lines)
    while i < n:
        raw = lines[i].strip()
        if not raw:
            i += 1
            continue
        if not raw.startswith("$") or raw.startswith("$End"):
            raise MshFormatError(f"expected a section header, got {raw!r}", i + 1, path)
        name = raw[1:]
        start = i + 1
        j = start
        while j < n and lines[j].strip() != f"$End{name}":
            if lines[j].strip().startswith("$") and lines[j].strip() != f"$End{name}":
                raise MshFormatError(f"section ${name} not closed before {lines[j].strip()!r}", j + 1, path)
            j += 1
        if j == n:
            raise MshFormatError(f"missing $End{name}", i + 1, path)
        yield name, i + 1, lines[start:j]
        i = j + 1


def _ints(text, lineno, path):
    try:
        return [int(v) for v in text.split()]
    except ValueError:
        raise MshFormatError(f"expected integers, got {text.strip()!r}", lineno, path) from None


def read_msh(path):
    """Parse an MSH 2.2 ASCII file into a :class:`Mesh`.

    Triangles with clockwise node order are flipped. Errors carry the
    offending line number.
    """
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    return parse_msh(lines, path=os.fspath(path))


def parse_msh(lines, path=None):
    if isinstance(lines, str):
        lines = lines.splitlines()
    node_ids = None
    coords = None
    elements = None
    for name, hdr, body in _sections(lines, path):
        if name == "MeshFormat":
            if len(body) != 1 or body[0].split()[:3] != ["2.2", "0", "8"]:
                raise MshFormatError("unsupported $MeshFormat, need '2.2 0 8'", hdr + 1, path)
        elif name == "Nodes":
            node_ids, coords = _parse_nodes(body, hdr, path)
        elif name == "Elements":
            elements = _parse_elements(body, hdr, path)
        elif name == "PhysicalNames":
            continue
        else:
            raise MshFormatError(f"unsupported section ${name}", hdr, path)
    if coords is None or elements is None:
        raise MshFormatError("file needs $Nodes and $Elements sections", None, path)

    index = {nid: k for k, nid in enumerate(node_ids)}
    tris, regions, edges, edge_tags = [], [], [], []
    for lineno, etype, tag, conn in elements:
        try:
            local = [index[c] for c in conn]
        except KeyError as exc:
            raise MshFormatError(f"element references undefined node {exc.args[0]}", lineno, path) from None
        if etype == TRIANGLE:
            tris.append(local)
            regions.append(tag)
        else:
            edges.append(local)
            edge_tags.append(tag)
    if not tris:
        raise MshFormatError("no triangles in file", None, path)
    tris = np.array(tris, np.int64)
    area = signed_areas(coords, tris)
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    try:
        return Mesh(coords, tris, regions, np.array(edges, np.int64).reshape(-1, 2), edge_tags)
    except MeshError as exc:
        raise MshFormatError(str(exc), None, path) from None


def _parse_nodes(body, hdr, path):
    if not body:
        raise MshFormatError("empty $Nodes section", hdr, path)
    count = _ints(body[0], hdr + 1, path)
    if len(count) != 1 or count[0] != len(body) - 1:
        raise MshFormatError(f"$Nodes count does not match {len(body) - 1} node lines", hdr + 1, path)
    ids = []
    xy = np.empty((count[0], 2))
    for k, text in enumerate(body[1:]):
        lineno = hdr + 2 + k
        parts = text.split()
        if len(parts) != 4:
            raise MshFormatError("node line needs 'id x y z'", lineno, path)
        try:
            ids.append(int(parts[0]))
            xy[k] = float(parts[1]), float(parts[2])
        except ValueError:
            raise MshFormatError(f"bad node line {text.strip()!r}", lineno, path) from None
    if len(set(ids)) != len(ids):
        raise MshFormatError("duplicate node id", hdr + 1, path)
    return ids, xy


def _parse_elements(body, hdr, path):
    if not body:
        raise MshFormatError("empty $Elements section", hdr, path)
    count = _ints(body[0], hdr + 1, path)
    if len(count) != 1 or count[0] != len(body) - 1:
        raise MshFormatError(f"$Elements count does not match {len(body) - 1} element lines", hdr + 1, path)
    out = []
    for k, text in enumerate(body[1:]):
        lineno = hdr + 2 + k
        v = _ints(text, lineno, path)
        if len(v) < 3:
            raise MshFormatError("truncated element line", lineno, path)
        _, etype, ntags = v[:3]
        if etype not in _NODES_PER_TYPE:
            raise MshFormatError(f"unsupported element type {etype}", lineno, path)
        if ntags < 1:
            raise MshFormatError("element needs a physical tag", lineno, path)
        conn = v[3 + ntags:]
        if len(conn) != _NODES_PER_TYPE[etype]:
            raise MshFormatError(f"element type {etype} needs {_NODES_PER_TYPE[etype]} nodes", lineno, path)
        out.append((lineno, etype, v[3], conn))
    return out


def format_msh(mesh):
    """Render ``mesh`` as MSH 2.2 ASCII text (deterministic)."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_nodes)]
    out += [f"{k + 1} {x:.17g} {y:.17g} 0" for k, (x, y) in enumerate(mesh.nodes)]
    out += ["$EndNodes", "$Elements", str(len(mesh.edges) + mesh.n_triangles)]
    eid = 1
    for (a, b), tag in zip(mesh.edges, mesh.edge_tags):
        out.append(f"{eid} {LINE} 2 {tag} {tag} {a + 1} {b + 1}")
        eid += 1
    for (a, b, c), tag in zip(mesh.triangles, mesh.regions):
        out.append(f"{eid} {TRIANGLE} 2 {tag} {tag} {a + 1} {b + 1} {c + 1}")
        eid += 1
    out.append("$EndElements")
    return "\n".join(out) + "\n"


def write_msh(mesh, path):
    from .reporting import atomic_write_text

    atomic_write_text(path, format_msh(mesh))

"""Tagged triangular meshes, sensor sets and point location."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import MeshError, OutOfDomainError

SNAP_FACTOR = 1e-9  # snap tolerance relative to the domain diameter


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def signed_areas(nodes, triangles):
    p0 = nodes[triangles[:, 0]]
    p1 = nodes[triangles[:, 1]]
    p2 = nodes[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _edge_keys(a, b, n):
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    return lo * n + hi


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D triangle mesh with region and boundary tags.

    Parameters
    ----------
    nodes : (n, 2) array of coordinates in meters.
    triangles : (m, 3) array of node indices, counterclockwise.
    regions : (m,) integer region tag per triangle.
    edges : (k, 2) array of boundary edge node indices.
    edge_tags : (k,) integer boundary tag per edge.
    region_names, boundary_names : optional name -> tag maps.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    region_names: dict = field(default_factory=dict)
    boundary_names: dict = field(default_factory=dict)

    def __post_init__(self):
        nodes = _frozen(self.nodes, float).reshape(-1, 2)
        tris = _frozen(self.triangles, np.int64).reshape(-1, 3)
        regions = _frozen(self.regions, np.int64).reshape(-1)
        edges = _frozen(self.edges, np.int64).reshape(-1, 2)
        edge_tags = _frozen(self.edge_tags, np.int64).reshape(-1)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_tags", edge_tags)
        object.__setattr__(self, "region_names", dict(self.region_names))
        object.__setattr__(self, "boundary_names", dict(self.boundary_names))
        self._validate()

    def _validate(self):
        n = len(self.nodes)
        if len(self.triangles) == 0:
            raise MeshError("mesh has no triangles")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("non-finite node coordinates")
        if len(self.regions) != len(self.triangles):
            raise MeshError("one region tag per triangle required")
        if len(self.edge_tags) != len(self.edges):
            raise MeshError("one boundary tag per edge required")
        for name, arr in (("triangle", self.triangles), ("boundary edge", self.edges)):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise MeshError(f"{name} references an invalid node index")
        if np.any(self.areas <= 0.0):
            bad = int(np.flatnonzero(self.areas <= 0.0)[0])
            raise MeshError(f"triangle {bad} has non-positive signed area")

        t = self.triangles
        keys = np.concatenate([_edge_keys(t[:, 0], t[:, 1], n),
                               _edge_keys(t[:, 1], t[:, 2], n),
                               _edge_keys(t[:, 2], t[:, 0], n)])
        uniq, counts = np.unique(keys, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        boundary = np.sort(uniq[counts == 1])
        tagged = _edge_keys(self.edges[:, 0], self.edges[:, 1], n)
        tagged_sorted = np.sort(tagged)
        if np.any(np.diff(tagged_sorted) == 0):
            raise MeshError("boundary edge tagged more than once")
        if len(tagged_sorted) != len(boundary) or np.any(tagged_sorted != boundary):
            raise MeshError("boundary edges do not match the topological boundary")

    # geometry -----------------------------------------------------------
    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def areas(self):
        return signed_areas(self.nodes, self.triangles)

    @property
    def centroids(self):
        return self.nodes[self.triangles].mean(axis=1)

    @property
    def edge_lengths(self):
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def diameter(self):
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    @property
    def region_tags(self):
        return tuple(int(t) for t in np.unique(self.regions))

    @property
    def boundary_tags(self):
        return tuple(int(t) for t in np.unique(self.edge_tags))

    def region_area(self, tag):
        return float(self.areas[self.regions == tag].sum())

    def region_tag(self, key):
        """Resolve a region name or integer-like key to a tag."""
        return _resolve(key, self.region_names, self.region_tags, "region")

    def boundary_tag(self, key):
        return _resolve(key, self.boundary_names, self.boundary_tags, "boundary")

    def boundary_nodes(self, tags=None):
        mask = np.ones(len(self.edges), bool) if tags is None else np.isin(self.edge_tags, list(tags))
        return np.unique(self.edges[mask])

    def region_components(self, tag):
        """Number of edge-connected components of the triangles carrying ``tag``."""
        idx = np.flatnonzero(self.regions == tag)
        if idx.size == 0:
            return 0
        n = self.n_nodes
        t = self.triangles[idx]
        keys = np.concatenate([_edge_keys(t[:, 0], t[:, 1], n),
                               _edge_keys(t[:, 1], t[:, 2], n),
                               _edge_keys(t[:, 2], t[:, 0], n)])
        owner = np.tile(np.arange(len(idx)), 3)
        order = np.argsort(keys, kind="stable")
        ks, ow = keys[order], owner[order]
        same = np.flatnonzero(ks[1:] == ks[:-1])
        adj = sp.coo_matrix((np.ones(len(same)), (ow[same], ow[same + 1])),
                            shape=(len(idx), len(idx)))
        ncomp, _ = sp.csgraph.connected_components(adj, directed=False)
        return int(ncomp)

    def digest(self):
        """SHA-256 over coordinates, connectivity and tags."""
        h = hashlib.sha256()
        for a in (self.nodes, self.triangles, self.regions, self.edges, self.edge_tags):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    # point location ------------------------------------------------------
    def locate(self, point):
        """Find the triangle containing ``point``.

        Returns ``(triangle_index, barycentric)`` with barycentric coordinates
        in [0, 1] summing to one. Points within ``1e-9 * diameter`` outside
        the domain are snapped to the nearest boundary point.
        """
        p = np.asarray(point, dtype=float).reshape(2)
        tri, bary = self._locate_inside(p)
        if tri is not None:
            return tri, bary
        q, dist = self._nearest_boundary_point(p)
        if dist > SNAP_FACTOR * self.diameter:
            raise OutOfDomainError(
                f"point ({p[0]:.17g}, {p[1]:.17g}) lies {dist:.3g} m outside the mesh")
        tri, bary = self._locate_inside(q, slack=1e-9)
        if tri is None:  # pragma: no cover - guarded by the projection above
            raise OutOfDomainError(f"could not snap point {tuple(p)} into the mesh")
        return tri, bary

    def _barycentric(self, p):
        t = self.triangles
        x0, y0 = self.nodes[t[:, 0]].T
        x1, y1 = self.nodes[t[:, 1]].T
        x2, y2 = self.nodes[t[:, 2]].T
        det = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        l0 = ((y1 - y2) * (p[0] - x2) + (x2 - x1) * (p[1] - y2)) / det
        l1 = ((y2 - y0) * (p[0] - x2) + (x0 - x2) * (p[1] - y2)) / det
        return np.stack([l0, l1, 1.0 - l0 - l1], axis=1)

    def _locate_inside(self, p, slack=1e-12):
        lam = self._barycentric(p)
        worst = lam.min(axis=1)
        k = int(np.argmax(worst))
        if worst[k] < -slack:
            return None, None
        verts = self.triangles[k]
        hit = np.flatnonzero(np.all(self.nodes[verts] == p, axis=1))
        if hit.size:
            bary = np.zeros(3)
            bary[hit[0]] = 1.0
            return k, bary
        bary = np.clip(lam[k], 0.0, 1.0)
        return k, bary / bary.sum()

    def _nearest_boundary_point(self, p):
        a = self.nodes[self.edges[:, 0]]
        b = self.nodes[self.edges[:, 1]]
        ab = b - a
        s = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        q = a + s[:, None] * ab
        d = np.hypot(*(q - p).T)
        k = int(np.argmin(d))
        return q[k], float(d[k])


def _resolve(key, names, tags, what):
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        tag = int(key)
    elif key in names:
        tag = int(names[key])
    else:
        try:
            tag = int(key)
        except (TypeError, ValueError):
            raise MeshError(f"unknown {what} {key!r}; known names: {sorted(names)}") from None
    if tag not in tags:
        raise MeshError(f"{what} tag {tag} not present in mesh")
    return tag


@dataclass(frozen=True)
class Sensor:
    id: str
    position: tuple
    group: str = ""


@dataclass(frozen=True)
class SensorSet:
    """Named point sensors; ``group`` labels sensor families for reporting."""

    sensors: tuple

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise MeshError("duplicate sensor id")
        if not ids:
            raise MeshError("sensor set is empty")

    @classmethod
    def from_points(cls, points, ids=None, groups=None):
        points = np.asarray(points, float).reshape(-1, 2)
        ids = ids or [f"s{i}" for i in range(len(points))]
        groups = groups or [""] * len(points)
        return cls(tuple(Sensor(str(i), (float(x), float(y)), str(g))
                         for i, (x, y), g in zip(ids, points, groups)))

    @property
    def ids(self):
        return tuple(s.id for s in self.sensors)

    @property
    def groups(self):
        return tuple(s.group for s in self.sensors)

    @property
    def positions(self):
        return np.array([s.position for s in self.sensors], float)

    def __len__(self):
        return len(self.sensors)

    def interpolation_matrix(self, mesh):
        """Sparse (n_sensors, n_nodes) barycentric interpolation operator."""
        rows, cols, vals = [], [], []
        for i, s in enumerate(self.sensors):
            tri, bary = mesh.locate(s.position)
            rows.extend([i, i, i])
            cols.extend(mesh.triangles[tri])
            vals.extend(bary)
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(self), mesh.n_nodes))


class AllNodes:
    """Target selector meaning 'every mesh node is a sensor' (full-field data)."""

    def ids(self, mesh):
        return tuple(f"n{i}" for i in range(mesh.n_nodes))

    def interpolation_matrix(self, mesh):
        return sp.identity(mesh.n_nodes, format="csr")

    def __repr__(self):
        return "AllNodes()"


ALL_NODES = AllNodes()


def target_ids(targets, mesh):
    if isinstance(targets, AllNodes):
        return targets.ids(mesh)
    return targets.ids

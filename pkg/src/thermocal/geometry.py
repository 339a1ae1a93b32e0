"""Structured meshers for the rectangle examples and a machine-like quadrant.

Regions are assigned by classifying triangle centroids. The rectangle meshes
are uniform grids split into right triangles, so their total area is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import MeshError
from .mesh import Mesh

# rectangle side tags
BOTTOM, RIGHT, TOP, LEFT = 1, 2, 3, 4
SIDE_NAMES = {"bottom": BOTTOM, "right": RIGHT, "top": TOP, "left": LEFT}

BACKGROUND, SOURCE, LAYER = 1, 2, 3

# machine region tags
SHAFT, ROTOR_IRON, AIR_GAP, STATOR_IRON, INSULATION, COPPER_LOWER, COPPER_UPPER = range(1, 8)
MACHINE_REGIONS = {
    "shaft": SHAFT,
    "rotor_iron": ROTOR_IRON,
    "air_gap": AIR_GAP,
    "stator_iron": STATOR_IRON,
    "insulation": INSULATION,
    "copper_lower": COPPER_LOWER,
    "copper_upper": COPPER_UPPER,
}
JACKET, SYMMETRY, INNER = 1, 2, 3
MACHINE_BOUNDARIES = {"jacket": JACKET, "symmetry": SYMMETRY, "inner": INNER}


def _rect_grid(width, height, resolution):
    if width <= 0 or height <= 0:
        raise MeshError("rectangle dimensions must be positive")
    if resolution < 1:
        raise MeshError("resolution must be a positive cell count")
    nx = int(resolution)
    ny = max(1, int(round(nx * height / width)))
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # node (j, i) -> index j*(nx+1)+i
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = (j * (nx + 1) + i).ravel()
    n10, n01 = n00 + 1, n00 + nx + 1
    n11 = n01 + 1
    tris = np.empty((2 * nx * ny, 3), np.int64)
    tris[0::2] = np.column_stack([n00, n10, n11])
    tris[1::2] = np.column_stack([n00, n11, n01])

    b = np.arange(nx)
    l = np.arange(ny)
    top0 = ny * (nx + 1)
    edges = np.concatenate([
        np.column_stack([b, b + 1]),
        np.column_stack([l * (nx + 1) + nx, (l + 1) * (nx + 1) + nx]),
        np.column_stack([top0 + b + 1, top0 + b]),
        np.column_stack([(l + 1) * (nx + 1), l * (nx + 1)]),
    ])
    tags = np.concatenate([np.full(nx, BOTTOM), np.full(ny, RIGHT),
                           np.full(nx, TOP), np.full(ny, LEFT)])
    h = max(width / nx, height / ny)
    return nodes, tris, edges, tags, h


def _check_disk(width, height, center, radius):
    cx, cy = center
    if radius <= 0:
        raise MeshError("disk radius must be positive")
    if not (cx - radius > 0 and cx + radius < width and cy - radius > 0 and cy + radius < height):
        raise MeshError("disk must lie strictly inside the rectangle")


def build_example1(width=1.0, height=1.0, disk_center=(0.5, 0.5), disk_radius=0.2,
                   resolution=64):
    """Rectangle with an embedded circular heat-source disk.

    Region 1 is the background, region 2 the disk. Sides carry tags
    bottom=1, right=2, top=3, left=4 so the problem definition chooses
    which are isothermal and which adiabatic.
    """
    return _build_rect(width, height, disk_center, disk_radius, None, resolution)


def build_example2(width=1.0, height=1.0, disk_center=(0.5, 0.5), disk_radius=0.2,
                   annulus_outer_radius=0.3, resolution=64):
    """Example 1 plus an annular layer (region 3) around the disk."""
    if annulus_outer_radius <= disk_radius:
        raise MeshError("annulus outer radius must exceed the disk radius")
    return _build_rect(width, height, disk_center, disk_radius, annulus_outer_radius, resolution)


def _build_rect(width, height, center, r_in, r_out, resolution):
    _check_disk(width, height, center, r_in if r_out is None else r_out)
    if r_in <= 0:
        raise MeshError("disk radius must be positive")
    nodes, tris, edges, tags, h = _rect_grid(width, height, resolution)
    if 2 * r_in / h < 4:
        raise MeshError(f"resolution too coarse: {2 * r_in / h:.2f} elements across the disk, need 4")
    if r_out is not None and (r_out - r_in) / h < 1:
        raise MeshError("resolution too coarse to resolve the annular layer")
    c = nodes[tris].mean(axis=1)
    r = np.hypot(c[:, 0] - center[0], c[:, 1] - center[1])
    regions = np.full(len(tris), BACKGROUND)
    if r_out is not None:
        regions[r < r_out] = LAYER
    regions[r < r_in] = SOURCE
    names = {"background": BACKGROUND, "source": SOURCE}
    if r_out is not None:
        names["layer"] = LAYER
    return Mesh(nodes, tris, regions, edges, tags, names, dict(SIDE_NAMES))


@dataclass(frozen=True)
class MachineGeometry:
    """Radii and slot dimensions of the simplified machine quadrant (meters).

    The defaults describe a plausible small four-pole machine; they are a
    shipped example, not a survey of any specific machine.
    """

    shaft_radius: float = 0.014
    rotor_radius: float = 0.0475
    bore_radius: float = 0.0480
    slot_opening_radius: float = 0.0495
    slot_bottom_radius: float = 0.0650
    outer_radius: float = 0.0800
    slots_per_quadrant: int = 9
    slot_width_fraction: float = 0.5  # of the slot pitch angle
    liner_thickness: float = 0.0006
    separator_thickness: float = 0.0008
    inner_radius: float = 0.0  # > 0 makes a hollow shaft with an inner boundary

    @property
    def radii(self):
        return (self.shaft_radius, self.rotor_radius, self.bore_radius,
                self.slot_opening_radius, self.slot_bottom_radius, self.outer_radius)

    def quadrant_area(self):
        return math.pi / 4 * (self.outer_radius ** 2 - self.inner_radius ** 2)


def _subdivide(breaks, h, minimum=1):
    pts = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(minimum, int(math.ceil((b - a) / h - 1e-9)))
        pts.extend(np.linspace(a, b, n + 1)[1:])
    return np.asarray(pts)


def build_machine_quadrant(geometry=None, resolution=0.001, angular_resolution=None):
    """Quarter cross-section of a slotted machine on a polar structured grid.

    Parameters
    ----------
    geometry : MachineGeometry, optional
    resolution : float
        Target radial element size in meters.
    angular_resolution : float, optional
        Target arc length of the angular divisions at the slot mid radius;
        defaults to ``resolution``.

    The outer arc is tagged ``jacket`` (1), the two straight cuts
    ``symmetry`` (2) and, for a hollow shaft, the inner arc ``inner`` (3).
    """
    g = geometry or MachineGeometry()
    radii = (g.inner_radius,) + g.radii
    if g.inner_radius < 0 or any(b <= a for a, b in zip(radii[:-1], radii[1:])):
        raise MeshError(f"machine radii must be strictly increasing, got {radii}")
    if g.slots_per_quadrant < 1:
        raise MeshError("need at least one slot per quadrant")
    if not 0 < g.slot_width_fraction < 1:
        raise MeshError("slot width fraction must lie in (0, 1); slots would overlap")
    if resolution <= 0:
        raise MeshError("resolution must be positive")

    pitch = (math.pi / 2) / g.slots_per_quadrant
    half = 0.5 * g.slot_width_fraction * pitch
    r_mid = 0.5 * (g.slot_opening_radius + g.slot_bottom_radius)
    liner_ang = g.liner_thickness / r_mid
    depth = g.slot_bottom_radius - g.slot_opening_radius
    if 2 * liner_ang >= 2 * half or 2 * g.liner_thickness + g.separator_thickness >= depth:
        raise MeshError("insulation fills the whole slot; slots overlap or are empty")

    r_sep_lo = g.slot_opening_radius + 0.5 * depth - 0.5 * g.separator_thickness
    r_sep_hi = r_sep_lo + g.separator_thickness
    r_breaks = [g.inner_radius, g.shaft_radius, g.rotor_radius, g.bore_radius,
                g.slot_opening_radius, g.slot_opening_radius + g.liner_thickness,
                r_sep_lo, r_sep_hi, g.slot_bottom_radius - g.liner_thickness,
                g.slot_bottom_radius, g.outer_radius]
    rs = _subdivide(r_breaks, resolution)
    if g.inner_radius == 0.0:
        rs = rs[1:]  # the origin becomes a single fan node

    ang_h = (angular_resolution or resolution) / r_mid
    a_breaks = [0.0]
    for k in range(g.slots_per_quadrant):
        c = (k + 0.5) * pitch
        a_breaks += [c - half, c - half + liner_ang, c + half - liner_ang, c + half, (k + 1) * pitch]
    a_breaks[-1] = math.pi / 2
    phis = _subdivide(a_breaks, ang_h)
    phis[-1] = math.pi / 2

    nr, na = len(rs), len(phis)
    R, P = np.meshgrid(rs, phis, indexing="ij")  # node (i, j) -> i*na + j
    nodes = np.column_stack([(R * np.cos(P)).ravel(), (R * np.sin(P)).ravel()])
    nodes[np.arange(nr) * na, 1] = 0.0
    nodes[np.arange(nr) * na + na - 1, 0] = 0.0

    i, j = np.meshgrid(np.arange(nr - 1), np.arange(na - 1), indexing="ij")
    n00 = (i * na + j).ravel()
    n01, n10 = n00 + 1, n00 + na
    n11 = n10 + 1
    tris = [np.column_stack([n00, n10, n11]), np.column_stack([n00, n11, n01])]
    cell_r = np.repeat(0.5 * (rs[:-1] + rs[1:]), na - 1)
    cell_p = np.tile(0.5 * (phis[:-1] + phis[1:]), nr - 1)
    rc = [cell_r, cell_r]
    pc = [cell_p, cell_p]

    edges, tags = [], []
    jj = np.arange(na - 1)
    ii = np.arange(nr - 1)
    outer0 = (nr - 1) * na
    edges.append(np.column_stack([outer0 + jj, outer0 + jj + 1]))
    tags.append(np.full(na - 1, JACKET))
    edges.append(np.column_stack([(ii + 1) * na + na - 1, ii * na + na - 1]))
    tags.append(np.full(nr - 1, SYMMETRY))
    if g.inner_radius == 0.0:
        origin = len(nodes)
        nodes = np.vstack([nodes, [0.0, 0.0]])
        tris.append(np.column_stack([np.full(na - 1, origin), jj, jj + 1]))
        rc.append(np.full(na - 1, 0.5 * rs[0]))
        pc.append(0.5 * (phis[:-1] + phis[1:]))
        edges.append(np.column_stack([np.r_[origin, ii * na], np.r_[0, (ii + 1) * na]]))
        tags.append(np.full(nr, SYMMETRY))
        edges.append(np.column_stack([[na - 1], [origin]]))
        tags.append([SYMMETRY])
    else:
        edges.append(np.column_stack([ii * na, (ii + 1) * na]))
        tags.append(np.full(nr - 1, SYMMETRY))
        edges.append(np.column_stack([jj + 1, jj]))
        tags.append(np.full(na - 1, INNER))

    tris = np.vstack(tris)
    cr = np.concatenate(rc)
    cp = np.concatenate(pc)
    regions = _classify_machine(g, cr, cp, pitch, half, liner_ang, r_sep_lo, r_sep_hi)
    bnames = {"jacket": JACKET, "symmetry": SYMMETRY}
    if g.inner_radius > 0:
        bnames["inner"] = INNER
    return Mesh(nodes, tris, regions, np.vstack(edges), np.concatenate(tags),
                dict(MACHINE_REGIONS), bnames)


def _classify_machine(g, r, phi, pitch, half, liner_ang, r_sep_lo, r_sep_hi):
    reg = np.full(len(r), STATOR_IRON)
    reg[r < g.bore_radius] = AIR_GAP
    reg[r < g.rotor_radius] = ROTOR_IRON
    reg[r < g.shaft_radius] = SHAFT

    local = np.mod(phi, pitch) - 0.5 * pitch  # angle from the nearest slot centre
    in_slot = (np.abs(local) < half) & (r > g.slot_opening_radius) & (r < g.slot_bottom_radius)
    reg[in_slot] = INSULATION
    core = (in_slot & (np.abs(local) < half - liner_ang)
            & (r > g.slot_opening_radius + g.liner_thickness)
            & (r < g.slot_bottom_radius - g.liner_thickness))
    reg[core & (r < r_sep_lo)] = COPPER_UPPER
    reg[core & (r > r_sep_hi)] = COPPER_LOWER
    return reg

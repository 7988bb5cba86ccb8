"""Polygonal meshes: data model, generators, regularity diagnostics and file IO.

A mesh is a collection of simple, counter-clockwise polygonal cells covering a
planar domain.  Every cell side appears exactly once in the global edge list;
each edge carries a fixed unit normal ``n_e`` pointing from the lower-indexed
incident cell to the higher-indexed one (outward on the boundary).  Cells see
that normal through a per-side orientation sign ``sigma = n_e . n_outward``.

Mesh objects are immutable after construction and safe to share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


class MeshError(Exception):
    """Base class for mesh construction and validation failures."""


class MeshFormatError(MeshError):
    """Raised for unreadable or malformed mesh files."""


class MeshGeometryError(MeshError):
    """Raised for degenerate or inconsistent mesh geometry."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _polygon_signed_area(coords: np.ndarray) -> float:
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper intersection test for two open segments (shared endpoints ignored)."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


@dataclass(frozen=True)
class ElementGeometry:
    """Per-cell geometry: centroid fan triangulation and edge orientation data.

    ``fan_triangles[i]`` is the coordinate triple (centroid, v_i, v_{i+1}); the
    triangles partition the cell when it is star-shaped with respect to the
    centroid.  ``edge_signs[i] = +1`` when the global edge normal coincides
    with the cell's outward normal on side ``i`` and ``-1`` otherwise.
    """

    cell_id: int
    centroid: np.ndarray
    diameter: float
    area: float
    fan_triangles: np.ndarray
    fan_areas: np.ndarray
    edge_ids: np.ndarray
    edge_signs: np.ndarray
    outward_normals: np.ndarray
    edge_lengths: np.ndarray
    star_shaped: bool

    @property
    def n_sides(self) -> int:
        return len(self.edge_ids)


@dataclass(frozen=True, eq=False)
class PolyMesh:
    """Immutable polygonal mesh.

    Attributes
    ----------
    vertices : (V, 2) float array
    cells : tuple of int arrays
        Counter-clockwise vertex loops.
    edge_vertices : (E, 2) int array
        Directed endpoint pair (a, b) of every edge; the direction is taken
        from the loop of the lower-indexed incident cell, so rotating the unit
        tangent clockwise yields the stored normal.
    edge_cells : (E, 2) int array
        (left, right) incident cells; right is -1 on the boundary.  The left
        cell is the one the normal points away from.
    edge_normals : (E, 2) float array
        Unit normals n_e; outward on boundary edges.
    boundary_edges : int array
        Edge ids with exactly one incident cell.
    cell_edges / cell_edge_signs : tuples of int arrays
        Per cell, side-ordered global edge ids and orientation signs.
    """

    vertices: np.ndarray
    cells: tuple
    edge_vertices: np.ndarray
    edge_cells: np.ndarray
    edge_normals: np.ndarray
    boundary_edges: np.ndarray
    cell_edges: tuple
    cell_edge_signs: tuple
    dimension: int = 2

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edge_vertices)

    def cell_coords(self, cell_id: int) -> np.ndarray:
        return self.vertices[self.cells[cell_id]]

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edge_vertices[:, 1]] - self.vertices[self.edge_vertices[:, 0]]
        return _freeze(np.hypot(d[:, 0], d[:, 1]))

    @cached_property
    def geometries(self) -> tuple:
        return tuple(element_geometry(self, c) for c in range(self.n_cells))

    @cached_property
    def cell_areas(self) -> np.ndarray:
        return _freeze(np.array([g.area for g in self.geometries]))

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        return _freeze(np.array([g.diameter for g in self.geometries]))

    @cached_property
    def h(self) -> float:
        """Mesh size: the largest cell diameter."""
        return float(self.cell_diameters.max())

    def is_boundary_edge(self, edge_id: int) -> bool:
        return self.edge_cells[edge_id, 1] < 0


def element_geometry(mesh: PolyMesh, cell_id: int) -> ElementGeometry:
    """Compute centroid, diameter, fan triangulation and edge data for a cell."""
    loop = mesh.cells[cell_id]
    coords = mesh.vertices[loop]
    m = len(loop)

    area = _polygon_signed_area(coords)
    centroid = coords.mean(axis=0)
    diff = coords[:, None, :] - coords[None, :, :]
    diameter = float(np.sqrt((diff**2).sum(axis=2)).max())

    nxt = np.roll(coords, -1, axis=0)
    tris = np.stack(
        [np.broadcast_to(centroid, (m, 2)), coords, nxt], axis=1
    )
    # signed area of (c, v_i, v_{i+1}); positive iff the centroid sees side i
    # from the interior.
    fan_areas = 0.5 * (
        (coords[:, 0] - centroid[0]) * (nxt[:, 1] - centroid[1])
        - (coords[:, 1] - centroid[1]) * (nxt[:, 0] - centroid[0])
    )
    star = bool(np.all(fan_areas > 1e-14 * diameter**2))

    edge_ids = mesh.cell_edges[cell_id]
    signs = mesh.cell_edge_signs[cell_id]
    tangents = nxt - coords
    lengths = np.hypot(tangents[:, 0], tangents[:, 1])
    outward = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1) / lengths[:, None]

    return ElementGeometry(
        cell_id=cell_id,
        centroid=_freeze(centroid),
        diameter=diameter,
        area=area,
        fan_triangles=_freeze(tris),
        fan_areas=_freeze(fan_areas),
        edge_ids=edge_ids,
        edge_signs=signs,
        outward_normals=_freeze(outward),
        edge_lengths=_freeze(lengths),
        star_shaped=star,
    )


def _build_mesh(vertices: np.ndarray, cells: Sequence[Sequence[int]]) -> PolyMesh:
    """Construct the edge topology and validate all mesh invariants."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshGeometryError("vertices must be an (n, 2) array")
    nv = len(vertices)

    loops = []
    referenced = np.zeros(nv, dtype=bool)
    for c, raw in enumerate(cells):
        loop = np.asarray(raw, dtype=int)
        if len(loop) < 3:
            raise MeshGeometryError(f"cell {c}: needs at least 3 vertices")
        if np.any(loop < 0) or np.any(loop >= nv):
            raise MeshGeometryError(f"cell {c}: vertex index out of range")
        if len(set(loop.tolist())) != len(loop):
            raise MeshGeometryError(f"cell {c}: repeated vertex in loop")
        coords = vertices[loop]
        area = _polygon_signed_area(coords)
        if area <= 0:
            raise MeshGeometryError(
                f"cell {c}: nonpositive area (clockwise orientation or degenerate)"
            )
        # simplicity: no two non-adjacent sides may cross
        m = len(loop)
        for i in range(m):
            for j in range(i + 1, m):
                if j == i + 1 or (i == 0 and j == m - 1):
                    continue
                if _segments_intersect(
                    coords[i], coords[(i + 1) % m], coords[j], coords[(j + 1) % m]
                ):
                    raise MeshGeometryError(f"cell {c}: self-intersecting polygon")
        referenced[loop] = True
        loops.append(_freeze(loop))
    if not np.all(referenced):
        orphan = int(np.flatnonzero(~referenced)[0])
        raise MeshGeometryError(f"vertex {orphan} is not referenced by any cell")

    # collect sides keyed by undirected vertex pair, in deterministic order
    side_map: dict = {}
    for c, loop in enumerate(loops):
        m = len(loop)
        for i in range(m):
            a, b = int(loop[i]), int(loop[(i + 1) % m])
            side_map.setdefault((min(a, b), max(a, b)), []).append((c, i, a, b))

    n_edges = len(side_map)
    edge_vertices = np.empty((n_edges, 2), dtype=int)
    edge_cells = np.full((n_edges, 2), -1, dtype=int)
    cell_edges = [np.empty(len(loop), dtype=int) for loop in loops]
    cell_edge_signs = [np.empty(len(loop), dtype=int) for loop in loops]

    for e, (key, sides) in enumerate(side_map.items()):
        if len(sides) > 2:
            raise MeshGeometryError(f"edge {key}: shared by more than two cells")
        if len(sides) == 2 and sides[0][0] == sides[1][0]:
            raise MeshGeometryError(f"edge {key}: repeated within cell {sides[0][0]}")
        sides = sorted(sides)  # lower-indexed cell first
        owner_cell, owner_side, a, b = sides[0]
        edge_vertices[e] = (a, b)
        edge_cells[e, 0] = owner_cell
        cell_edges[owner_cell][owner_side] = e
        cell_edge_signs[owner_cell][owner_side] = 1
        if len(sides) == 2:
            other_cell, other_side, oa, ob = sides[1]
            if (oa, ob) != (b, a):
                raise MeshGeometryError(
                    f"edge {key}: incident cells traverse it in the same direction"
                )
            edge_cells[e, 1] = other_cell
            cell_edges[other_cell][other_side] = e
            cell_edge_signs[other_cell][other_side] = -1

    tang = vertices[edge_vertices[:, 1]] - vertices[edge_vertices[:, 0]]
    lengths = np.hypot(tang[:, 0], tang[:, 1])
    if np.any(lengths <= 0):
        raise MeshGeometryError("zero-length edge")
    normals = np.stack([tang[:, 1], -tang[:, 0]], axis=1) / lengths[:, None]
    boundary = np.flatnonzero(edge_cells[:, 1] < 0)

    return PolyMesh(
        vertices=_freeze(vertices),
        cells=tuple(loops),
        edge_vertices=_freeze(edge_vertices),
        edge_cells=_freeze(edge_cells),
        edge_normals=_freeze(normals),
        boundary_edges=_freeze(boundary),
        cell_edges=tuple(_freeze(a) for a in cell_edges),
        cell_edge_signs=tuple(_freeze(a) for a in cell_edge_signs),
    )


def generate_uniform_quad_mesh(
    n: int, domain: tuple = (0.0, 0.0, 1.0, 1.0)
) -> PolyMesh:
    """Build an n-by-n mesh of axis-aligned rectangular cells.

    Parameters
    ----------
    n : int
        Cells per side, at least 1.
    domain : (x0, y0, x1, y1)
        Nondegenerate axis-aligned rectangle.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x0, y0, x1, y1 = map(float, domain)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("degenerate domain rectangle")

    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.stack([xx.ravel(), yy.ravel()], axis=1)

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            cells.append([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)])
    return _build_mesh(vertices, cells)


def generate_perturbed_poly_mesh(
    n: int,
    jitter: float,
    seed: int = 0,
    domain: tuple = (0.0, 0.0, 1.0, 1.0),
) -> PolyMesh:
    """Uniform quad mesh with interior vertices displaced pseudo-randomly.

    Each interior grid vertex moves by a uniform random offset of at most
    ``jitter`` times the grid spacing per coordinate, which turns the cells
    into general quadrilaterals while keeping them star-shaped for
    ``jitter <= 0.3``.  The result is deterministic in ``seed``.
    """
    if not 0.0 <= jitter <= 0.3:
        raise ValueError("jitter must lie in [0, 0.3]")
    if n < 1:
        raise ValueError("n must be at least 1")
    x0, y0, x1, y1 = map(float, domain)
    base = generate_uniform_quad_mesh(n, domain)
    if jitter == 0.0:
        return base

    sx = (x1 - x0) / n
    sy = (y1 - y0) / n
    rng = np.random.default_rng(seed)
    # offsets indexed [j, i] to match vertex id j*(n+1)+i; boundary rows and
    # columns stay pinned
    offsets = rng.uniform(-1.0, 1.0, size=(n + 1, n + 1, 2))
    offsets[:, :, 0] *= jitter * sx
    offsets[:, :, 1] *= jitter * sy
    offsets[0, :, :] = 0.0
    offsets[-1, :, :] = 0.0
    offsets[:, 0, :] = 0.0
    offsets[:, -1, :] = 0.0

    vertices = base.vertices + offsets.reshape(-1, 2)
    cells = [loop.tolist() for loop in base.cells]
    return _build_mesh(vertices, cells)


@dataclass(frozen=True)
class RegularityReport:
    """Measured shape-regularity constants of a mesh.

    ``rho_v[c] = |T|/h_T^2`` and ``rho_e[e] = |e|/h_e`` are the volume and
    edge non-degeneracy ratios; ``kappa[e]`` is ``h_e/h_T`` minimised over the
    incident cells; ``sigma_e`` is the per-cell minimum of the centroid-fan
    triangle height over the edge divided by ``h_T``; ``apex_angle`` is the
    per-cell maximum angle (radians) between a centroid-to-edge-point vector
    and the edge's outward normal.
    """

    rho_v: np.ndarray
    rho_e: np.ndarray
    kappa: np.ndarray
    star_shaped_wrt_centroid: np.ndarray
    sigma_e: np.ndarray
    apex_angle: np.ndarray

    @property
    def all_star_shaped(self) -> bool:
        return bool(np.all(self.star_shaped_wrt_centroid))

    def summary(self) -> dict:
        return {
            "min_rho_v": float(self.rho_v.min()),
            "max_rho_v": float(self.rho_v.max()),
            "min_rho_e": float(self.rho_e.min()),
            "min_kappa": float(self.kappa.min()),
            "max_kappa": float(self.kappa.max()),
            "min_sigma_e": float(self.sigma_e.min()),
            "max_apex_angle_deg": float(np.degrees(self.apex_angle.max())),
            "all_star_shaped": self.all_star_shaped,
        }


def check_regularity(mesh: PolyMesh) -> RegularityReport:
    """Measure the shape-regularity ratios of every cell and edge."""
    n_cells = mesh.n_cells
    rho_v = np.empty(n_cells)
    sigma_e = np.empty(n_cells)
    apex = np.empty(n_cells)
    star = np.empty(n_cells, dtype=bool)
    kappa = np.full(mesh.n_edges, np.inf)

    for c in range(n_cells):
        g = mesh.geometries[c]
        if g.area <= 0:
            raise MeshGeometryError(f"cell {c}: nonpositive area")
        rho_v[c] = g.area / g.diameter**2
        star[c] = g.star_shaped
        heights = 2.0 * g.fan_areas / g.edge_lengths
        sigma_e[c] = float(heights.min()) / g.diameter
        # angle between x_e - centroid and the outward normal is largest at
        # an endpoint of the edge
        loop = mesh.cells[c]
        coords = mesh.vertices[loop]
        nxt = np.roll(coords, -1, axis=0)
        worst = 0.0
        for ends in (coords, nxt):
            vec = ends - g.centroid[None, :]
            norm = np.hypot(vec[:, 0], vec[:, 1])
            cosang = np.einsum("ij,ij->i", vec, g.outward_normals) / norm
            worst = max(worst, float(np.arccos(np.clip(cosang, -1.0, 1.0)).max()))
        apex[c] = worst
        np.minimum.at(kappa, g.edge_ids, g.edge_lengths / g.diameter)

    # straight segments: length equals diameter, so rho_e is identically 1
    rho_e = np.ones(mesh.n_edges)
    return RegularityReport(
        rho_v=_freeze(rho_v),
        rho_e=_freeze(rho_e),
        kappa=_freeze(kappa),
        star_shaped_wrt_centroid=_freeze(star),
        sigma_e=_freeze(sigma_e),
        apex_angle=_freeze(apex),
    )


_MESH_FIELDS = {"dimension", "vertices", "cells"}


def read_mesh(path) -> PolyMesh:
    """Read a mesh from the JSON text format (see :func:`write_mesh`)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MeshFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc

    if not isinstance(doc, dict):
        raise MeshFormatError(f"{path}: top level must be an object")
    unknown = set(doc) - _MESH_FIELDS
    if unknown:
        raise MeshFormatError(f"{path}: unknown fields {sorted(unknown)}")
    missing = _MESH_FIELDS - set(doc)
    if missing:
        raise MeshFormatError(f"{path}: missing fields {sorted(missing)}")
    if doc["dimension"] != 2:
        raise MeshFormatError(f"{path}: only dimension 2 is supported")

    try:
        vertices = np.asarray(doc["vertices"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise MeshFormatError(f"{path}: vertices must be numeric pairs") from exc
    cells = doc["cells"]
    if not isinstance(cells, list) or not all(isinstance(c, list) for c in cells):
        raise MeshFormatError(f"{path}: cells must be a list of index lists")
    try:
        return _build_mesh(vertices, cells)
    except MeshGeometryError as exc:
        raise MeshFormatError(f"{path}: {exc}") from exc


def write_mesh(mesh: PolyMesh, path) -> None:
    """Write a mesh as a JSON document with vertices and CCW cell loops."""
    doc = {
        "dimension": mesh.dimension,
        "vertices": [[float(x), float(y)] for x, y in mesh.vertices],
        "cells": [loop.tolist() for loop in mesh.cells],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def meshes_equal(a: PolyMesh, b: PolyMesh) -> bool:
    """Exact equality of vertices, cells and derived edge data."""
    if a.n_vertices != b.n_vertices or a.n_cells != b.n_cells:
        return False
    if not np.array_equal(a.vertices, b.vertices):
        return False
    if any(not np.array_equal(x, y) for x, y in zip(a.cells, b.cells)):
        return False
    return np.array_equal(a.edge_vertices, b.edge_vertices) and np.array_equal(
        a.edge_cells, b.edge_cells
    )


def flip_edge_orientation(mesh: PolyMesh, edge_ids: Sequence[int]) -> PolyMesh:
    """Return a mesh with the stored normal direction reversed on given edges.

    Only interior edges may be flipped; boundary normals must stay outward.
    Used to verify that assembled systems do not depend on the normal
    direction convention.
    """
    edge_ids = np.atleast_1d(np.asarray(edge_ids, dtype=int))
    flip = np.zeros(mesh.n_edges, dtype=bool)
    flip[edge_ids] = True
    if np.any(flip[mesh.boundary_edges]):
        raise ValueError("cannot flip a boundary edge: normals must point outward")

    edge_vertices = mesh.edge_vertices.copy()
    edge_cells = mesh.edge_cells.copy()
    edge_normals = mesh.edge_normals.copy()
    edge_vertices[flip] = edge_vertices[flip][:, ::-1]
    edge_cells[flip] = edge_cells[flip][:, ::-1]
    edge_normals[flip] *= -1.0

    signs = []
    for c in range(mesh.n_cells):
        s = mesh.cell_edge_signs[c].copy()
        s[flip[mesh.cell_edges[c]]] *= -1
        signs.append(_freeze(s))

    return PolyMesh(
        vertices=mesh.vertices,
        cells=mesh.cells,
        edge_vertices=_freeze(edge_vertices),
        edge_cells=_freeze(edge_cells),
        edge_normals=_freeze(edge_normals),
        boundary_edges=mesh.boundary_edges,
        cell_edges=mesh.cell_edges,
        cell_edge_signs=tuple(signs),
    )


def euler_characteristic(mesh: PolyMesh) -> int:
    """V - E + C; equals 1 for a simply-connected planar mesh."""
    return mesh.n_vertices - mesh.n_edges + mesh.n_cells

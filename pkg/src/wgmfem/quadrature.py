"""Quadrature on segments, triangles and star-shaped polygons.

Polygon rules are assembled by mapping a reference-triangle rule onto the
centroid fan of the cell, so they are exact for polynomials up to the rule
degree whenever the fan is a true partition (star-shaped cell).  All rules
have strictly positive weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import MeshGeometryError, PolyMesh

MAX_EXACTNESS = 50


class QuadratureError(Exception):
    """Requested rule outside the implemented capability."""


@dataclass(frozen=True)
class QuadratureRule:
    """Points (n, 2), positive weights (n,) and the guaranteed exactness degree."""

    points: np.ndarray
    weights: np.ndarray
    exactness: int

    @property
    def n_points(self) -> int:
        return len(self.weights)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract sampled integrand values (n, ...) against the weights."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@lru_cache(maxsize=None)
def gauss_segment(n_points: int) -> tuple:
    """Gauss-Legendre nodes/weights on [-1, 1]; cached, treat as read-only."""
    nodes, weights = np.polynomial.legendre.leggauss(n_points)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


# Reference triangle (0,0)-(1,0)-(0,1), weights summing to 1/2.
_TRI_A = (6.0 + math.sqrt(15.0)) / 21.0
_TRI_B = (6.0 - math.sqrt(15.0)) / 21.0
_TRI_WA = (155.0 + math.sqrt(15.0)) / 2400.0
_TRI_WB = (155.0 - math.sqrt(15.0)) / 2400.0

_TRI_TABLE = {
    1: (
        np.array([[1.0 / 3.0, 1.0 / 3.0]]),
        np.array([0.5]),
    ),
    2: (
        np.array([[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]]),
        np.array([1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]),
    ),
    5: (
        np.array(
            [
                [1.0 / 3.0, 1.0 / 3.0],
                [_TRI_A, _TRI_A],
                [1.0 - 2.0 * _TRI_A, _TRI_A],
                [_TRI_A, 1.0 - 2.0 * _TRI_A],
                [_TRI_B, _TRI_B],
                [1.0 - 2.0 * _TRI_B, _TRI_B],
                [_TRI_B, 1.0 - 2.0 * _TRI_B],
            ]
        ),
        np.array([9.0 / 80.0, _TRI_WA, _TRI_WA, _TRI_WA, _TRI_WB, _TRI_WB, _TRI_WB]),
    ),
}


@lru_cache(maxsize=None)
def _collapsed_triangle_rule(degree: int) -> tuple:
    """Product Gauss rule on the collapsed square; exact to `degree`, positive."""
    m = (degree + 3) // 2  # 2m-1 >= degree+1 absorbs the Jacobian factor
    nodes, wts = gauss_segment(m)
    u = 0.5 * (nodes + 1.0)
    wu = 0.5 * wts
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu * (1.0 - u), wu)
    points = np.stack([uu.ravel(), (vv * (1.0 - uu)).ravel()], axis=1)
    weights = ww.ravel()
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def triangle_rule(degree: int) -> tuple:
    """Reference-triangle points and weights, exact for total degree <= degree."""
    if degree > MAX_EXACTNESS:
        raise QuadratureError(f"triangle exactness {degree} exceeds {MAX_EXACTNESS}")
    degree = max(degree, 1)
    for d, rule in _TRI_TABLE.items():
        if degree <= d:
            return rule
    return _collapsed_triangle_rule(degree)


def cell_quadrature(mesh: PolyMesh, cell_id: int, exactness: int) -> QuadratureRule:
    """Quadrature over a polygonal cell via its centroid fan triangulation."""
    geo = mesh.geometries[cell_id]
    if not geo.star_shaped:
        raise MeshGeometryError(
            f"cell {cell_id}: not star-shaped w.r.t. its centroid; fan rule invalid"
        )
    ref_pts, ref_wts = triangle_rule(exactness)

    tris = geo.fan_triangles  # (m, 3, 2)
    origin = tris[:, 0, :]
    ja = tris[:, 1, :] - origin
    jb = tris[:, 2, :] - origin
    # affine map of the reference rule into every fan triangle
    pts = (
        origin[:, None, :]
        + ref_pts[None, :, 0, None] * ja[:, None, :]
        + ref_pts[None, :, 1, None] * jb[:, None, :]
    )
    wts = 2.0 * geo.fan_areas[:, None] * ref_wts[None, :]
    return QuadratureRule(
        points=pts.reshape(-1, 2), weights=wts.reshape(-1), exactness=exactness
    )


def edge_quadrature(mesh: PolyMesh, edge_id: int, exactness: int) -> QuadratureRule:
    """Gauss rule along an edge; weights sum to the edge length."""
    if exactness > MAX_EXACTNESS:
        raise QuadratureError(f"edge exactness {exactness} exceeds {MAX_EXACTNESS}")
    n = max(1, (exactness + 2) // 2)  # 2n-1 >= exactness
    nodes, wts = gauss_segment(n)
    a = mesh.vertices[mesh.edge_vertices[edge_id, 0]]
    b = mesh.vertices[mesh.edge_vertices[edge_id, 1]]
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[None, :] + nodes[:, None] * half[None, :]
    length = float(np.hypot(*(b - a)))
    return QuadratureRule(points=pts, weights=0.5 * length * wts, exactness=exactness)

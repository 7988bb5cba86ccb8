"""Polynomial bases on cells and edges.

Cell bases are scaled monomials ((x-x_T)/h_T)^a ((y-y_T)/h_T)^b in graded
order, optionally orthonormalized in L2(T) by a Cholesky factorization of the
monomial Gram matrix (the default for k >= 1, where raw monomial conditioning
starts to matter).  Edge bases are Legendre polynomials in the arc-length
parameter, always orthonormal in L2(e).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .fields import DofMap, poly_dim
from .mesh import MeshGeometryError, PolyMesh
from .quadrature import QuadratureRule, cell_quadrature, edge_quadrature


def monomial_exponents(m: int) -> np.ndarray:
    """Exponent pairs (a, b) of the degree-<=m monomials, graded order."""
    out = [(d - j, j) for d in range(m + 1) for j in range(d + 1)]
    return np.array(out, dtype=int)


def _eval_scaled_monomials(points, centroid, h, m, with_grad=False):
    xi = (points[:, 0] - centroid[0]) / h
    eta = (points[:, 1] - centroid[1]) / h
    exps = monomial_exponents(m)
    # powers up to m, cheap and stable for the small degrees used here
    pow_xi = np.vander(xi, m + 1, increasing=True)
    pow_eta = np.vander(eta, m + 1, increasing=True)
    vals = pow_xi[:, exps[:, 0]] * pow_eta[:, exps[:, 1]]
    if not with_grad:
        return vals
    grads = np.zeros((len(points), len(exps), 2))
    a = exps[:, 0]
    b = exps[:, 1]
    ok = a > 0
    grads[:, ok, 0] = (
        a[ok] * pow_xi[:, a[ok] - 1] * pow_eta[:, b[ok]]
    ) / h
    ok = b > 0
    grads[:, ok, 1] = (
        b[ok] * pow_xi[:, a[ok]] * pow_eta[:, b[ok] - 1]
    ) / h
    return vals, grads


@dataclass(frozen=True)
class BasisOptions:
    """Basis construction knobs; None selects the degree-dependent default."""

    orthonormalize: Optional[bool] = None
    cell_exactness: Optional[int] = None
    edge_exactness: Optional[int] = None

    def resolved(self, degree: int) -> tuple:
        orth = self.orthonormalize
        if orth is None:
            orth = degree >= 1
        cell_deg = self.cell_exactness
        if cell_deg is None:
            cell_deg = 2 * (degree + 1) + 2
        edge_deg = self.edge_exactness
        if edge_deg is None:
            edge_deg = 2 * degree + 2
        return orth, cell_deg, edge_deg


@dataclass(frozen=True)
class ElementBasis:
    """Scalar bases for P_k(T) and P_{k+1}(T) sampled at the cell quadrature.

    ``mass_k``/``mass_k1`` are the Gram matrices of the basis actually in use
    (the identity after orthonormalization); ``chol_*`` their lower Cholesky
    factors.  ``transform_*`` maps raw scaled-monomial values to the used
    basis (None when raw).  The vector basis for [P_k(T)]^2 is the scalar one
    tensored with the coordinate directions, x-components first.
    """

    cell_id: int
    degree: int
    orthonormalized: bool
    centroid: np.ndarray
    h: float
    quad: QuadratureRule
    values_k: np.ndarray
    grads_k: np.ndarray
    values_k1: np.ndarray
    grads_k1: np.ndarray
    mass_k: np.ndarray
    mass_k1: np.ndarray
    chol_k: np.ndarray
    chol_k1: np.ndarray
    transform_k: Optional[np.ndarray]
    transform_k1: Optional[np.ndarray]
    cond_k1: float

    @property
    def dim_k(self) -> int:
        return poly_dim(self.degree)

    @property
    def dim_k1(self) -> int:
        return poly_dim(self.degree + 1)

    def evaluate(self, points, order=None, with_grad=False):
        """Basis values (and gradients) at arbitrary points.

        order "k" selects the P_k basis, "k1" the P_{k+1} basis.
        """
        m = self.degree if order in (None, "k") else self.degree + 1
        transform = self.transform_k if m == self.degree else self.transform_k1
        out = _eval_scaled_monomials(points, self.centroid, self.h, m, with_grad)
        if not with_grad:
            return out if transform is None else out @ transform
        vals, grads = out
        if transform is not None:
            vals = vals @ transform
            grads = np.einsum("pid,ij->pjd", grads, transform)
        return vals, grads

    def mass_solve_k(self, rhs: np.ndarray) -> np.ndarray:
        if self.orthonormalized:
            return rhs
        return cho_solve((self.chol_k, True), rhs)

    def mass_solve_k1(self, rhs: np.ndarray) -> np.ndarray:
        if self.orthonormalized:
            return rhs
        return cho_solve((self.chol_k1, True), rhs)


@dataclass(frozen=True)
class EdgeBasis:
    """Orthonormal Legendre basis in the arc-length parameter of an edge."""

    edge_id: int
    degree: int
    start: np.ndarray
    tangent: np.ndarray  # (b - a), not normalized
    length: float
    quad: QuadratureRule
    values: np.ndarray  # (nq, degree+1)

    @property
    def dim(self) -> int:
        return self.degree + 1

    def evaluate(self, points) -> np.ndarray:
        s = ((points - self.start[None, :]) @ self.tangent) / self.length**2
        return _legendre_orthonormal(2.0 * s - 1.0, self.degree, self.length)


def _legendre_orthonormal(shat, degree, length):
    vander = np.polynomial.legendre.legvander(shat, degree)
    scale = np.sqrt((2.0 * np.arange(degree + 1) + 1.0) / length)
    return vander * scale[None, :]


def build_edge_basis(mesh: PolyMesh, edge_id: int, degree: int, exactness: int) -> EdgeBasis:
    quad = edge_quadrature(mesh, edge_id, exactness)
    a = mesh.vertices[mesh.edge_vertices[edge_id, 0]]
    b = mesh.vertices[mesh.edge_vertices[edge_id, 1]]
    tangent = b - a
    length = float(np.hypot(*tangent))
    s = ((quad.points - a[None, :]) @ tangent) / length**2
    return EdgeBasis(
        edge_id=edge_id,
        degree=degree,
        start=a,
        tangent=tangent,
        length=length,
        quad=quad,
        values=_legendre_orthonormal(2.0 * s - 1.0, degree, length),
    )


def build_element_basis(
    mesh: PolyMesh, cell_id: int, degree: int, options: BasisOptions = BasisOptions()
) -> ElementBasis:
    """Construct the P_k/P_{k+1} bases of a cell; requires a star-shaped cell."""
    geo = mesh.geometries[cell_id]
    if not geo.star_shaped:
        raise MeshGeometryError(
            f"cell {cell_id}: not star-shaped w.r.t. its centroid"
        )
    orth, cell_deg, _ = options.resolved(degree)
    quad = cell_quadrature(mesh, cell_id, cell_deg)

    vals_k1, grads_k1 = _eval_scaled_monomials(
        quad.points, geo.centroid, geo.diameter, degree + 1, with_grad=True
    )
    nk = poly_dim(degree)
    vals_k = vals_k1[:, :nk]
    grads_k = grads_k1[:, :nk, :]

    w = quad.weights
    mass_k1 = vals_k1.T @ (w[:, None] * vals_k1)
    mass_k1 = 0.5 * (mass_k1 + mass_k1.T)
    cond = float(np.linalg.cond(mass_k1))

    if orth:
        chol = np.linalg.cholesky(mass_k1)
        transform_k1 = solve_triangular(chol, np.eye(len(mass_k1)), lower=True).T
        # transform is upper triangular, so the orthonormal P_k basis is the
        # leading subset of the orthonormal P_{k+1} basis
        transform_k = transform_k1[:nk, :nk]
        vals_k1 = vals_k1 @ transform_k1
        grads_k1 = np.einsum("pid,ij->pjd", grads_k1, transform_k1)
        vals_k = vals_k1[:, :nk]
        grads_k = grads_k1[:, :nk, :]
        mass_k1 = np.eye(poly_dim(degree + 1))
        mass_k = np.eye(nk)
        chol_k1 = np.eye(poly_dim(degree + 1))
        chol_k = np.eye(nk)
    else:
        transform_k1 = None
        transform_k = None
        mass_k = mass_k1[:nk, :nk]
        chol_k1 = np.linalg.cholesky(mass_k1)
        chol_k = np.linalg.cholesky(mass_k)

    return ElementBasis(
        cell_id=cell_id,
        degree=degree,
        orthonormalized=orth,
        centroid=geo.centroid,
        h=geo.diameter,
        quad=quad,
        values_k=vals_k,
        grads_k=grads_k,
        values_k1=vals_k1,
        grads_k1=grads_k1,
        mass_k=mass_k,
        mass_k1=mass_k1,
        chol_k=chol_k,
        chol_k1=chol_k1,
        transform_k=transform_k,
        transform_k1=transform_k1,
        cond_k1=cond,
    )


@dataclass(frozen=True)
class SideTrace:
    """Cell-basis and edge-basis values on one side of a cell, at the edge rule."""

    edge_id: int
    sign: int
    normal: np.ndarray  # outward normal of the cell on this side
    points: np.ndarray
    weights: np.ndarray
    edge_values: np.ndarray  # (nq, k+1)
    values_k: np.ndarray  # (nq, dim P_k)
    values_k1: np.ndarray  # (nq, dim P_{k+1})
    length: float


@dataclass(frozen=True)
class BasisFamily:
    """All cell and edge bases of a mesh for one polynomial degree.

    ``traces[c][i]`` carries everything needed to integrate over side i of
    cell c: the shared edge quadrature, edge-basis values and the traces of
    the cell bases.  ``cell_flux_dofs[c]`` lists the global flux dofs of cell
    c (interior block, then incident edge blocks in side order).
    """

    mesh: PolyMesh
    degree: int
    orthonormalized: bool
    cell_exactness: int
    edge_exactness: int
    cell_bases: tuple
    edge_bases: tuple
    traces: tuple
    dofmap: DofMap
    cell_flux_dofs: tuple

    @property
    def n_cells(self) -> int:
        return self.mesh.n_cells


def build_basis_family(
    mesh: PolyMesh, degree: int, options: BasisOptions = BasisOptions()
) -> BasisFamily:
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    orth, cell_deg, edge_deg = options.resolved(degree)

    edge_bases = tuple(
        build_edge_basis(mesh, e, degree, edge_deg) for e in range(mesh.n_edges)
    )
    cell_bases = tuple(
        build_element_basis(mesh, c, degree, options) for c in range(mesh.n_cells)
    )

    dofmap = DofMap(degree=degree, n_cells=mesh.n_cells, n_edges=mesh.n_edges)
    traces = []
    flux_dofs = []
    for c in range(mesh.n_cells):
        geo = mesh.geometries[c]
        eb_list = []
        for i, e in enumerate(geo.edge_ids):
            eb = edge_bases[e]
            vals_k1 = cell_bases[c].evaluate(eb.quad.points, order="k1")
            eb_list.append(
                SideTrace(
                    edge_id=int(e),
                    sign=int(geo.edge_signs[i]),
                    normal=geo.outward_normals[i],
                    points=eb.quad.points,
                    weights=eb.quad.weights,
                    edge_values=eb.values,
                    values_k=vals_k1[:, : poly_dim(degree)],
                    values_k1=vals_k1,
                    length=eb.length,
                )
            )
        traces.append(tuple(eb_list))
        idx = [np.arange(dofmap.interior_slice(c).start, dofmap.interior_slice(c).stop)]
        for e in geo.edge_ids:
            sl = dofmap.edge_slice(int(e))
            idx.append(np.arange(sl.start, sl.stop))
        flux_dofs.append(np.concatenate(idx))

    return BasisFamily(
        mesh=mesh,
        degree=degree,
        orthonormalized=orth,
        cell_exactness=cell_deg,
        edge_exactness=edge_deg,
        cell_bases=cell_bases,
        edge_bases=edge_bases,
        traces=tuple(traces),
        dofmap=dofmap,
        cell_flux_dofs=tuple(flux_dofs),
    )

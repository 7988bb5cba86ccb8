"""Local L2 projections of smooth fields onto the discrete spaces.

All projections are element- or edge-local mass solves against quadrature
moments of the input field.  Inputs are pointwise-evaluable callables taking
an (n, 2) array of points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .basis import BasisFamily
from .fields import FluxField, ScalarField


@dataclass(frozen=True)
class SmoothScalarField:
    """Pointwise-evaluable scalar field; value maps (n, 2) points to (n,)."""

    value: Callable
    gradient: Optional[Callable] = None
    name: str = ""


@dataclass(frozen=True)
class SmoothVectorField:
    """Pointwise-evaluable vector field; value maps (n, 2) points to (n, 2)."""

    value: Callable
    divergence: Optional[Callable] = None
    name: str = ""


def as_scalar_field(f) -> SmoothScalarField:
    return f if isinstance(f, SmoothScalarField) else SmoothScalarField(value=f)


def as_vector_field(f) -> SmoothVectorField:
    return f if isinstance(f, SmoothVectorField) else SmoothVectorField(value=f)


def project_interior(field, family: BasisFamily) -> np.ndarray:
    """Cellwise L2 projection onto [P_k(T)]^2 (the operator Q_0).

    Returns an (n_cells, 2*dim P_k) array in the interior dof layout
    (x-component block, then y-component block).
    """
    field = as_vector_field(field)
    out = np.empty((family.n_cells, family.dofmap.interior_dim))
    nk = family.dofmap.interior_dim // 2
    for c, eb in enumerate(family.cell_bases):
        q = field.value(eb.quad.points)
        wv = eb.quad.weights[:, None] * eb.values_k
        moments = np.stack([wv.T @ q[:, 0], wv.T @ q[:, 1]], axis=1)
        coeffs = eb.mass_solve_k(moments)
        out[c, :nk] = coeffs[:, 0]
        out[c, nk:] = coeffs[:, 1]
    return out


def project_edge_normal(field, family: BasisFamily) -> np.ndarray:
    """Edgewise L2 projection of q . n_e onto P_k(e) (the operator Q_b).

    Returns an (n_edges, k+1) array of coefficients in the orthonormal edge
    basis.
    """
    field = as_vector_field(field)
    mesh = family.mesh
    out = np.empty((mesh.n_edges, family.dofmap.edge_dim))
    for e, eb in enumerate(family.edge_bases):
        qn = field.value(eb.quad.points) @ mesh.edge_normals[e]
        out[e] = eb.values.T @ (eb.quad.weights * qn)
    return out


def project_flux(field, family: BasisFamily) -> FluxField:
    """The combined projection Q_h = {Q_0, Q_b(. n_e) n_e} into the flux space."""
    interior = project_interior(field, family)
    edges = project_edge_normal(field, family)
    flux = FluxField(family.dofmap)
    dm = family.dofmap
    flux.coeffs[: dm.n_cells * dm.interior_dim] = interior.ravel()
    flux.coeffs[dm.n_cells * dm.interior_dim :] = edges.ravel()
    return flux


def project_scalar(field, family: BasisFamily) -> ScalarField:
    """Cellwise L2 projection onto P_{k+1}(T) (the operator mapping into W_h)."""
    field = as_scalar_field(field)
    out = ScalarField(family.dofmap)
    for c, eb in enumerate(family.cell_bases):
        u = field.value(eb.quad.points)
        moments = eb.values_k1.T @ (eb.quad.weights * u)
        out.coeffs[family.dofmap.scalar_slice(c)] = eb.mass_solve_k1(moments)
    return out

"""Degree-of-freedom layout and coefficient vectors for the two discrete spaces.

The flux space couples cell-interior vector polynomials of degree k with
scalar edge polynomials of degree k (normal-component multipliers of the edge
normal).  The scalar space holds cellwise polynomials of degree k+1.  Global
layout: all interior blocks first (cell by cell), then all edge blocks; scalar
dofs are cell by cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def poly_dim(m: int) -> int:
    """Dimension of bivariate polynomials of total degree <= m."""
    return (m + 1) * (m + 2) // 2


@dataclass(frozen=True)
class DofMap:
    degree: int
    n_cells: int
    n_edges: int

    @property
    def interior_dim(self) -> int:
        return 2 * poly_dim(self.degree)

    @property
    def edge_dim(self) -> int:
        return self.degree + 1

    @property
    def scalar_dim(self) -> int:
        return poly_dim(self.degree + 1)

    @property
    def n_flux(self) -> int:
        return self.n_cells * self.interior_dim + self.n_edges * self.edge_dim

    @property
    def n_scalar(self) -> int:
        return self.n_cells * self.scalar_dim

    def interior_slice(self, cell_id: int) -> slice:
        d = self.interior_dim
        return slice(cell_id * d, (cell_id + 1) * d)

    def edge_slice(self, edge_id: int) -> slice:
        base = self.n_cells * self.interior_dim
        d = self.edge_dim
        return slice(base + edge_id * d, base + (edge_id + 1) * d)

    def scalar_slice(self, cell_id: int) -> slice:
        d = self.scalar_dim
        return slice(cell_id * d, (cell_id + 1) * d)


@dataclass
class FluxField:
    """Coefficients of a member of the flux space, conforming to a DofMap."""

    dofmap: DofMap
    coeffs: np.ndarray = None

    def __post_init__(self):
        if self.coeffs is None:
            self.coeffs = np.zeros(self.dofmap.n_flux)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.dofmap.n_flux,):
            raise ValueError(
                f"flux coefficient vector has length {self.coeffs.shape}, "
                f"expected ({self.dofmap.n_flux},)"
            )

    def interior(self, cell_id: int) -> np.ndarray:
        return self.coeffs[self.dofmap.interior_slice(cell_id)]

    def edge(self, edge_id: int) -> np.ndarray:
        return self.coeffs[self.dofmap.edge_slice(edge_id)]

    def copy(self) -> "FluxField":
        return FluxField(self.dofmap, self.coeffs.copy())


@dataclass
class ScalarField:
    """Cellwise degree-(k+1) polynomial coefficients, conforming to a DofMap."""

    dofmap: DofMap
    coeffs: np.ndarray = None

    def __post_init__(self):
        if self.coeffs is None:
            self.coeffs = np.zeros(self.dofmap.n_scalar)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.dofmap.n_scalar,):
            raise ValueError(
                f"scalar coefficient vector has length {self.coeffs.shape}, "
                f"expected ({self.dofmap.n_scalar},)"
            )

    def cell(self, cell_id: int) -> np.ndarray:
        return self.coeffs[self.dofmap.scalar_slice(cell_id)]

    def copy(self) -> "ScalarField":
        return ScalarField(self.dofmap, self.coeffs.copy())

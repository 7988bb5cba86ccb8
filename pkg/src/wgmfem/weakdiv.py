"""Discrete weak divergence: flux space -> cellwise P_{k+1} polynomials.

On each cell the operator is the unique P_{k+1}(T) polynomial whose moments
against every test polynomial phi equal

    -(v_0, grad phi)_T  +  <v_b . n, phi>_{boundary of T},

with the edge values entering through the orientation sign of the shared
normal.  Moment matrices are cached per cell; applying the operator is a
dense matrix-vector product per cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisFamily
from .fields import FluxField, ScalarField


@dataclass(frozen=True)
class WeakDivOperator:
    """Per-cell moment matrices R and coefficient maps D = M^{-1} R.

    ``moments[c][i, j]`` is the weak-divergence functional of local flux dof j
    tested against the i-th P_{k+1} basis function of cell c; ``matrices[c]``
    maps local flux coefficients to P_{k+1} coefficients.
    """

    family: BasisFamily
    moments: tuple
    matrices: tuple


def build_weakdiv(family: BasisFamily) -> WeakDivOperator:
    dm = family.dofmap
    nk = dm.interior_dim // 2
    moments = []
    matrices = []
    for c, eb in enumerate(family.cell_bases):
        n_loc = dm.interior_dim + len(family.traces[c]) * dm.edge_dim
        R = np.zeros((dm.scalar_dim, n_loc))
        w = eb.quad.weights
        R[:, :nk] = -np.einsum("p,pi,pj->ij", w, eb.grads_k1[:, :, 0], eb.values_k)
        R[:, nk : 2 * nk] = -np.einsum(
            "p,pi,pj->ij", w, eb.grads_k1[:, :, 1], eb.values_k
        )
        off = dm.interior_dim
        for t in family.traces[c]:
            R[:, off : off + dm.edge_dim] = t.sign * (
                t.values_k1.T @ (t.weights[:, None] * t.edge_values)
            )
            off += dm.edge_dim
        moments.append(R)
        matrices.append(eb.mass_solve_k1(R))
    return WeakDivOperator(family=family, moments=tuple(moments), matrices=tuple(matrices))


def apply_weakdiv(op: WeakDivOperator, flux: FluxField) -> ScalarField:
    """Apply the operator cell by cell; linear in the flux coefficients."""
    family = op.family
    dm = family.dofmap
    if flux.dofmap != dm:
        raise ValueError("flux field does not conform to the operator's dof layout")
    out = ScalarField(dm)
    for c in range(family.n_cells):
        local = flux.coeffs[family.cell_flux_dofs[c]]
        out.coeffs[dm.scalar_slice(c)] = op.matrices[c] @ local
    return out

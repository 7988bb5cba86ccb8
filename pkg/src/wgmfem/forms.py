"""Bilinear-form assembly into the global sparse saddle-point system.

The system has the block form

    [ A_s  -B^T ] [q]   [G]
    [  B    0   ] [u] = [F]

where A_s combines the weighted mass form (alpha q_0, v_0) with the edge
stabilization rho * sum_T h_T <(q_0-q_b).n, (v_0-v_b).n>, B encodes the
discrete weak divergence tested against the scalar space, G carries the
Dirichlet boundary data and F the load moments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sparse

from .basis import BasisFamily, BasisOptions, build_basis_family
from .fields import DofMap
from .mesh import PolyMesh
from .projection import as_scalar_field
from .weakdiv import WeakDivOperator, build_weakdiv


class CoefficientError(Exception):
    """Diffusion coefficient failed a symmetry or positivity check."""


@dataclass(frozen=True)
class CoefficientField:
    """Matrix-valued coefficient: maps (n, 2) points to (n, 2, 2) SPD matrices.

    ``spd_bound`` declares a uniform lower bound on the smallest eigenvalue;
    it is verified at every quadrature point during assembly.
    """

    value: Callable
    spd_bound: float = 1e-12
    name: str = ""

    def evaluate_checked(self, points: np.ndarray, cell_id: int) -> np.ndarray:
        a = np.asarray(self.value(points), dtype=float)
        if a.shape != (len(points), 2, 2):
            raise CoefficientError(
                f"coefficient returned shape {a.shape}, expected (n, 2, 2)"
            )
        scale = np.abs(a).max() + 1.0
        if np.abs(a[:, 0, 1] - a[:, 1, 0]).max() > 1e-12 * scale:
            raise CoefficientError(f"coefficient not symmetric in cell {cell_id}")
        half_tr = 0.5 * (a[:, 0, 0] + a[:, 1, 1])
        disc = np.sqrt(0.25 * (a[:, 0, 0] - a[:, 1, 1]) ** 2 + a[:, 0, 1] ** 2)
        eigmin = half_tr - disc
        if np.any(eigmin < self.spd_bound - 1e-12 * scale):
            raise CoefficientError(
                f"coefficient eigenvalue {eigmin.min():.3e} below declared bound "
                f"{self.spd_bound:.3e} in cell {cell_id}"
            )
        return a


def identity_coefficient() -> CoefficientField:
    def value(points):
        out = np.zeros((len(points), 2, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0
        return out

    return CoefficientField(value=value, spd_bound=1.0, name="identity")


def constant_coefficient(matrix, name="constant") -> CoefficientField:
    matrix = np.asarray(matrix, dtype=float)
    eigmin = float(np.linalg.eigvalsh(matrix).min())

    def value(points):
        return np.broadcast_to(matrix, (len(points), 2, 2)).copy()

    return CoefficientField(value=value, spd_bound=eigmin, name=name)


@dataclass
class SaddleSystem:
    """Assembled sparse blocks plus the context needed to interpret them."""

    A_s: sparse.csr_matrix
    B: sparse.csr_matrix
    G: np.ndarray
    F: np.ndarray
    rho: float
    family: BasisFamily
    weakdiv: WeakDivOperator
    alpha: CoefficientField

    @property
    def dofmap(self) -> DofMap:
        return self.family.dofmap

    def block_matrix(self) -> sparse.csr_matrix:
        """The full indefinite operator [[A_s, -B^T], [B, 0]]."""
        return sparse.bmat([[self.A_s, -self.B.T], [self.B, None]], format="csr")

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.G, self.F])


def _scatter(blocks, index_lists, shape) -> sparse.csr_matrix:
    rows = np.concatenate(
        [np.repeat(ridx, len(cidx)) for (ridx, cidx), _ in zip(index_lists, blocks)]
    )
    cols = np.concatenate(
        [np.tile(cidx, len(ridx)) for (ridx, cidx), _ in zip(index_lists, blocks)]
    )
    vals = np.concatenate([b.ravel() for b in blocks])
    return sparse.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def assemble_a(family: BasisFamily, alpha: CoefficientField) -> sparse.csr_matrix:
    """The weighted interior mass form (alpha q_0, v_0); touches interior dofs only."""
    dm = family.dofmap
    nk = dm.interior_dim // 2
    blocks, indices = [], []
    for c, eb in enumerate(family.cell_bases):
        a = alpha.evaluate_checked(eb.quad.points, c)
        w = eb.quad.weights
        V = eb.values_k
        loc = np.empty((dm.interior_dim, dm.interior_dim))
        loc[:nk, :nk] = np.einsum("p,pi,pj->ij", w * a[:, 0, 0], V, V)
        loc[:nk, nk:] = np.einsum("p,pi,pj->ij", w * a[:, 0, 1], V, V)
        loc[nk:, :nk] = loc[:nk, nk:].T
        loc[nk:, nk:] = np.einsum("p,pi,pj->ij", w * a[:, 1, 1], V, V)
        idx = family.cell_flux_dofs[c][: dm.interior_dim]
        blocks.append(loc)
        indices.append((idx, idx))
    return _scatter(blocks, indices, (dm.n_flux, dm.n_flux))


def assemble_s(family: BasisFamily, rho: float) -> sparse.csr_matrix:
    """Edge stabilization rho * sum_T h_T <(q_0-q_b).n, (v_0-v_b).n>_{dT}."""
    if rho <= 0:
        raise ValueError("stabilization parameter rho must be positive")
    dm = family.dofmap
    nk = dm.interior_dim // 2
    blocks, indices = [], []
    for c in range(family.n_cells):
        h_T = family.mesh.geometries[c].diameter
        idx = family.cell_flux_dofs[c]
        n_loc = len(idx)
        loc = np.zeros((n_loc, n_loc))
        off = dm.interior_dim
        for t in family.traces[c]:
            # (v_0 - v_b) . n_outward sampled at the edge quadrature points
            rowmat = np.zeros((len(t.weights), n_loc))
            rowmat[:, :nk] = t.values_k * t.normal[0]
            rowmat[:, nk : 2 * nk] = t.values_k * t.normal[1]
            rowmat[:, off : off + dm.edge_dim] = -t.sign * t.edge_values
            loc += rho * h_T * (rowmat.T @ (t.weights[:, None] * rowmat))
            off += dm.edge_dim
        blocks.append(loc)
        indices.append((idx, idx))
    return _scatter(blocks, indices, (dm.n_flux, dm.n_flux))


def assemble_b(family: BasisFamily, weakdiv: WeakDivOperator) -> sparse.csr_matrix:
    """The divergence coupling (weak-div v, w) for all flux/scalar basis pairs."""
    dm = family.dofmap
    blocks, indices = [], []
    for c in range(family.n_cells):
        rows = np.arange(dm.scalar_slice(c).start, dm.scalar_slice(c).stop)
        indices.append((rows, family.cell_flux_dofs[c]))
        blocks.append(weakdiv.moments[c])
    return _scatter(blocks, indices, (dm.n_scalar, dm.n_flux))


def assemble_rhs(family: BasisFamily, f, g) -> tuple:
    """Load moments F_j = (f, w_j)_T and boundary data G on boundary edge dofs.

    The Dirichlet datum g enters through <g, v_b . n> over the domain
    boundary, where boundary edge normals coincide with the outward normal.
    """
    f = as_scalar_field(f)
    g = as_scalar_field(g)
    dm = family.dofmap
    F = np.zeros(dm.n_scalar)
    for c, eb in enumerate(family.cell_bases):
        fv = f.value(eb.quad.points)
        F[dm.scalar_slice(c)] = eb.values_k1.T @ (eb.quad.weights * fv)
    G = np.zeros(dm.n_flux)
    for e in family.mesh.boundary_edges:
        eb = family.edge_bases[e]
        gv = g.value(eb.quad.points)
        G[dm.edge_slice(int(e))] = eb.values.T @ (eb.quad.weights * gv)
    return G, F


def assemble_system(
    mesh: PolyMesh,
    degree: int,
    alpha: CoefficientField,
    f,
    g,
    rho: float = 1.0,
    options: BasisOptions = BasisOptions(),
    family: Optional[BasisFamily] = None,
    weakdiv: Optional[WeakDivOperator] = None,
) -> SaddleSystem:
    """Assemble the complete saddle-point system for given data."""
    if family is None:
        family = build_basis_family(mesh, degree, options)
    if weakdiv is None:
        weakdiv = build_weakdiv(family)
    A = assemble_a(family, alpha)
    S = assemble_s(family, rho)
    B = assemble_b(family, weakdiv)
    G, F = assemble_rhs(family, f, g)
    return SaddleSystem(
        A_s=(A + S).tocsr(),
        B=B,
        G=G,
        F=F,
        rho=rho,
        family=family,
        weakdiv=weakdiv,
        alpha=alpha,
    )


def dump_system(system: SaddleSystem, path) -> None:
    """Write A_s, B, G, F as coordinate triplets (one `row col value` per line)."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, mat in (("A_s", system.A_s), ("B", system.B)):
            coo = mat.tocoo()
            fh.write(f"block {name} rows {coo.shape[0]} cols {coo.shape[1]} nnz {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{r} {c} {v:.17g}\n")
        for name, vec in (("G", system.G), ("F", system.F)):
            nz = np.flatnonzero(vec)
            fh.write(f"block {name} rows {len(vec)} cols 1 nnz {len(nz)}\n")
            for r in nz:
                fh.write(f"{r} 0 {vec[r]:.17g}\n")


def load_system_dump(path) -> dict:
    """Parse a dump back into dense arrays (diagnostic round-trip helper)."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "block":
            raise ValueError(f"{path}: expected block header at line {i + 1}")
        name, rows, cols, nnz = parts[1], int(parts[3]), int(parts[5]), int(parts[7])
        arr = np.zeros((rows, cols))
        for j in range(nnz):
            r, c, v = lines[i + 1 + j].split()
            arr[int(r), int(c)] += float(v)
        out[name] = arr[:, 0] if cols == 1 else arr
        i += 1 + nnz
    return out

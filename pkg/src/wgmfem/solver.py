"""Solvers for the assembled sparse symmetric indefinite system."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .fields import FluxField, ScalarField
from .forms import SaddleSystem

METHODS = ("direct-factorization", "schur-complement-cg", "minres")

# above this many unknowns the default solve switches to the Schur-complement CG
DIRECT_SIZE_LIMIT = 200_000


class SolverError(Exception):
    pass


class SingularSystemError(SolverError):
    """The factorization found a structurally/numerically singular system."""


class NonConvergenceError(SolverError):
    def __init__(self, message, residual_flux=np.inf, residual_scalar=np.inf):
        super().__init__(message)
        self.residual_flux = residual_flux
        self.residual_scalar = residual_scalar


@dataclass(frozen=True)
class SolveOptions:
    method: Optional[str] = None  # None: pick by system size
    tol: float = 1e-10
    max_iter: Optional[int] = None

    def __post_init__(self):
        if self.method is not None and self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class Solution:
    flux: FluxField
    scalar: ScalarField
    method: str
    residual_flux_eq: float
    residual_scalar_eq: float
    iterations: int
    wall_time: float


def _splu(matrix) -> spla.SuperLU:
    try:
        return spla.splu(matrix.tocsc())
    except RuntimeError as exc:
        raise SingularSystemError(f"sparse factorization failed: {exc}") from exc


def solve(system: SaddleSystem, options: SolveOptions = SolveOptions()) -> Solution:
    """Solve the saddle-point system to the requested block-residual tolerance.

    Residual contract: on success both ||A_s q - B^T u - G|| and ||B q - F||
    are at most tol * (||G|| + ||F|| + 1).
    """
    t0 = time.perf_counter()
    dm = system.dofmap
    n_flux, n_scalar = dm.n_flux, dm.n_scalar

    method = options.method
    if method is None:
        method = (
            "direct-factorization"
            if n_flux + n_scalar <= DIRECT_SIZE_LIMIT
            else "schur-complement-cg"
        )

    iterations = 0
    if method == "direct-factorization":
        lu = _splu(system.block_matrix())
        x = lu.solve(system.rhs())
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("factorization produced non-finite solution")
        q, u = x[:n_flux], x[n_flux:]
    elif method == "schur-complement-cg":
        q, u, iterations = _solve_schur(system, options)
    else:
        q, u, iterations = _solve_minres(system, options)

    r_flux = system.A_s @ q - system.B.T @ u - system.G
    r_scalar = system.B @ q - system.F
    res_f = float(np.linalg.norm(r_flux))
    res_s = float(np.linalg.norm(r_scalar))
    bound = options.tol * (np.linalg.norm(system.G) + np.linalg.norm(system.F) + 1.0)
    if res_f > bound or res_s > bound:
        raise NonConvergenceError(
            f"{method} residuals ({res_f:.3e}, {res_s:.3e}) exceed {bound:.3e}",
            residual_flux=res_f,
            residual_scalar=res_s,
        )

    return Solution(
        flux=FluxField(dm, q),
        scalar=ScalarField(dm, u),
        method=method,
        residual_flux_eq=res_f,
        residual_scalar_eq=res_s,
        iterations=iterations,
        wall_time=time.perf_counter() - t0,
    )


def _solve_schur(system: SaddleSystem, options: SolveOptions):
    """Eliminate the flux block: S u = F - B A_s^{-1} G with S = B A_s^{-1} B^T SPD."""
    lu = _splu(system.A_s)
    B = system.B
    n_scalar = B.shape[0]

    def s_apply(u):
        return B @ lu.solve(B.T @ u)

    S = spla.LinearOperator((n_scalar, n_scalar), matvec=s_apply)
    rhs = system.F - B @ lu.solve(system.G)
    counter = _IterCounter()
    maxiter = options.max_iter or max(2000, 20 * n_scalar)
    # modest safety factor: the outer residual contract is re-checked in solve()
    rtol = max(options.tol * 1e-2, 1e-14)
    u, info = spla.cg(S, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, callback=counter)
    if info != 0:
        raise NonConvergenceError(
            f"Schur-complement CG did not converge within {maxiter} iterations"
        )
    q = lu.solve(system.G + B.T @ u)
    return q, u, counter.count


def _solve_minres(system: SaddleSystem, options: SolveOptions):
    """MINRES on the symmetrized form [[A_s, -B^T], [-B, 0]], rhs (G, -F)."""
    K = sparse.bmat(
        [[system.A_s, -system.B.T], [-system.B, None]], format="csr"
    )
    rhs = np.concatenate([system.G, -system.F])
    counter = _IterCounter()
    maxiter = options.max_iter or max(5000, 10 * K.shape[0])
    rtol = max(options.tol * 1e-3, 1e-14)
    x, info = spla.minres(K, rhs, rtol=rtol, maxiter=maxiter, callback=counter)
    if info != 0:
        raise NonConvergenceError(
            f"MINRES did not converge within {maxiter} iterations"
        )
    n_flux = system.dofmap.n_flux
    return x[:n_flux], x[n_flux:], counter.count


class _IterCounter:
    def __init__(self):
        self.count = 0

    def __call__(self, _):
        self.count += 1

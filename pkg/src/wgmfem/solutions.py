"""Manufactured solutions: exact (u, q, f, g) tuples for verification.

Given a scalar expression u(x, y) and an SPD coefficient matrix alpha(x, y),
the flux q = -alpha^{-1} grad(u), the load f = div(q) and the boundary datum
g = -u (the model problem prescribes u = -g) are derived symbolically and
compiled to vectorized callbacks.  Self-consistency of the compiled callbacks
is verifiable via :meth:`ManufacturedSolution.check_consistency`, which
differentiates the flux numerically instead of trusting the symbolic chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from .forms import CoefficientField, identity_coefficient
from .projection import SmoothScalarField, SmoothVectorField

_X, _Y = sp.symbols("x y")


def _compile_scalar(expr):
    fn = sp.lambdify((_X, _Y), expr, "numpy")

    def call(points):
        out = fn(points[:, 0], points[:, 1])
        return np.broadcast_to(np.asarray(out, dtype=float), (len(points),)).copy()

    return call


def _compile_vector(expr_pair):
    fns = [_compile_scalar(e) for e in expr_pair]

    def call(points):
        return np.stack([f(points) for f in fns], axis=1)

    return call


def smooth_scalar_from_expr(expr, name="") -> SmoothScalarField:
    """Build a scalar field (with gradient) from a sympy expression in x, y."""
    expr = sp.sympify(expr)
    grad = (sp.diff(expr, _X), sp.diff(expr, _Y))
    return SmoothScalarField(
        value=_compile_scalar(expr), gradient=_compile_vector(grad), name=name
    )


def smooth_vector_from_expr(expr_pair, name="") -> SmoothVectorField:
    """Build a vector field (with divergence) from two sympy expressions."""
    e0, e1 = (sp.sympify(e) for e in expr_pair)
    div = sp.diff(e0, _X) + sp.diff(e1, _Y)
    return SmoothVectorField(
        value=_compile_vector((e0, e1)), divergence=_compile_scalar(div), name=name
    )


def coefficient_from_matrix_expr(matrix, spd_bound: float, name="") -> CoefficientField:
    matrix = sp.Matrix(matrix)
    entries = [_compile_scalar(matrix[i, j]) for i in range(2) for j in range(2)]

    def value(points):
        out = np.empty((len(points), 2, 2))
        out[:, 0, 0] = entries[0](points)
        out[:, 0, 1] = entries[1](points)
        out[:, 1, 0] = entries[2](points)
        out[:, 1, 1] = entries[3](points)
        return out

    return CoefficientField(value=value, spd_bound=spd_bound, name=name)


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact data for the first-order system: alpha q + grad u = 0, div q = f."""

    name: str
    u: SmoothScalarField
    q: SmoothVectorField
    f: SmoothScalarField
    g: SmoothScalarField  # boundary datum, g = -u
    alpha: CoefficientField

    def check_consistency(self, points: np.ndarray, step: float = 3e-6) -> dict:
        """Sampled residuals of the defining equations.

        ``div_defect`` differentiates q by central differences, so it is an
        oracle independent of the symbolic derivation of f.
        """
        a = self.alpha.value(points)
        qv = self.q.value(points)
        gu = self.u.gradient(points)
        first = np.einsum("pij,pj->pi", a, qv) + gu
        dx = np.array([step, 0.0])
        dy = np.array([0.0, step])
        div_fd = (
            (self.q.value(points + dx)[:, 0] - self.q.value(points - dx)[:, 0])
            + (self.q.value(points + dy)[:, 1] - self.q.value(points - dy)[:, 1])
        ) / (2 * step)
        fv = self.f.value(points)
        return {
            "flux_defect": float(np.abs(first).max()),
            "div_defect": float(np.abs(div_fd - fv).max() / (1.0 + np.abs(fv).max())),
        }


def manufactured_from_expr(name, u_expr, alpha_matrix, spd_bound, alpha_name="") -> ManufacturedSolution:
    u_expr = sp.sympify(u_expr)
    alpha_matrix = sp.Matrix(alpha_matrix)
    grad_u = sp.Matrix([sp.diff(u_expr, _X), sp.diff(u_expr, _Y)])
    q_expr = -(alpha_matrix.inv() * grad_u)
    q_expr = sp.Matrix([sp.cancel(sp.together(e)) for e in q_expr])
    f_expr = sp.cancel(sp.together(sp.diff(q_expr[0], _X) + sp.diff(q_expr[1], _Y)))

    if alpha_matrix == sp.eye(2):
        alpha = identity_coefficient()
    else:
        alpha = coefficient_from_matrix_expr(alpha_matrix, spd_bound, name=alpha_name)
    return ManufacturedSolution(
        name=name,
        u=smooth_scalar_from_expr(u_expr, name=name),
        q=smooth_vector_from_expr((q_expr[0], q_expr[1]), name=f"{name}_flux"),
        f=smooth_scalar_from_expr(f_expr, name=f"{name}_load"),
        g=smooth_scalar_from_expr(-u_expr, name=f"{name}_bc"),
        alpha=alpha,
    )


SOLUTION_EXPRS = {
    "affine": 1 + 2 * _X + 3 * _Y,
    "sinsin": sp.sin(sp.pi * _X) * sp.sin(sp.pi * _Y),
    "polycos": _X**2 * _Y + sp.cos(sp.pi * _Y),
}

# the variable coefficient is uniformly SPD on the unit square (smallest
# eigenvalue stays above 1.7 there)
ALPHA_EXPRS = {
    "identity": (sp.eye(2), 1.0),
    "variable": (
        sp.Matrix([[2 + _X, _Y / 2], [_Y / 2, 2 + _Y]]),
        1.0,
    ),
}


@lru_cache(maxsize=None)
def get_manufactured(solution: str = "sinsin", alpha: str = "identity") -> ManufacturedSolution:
    """Look up a built-in manufactured solution by name."""
    if solution not in SOLUTION_EXPRS:
        raise KeyError(
            f"unknown solution {solution!r}; choose from {sorted(SOLUTION_EXPRS)}"
        )
    if alpha not in ALPHA_EXPRS:
        raise KeyError(f"unknown alpha {alpha!r}; choose from {sorted(ALPHA_EXPRS)}")
    matrix, bound = ALPHA_EXPRS[alpha]
    return manufactured_from_expr(
        f"{solution}-{alpha}",
        SOLUTION_EXPRS[solution],
        matrix,
        bound,
        alpha_name=alpha,
    )

"""Discrete norms, manufactured-solution errors, identity checks and rate studies.

The identity checkers evaluate the scheme's exact algebraic relations
(commuting projection, divergence-pairing rearrangement, inf-sup witness
equality, edge-projection dominance, per-cell conservation) and report the
worst residual together with a measured quadrature tolerance: every smooth
integral is re-evaluated with the exactness raised by six degrees, and the
observed shift estimates the quadrature error of the default rules.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull

from .basis import BasisFamily, BasisOptions, build_basis_family
from .fields import FluxField, ScalarField
from .forms import (
    CoefficientField,
    SaddleSystem,
    assemble_a,
    assemble_b,
    assemble_s,
    assemble_system,
    identity_coefficient,
)
from .mesh import PolyMesh, generate_perturbed_poly_mesh, generate_uniform_quad_mesh
from .projection import (
    SmoothScalarField,
    SmoothVectorField,
    project_flux,
    project_scalar,
)
from .quadrature import cell_quadrature, edge_quadrature
from .solver import Solution, SolveOptions, solve
from .weakdiv import build_weakdiv

BOOST = 6  # extra quadrature exactness used to measure quadrature tolerances


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def triple_bar_norm(flux: FluxField, system: SaddleSystem) -> float:
    """The discrete energy norm sqrt(v^T A_s v) of a flux-space member."""
    v = flux.coeffs
    return math.sqrt(max(float(v @ (system.A_s @ v)), 0.0))


def _cell_side_index(mesh: PolyMesh):
    return [
        {int(e): i for i, e in enumerate(mesh.cell_edges[c])}
        for c in range(mesh.n_cells)
    ]


def h1h_norm(scalar: ScalarField, family: BasisFamily) -> float:
    """Broken H1 norm with edge-jump penalty.

    The jump on an interior edge is (left-cell trace) - (right-cell trace),
    consistent with the stored normal direction; on the boundary it is the
    trace itself.  The jump is projected onto the degree-k edge basis before
    being measured.
    """
    mesh = family.mesh
    dm = family.dofmap
    total = 0.0
    for c, eb in enumerate(family.cell_bases):
        coeffs = scalar.coeffs[dm.scalar_slice(c)]
        gv = np.einsum("pid,i->pd", eb.grads_k1, coeffs)
        total += float(eb.quad.weights @ (gv**2).sum(axis=1))

    side_index = _cell_side_index(mesh)
    for e in range(mesh.n_edges):
        left, right = mesh.edge_cells[e]
        t = family.traces[left][side_index[left][e]]
        jump = t.values_k1 @ scalar.coeffs[dm.scalar_slice(int(left))]
        if right >= 0:
            tr = family.traces[right][side_index[right][e]]
            jump = jump - tr.values_k1 @ scalar.coeffs[dm.scalar_slice(int(right))]
        moments = t.edge_values.T @ (t.weights * jump)
        total += float(moments @ moments) / t.length
    return math.sqrt(total)


def l2_norm_scalar(scalar: ScalarField, family: BasisFamily) -> float:
    dm = family.dofmap
    total = 0.0
    for c, eb in enumerate(family.cell_bases):
        d = scalar.coeffs[dm.scalar_slice(c)]
        y = eb.chol_k1.T @ d
        total += float(y @ y)
    return math.sqrt(total)


def l2_norm_flux_interior(flux: FluxField, family: BasisFamily) -> float:
    """L2 norm of the cell-interior component of a flux-space member."""
    dm = family.dofmap
    nk = dm.interior_dim // 2
    total = 0.0
    for c, eb in enumerate(family.cell_bases):
        d = flux.coeffs[dm.interior_slice(c)]
        for comp in (d[:nk], d[nk:]):
            y = eb.chol_k.T @ comp
            total += float(y @ y)
    return math.sqrt(total)


def defect_energy_norm(
    q_field, family: BasisFamily, alpha: Optional[CoefficientField] = None,
    rho: float = 1.0,
) -> float:
    """Energy norm of (q - projection of q): the weighted L2 defect of the
    interior part plus the stabilization of the trace mismatch, evaluated by
    quadrature against the smooth field."""
    if alpha is None:
        alpha = identity_coefficient()
    dm = family.dofmap
    nk = dm.interior_dim // 2
    q_proj = project_flux(q_field, family)
    total = 0.0
    for c, eb in enumerate(family.cell_bases):
        qv = q_field.value(eb.quad.points)
        sl = dm.interior_slice(c)
        defect = qv - np.stack(
            [
                eb.values_k @ q_proj.coeffs[sl.start : sl.start + nk],
                eb.values_k @ q_proj.coeffs[sl.start + nk : sl.stop],
            ],
            axis=1,
        )
        av = alpha.evaluate_checked(eb.quad.points, c)
        total += float(
            eb.quad.weights @ np.einsum("pi,pij,pj->p", defect, av, defect)
        )
        h_T = family.mesh.geometries[c].diameter
        for t in family.traces[c]:
            qn = q_field.value(t.points) @ t.normal
            # interior-part trace defect minus edge-projection defect of q.n
            q0n_defect = qn - (
                (t.values_k @ q_proj.coeffs[sl.start : sl.start + nk]) * t.normal[0]
                + (t.values_k @ q_proj.coeffs[sl.start + nk : sl.stop]) * t.normal[1]
            )
            qbn_defect = qn - t.sign * (
                t.edge_values @ q_proj.coeffs[dm.edge_slice(t.edge_id)]
            )
            total += rho * h_T * float(t.weights @ (q0n_defect - qbn_defect) ** 2)
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# manufactured-solution errors and convergence rates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorBundle:
    """Errors of a discrete solution against the projected exact solution."""

    triple_bar_q: float
    h1h_u: float
    l2_u: float
    l2_q0: float
    h: float

    def as_dict(self) -> dict:
        return {
            "triple_bar_q": self.triple_bar_q,
            "h1h_u": self.h1h_u,
            "l2_u": self.l2_u,
            "l2_q0": self.l2_q0,
            "h": self.h,
        }


def error_bundle(solution: Solution, manufactured, system: SaddleSystem) -> ErrorBundle:
    family = system.family
    q_proj = project_flux(manufactured.q, family)
    u_proj = project_scalar(manufactured.u, family)
    e_flux = FluxField(family.dofmap, solution.flux.coeffs - q_proj.coeffs)
    e_scal = ScalarField(family.dofmap, solution.scalar.coeffs - u_proj.coeffs)
    return ErrorBundle(
        triple_bar_q=triple_bar_norm(e_flux, system),
        h1h_u=h1h_norm(e_scal, family),
        l2_u=l2_norm_scalar(e_scal, family),
        l2_q0=l2_norm_flux_interior(e_flux, family),
        h=family.mesh.h,
    )


def estimate_rates(errors: Sequence[float], hs: Sequence[float]):
    """Successive log-log slopes; None where a zero error makes it undefined."""
    if len(errors) != len(hs):
        raise ValueError("errors and hs must have equal length")
    rates = []
    for i in range(len(errors) - 1):
        if errors[i] == 0.0 or errors[i + 1] == 0.0:
            rates.append(None)
        else:
            rates.append(
                math.log(errors[i] / errors[i + 1]) / math.log(hs[i] / hs[i + 1])
            )
    return rates


_CSV_COLUMNS = (
    "level",
    "h",
    "triple_bar_q",
    "h1h_u",
    "l2_u",
    "l2_q0",
    "rate_triple",
    "rate_h1h",
    "rate_l2",
)

_RATE_SOURCE = {"rate_triple": "triple_bar_q", "rate_h1h": "h1h_u", "rate_l2": "l2_u"}


@dataclass
class LevelRecord:
    level: int
    n: int
    h: float
    errors: ErrorBundle
    n_flux: int = 0
    n_scalar: int = 0
    solve_seconds: float = 0.0


@dataclass
class ConvergenceReport:
    """Per-level errors and observed orders for one refinement study."""

    degree: int
    solution: str
    alpha: str
    rho: float
    mesh_kind: str
    jitter: float
    domain_convex: bool
    levels: list = field(default_factory=list)

    @property
    def hs(self):
        return [rec.h for rec in self.levels]

    def error_column(self, name: str):
        return [getattr(rec.errors, name) for rec in self.levels]

    def rates(self, name: str):
        return estimate_rates(self.error_column(name), self.hs)

    def final_rate(self, name: str):
        rates = self.rates(name)
        return rates[-1] if rates else None

    @property
    def targets(self) -> dict:
        k = self.degree
        return {"triple_bar_q": k + 1, "h1h_u": k + 1, "l2_u": k + 2, "l2_q0": k + 1}

    def to_csv(self, path) -> None:
        rate_cols = {name: self.rates(src) for name, src in _RATE_SOURCE.items()}
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_CSV_COLUMNS)
            for i, rec in enumerate(self.levels):
                row = [
                    str(rec.level),
                    f"{rec.h:.17g}",
                    f"{rec.errors.triple_bar_q:.17g}",
                    f"{rec.errors.h1h_u:.17g}",
                    f"{rec.errors.l2_u:.17g}",
                    f"{rec.errors.l2_q0:.17g}",
                ]
                for name in ("rate_triple", "rate_h1h", "rate_l2"):
                    if i == 0:
                        row.append("")
                    else:
                        r = rate_cols[name][i - 1]
                        row.append("exact" if r is None else f"{r:.17g}")
                writer.writerow(row)

    def summary(self) -> dict:
        return {
            "degree": self.degree,
            "solution": self.solution,
            "alpha": self.alpha,
            "rho": self.rho,
            "mesh_kind": self.mesh_kind,
            "jitter": self.jitter,
            "domain_convex": self.domain_convex,
            "levels": [
                {"level": rec.level, "n": rec.n, "h": rec.h, **rec.errors.as_dict()}
                for rec in self.levels
            ],
            "observed_rates": {
                name: self.final_rate(src) for name, src in _RATE_SOURCE.items()
            },
            "targets": self.targets,
        }

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=1)
            fh.write("\n")


def domain_is_convex(mesh: PolyMesh) -> bool:
    hull = ConvexHull(mesh.vertices)
    return bool(abs(hull.volume - mesh.cell_areas.sum()) <= 1e-9 * hull.volume)


def projection_errors(manufactured, degree: int, mesh: PolyMesh) -> tuple:
    """Solver-free L2 projection defects (flux, scalar) on one mesh."""
    family = build_basis_family(mesh, degree)
    flux = project_flux(manufactured.q, family)
    scal = project_scalar(manufactured.u, family)
    dm = family.dofmap
    nk = dm.interior_dim // 2
    err_q = err_u = 0.0
    for c, eb in enumerate(family.cell_bases):
        qv = manufactured.q.value(eb.quad.points)
        sl = dm.interior_slice(c)
        dx = qv[:, 0] - eb.values_k @ flux.coeffs[sl.start : sl.start + nk]
        dy = qv[:, 1] - eb.values_k @ flux.coeffs[sl.start + nk : sl.stop]
        err_q += float(eb.quad.weights @ (dx**2 + dy**2))
        du = manufactured.u.value(eb.quad.points) - eb.values_k1 @ scal.coeffs[
            dm.scalar_slice(c)
        ]
        err_u += float(eb.quad.weights @ du**2)
    return math.sqrt(err_q), math.sqrt(err_u)


def run_projection_study(
    manufactured, degree: int, levels: Sequence[int],
    domain: tuple = (0.0, 0.0, 1.0, 1.0),
) -> dict:
    """Projection-error rates over a uniform refinement family, no solves."""
    errs_q, errs_u, hs = [], [], []
    for n in levels:
        mesh = generate_uniform_quad_mesh(n, domain)
        eq, eu = projection_errors(manufactured, degree, mesh)
        errs_q.append(eq)
        errs_u.append(eu)
        hs.append(mesh.h)
    return {
        "levels": list(levels),
        "h": hs,
        "proj_q": errs_q,
        "proj_u": errs_u,
        "rate_q": estimate_rates(errs_q, hs),
        "rate_u": estimate_rates(errs_u, hs),
        "targets": {"proj_q": degree + 1, "proj_u": degree + 2},
    }


def run_convergence_study(
    manufactured,
    degree: int,
    levels: Sequence[int],
    mesh_kind: str = "uniform",
    jitter: float = 0.0,
    seed: int = 0,
    rho: float = 1.0,
    domain: tuple = (0.0, 0.0, 1.0, 1.0),
    options: BasisOptions = BasisOptions(),
    solve_options: SolveOptions = SolveOptions(),
    solution_name: str = "",
    alpha_name: str = "",
) -> ConvergenceReport:
    """Solve on a refinement family and collect per-level error bundles."""
    report = None
    for i, n in enumerate(levels):
        if mesh_kind == "uniform":
            mesh = generate_uniform_quad_mesh(n, domain)
        elif mesh_kind == "perturbed":
            mesh = generate_perturbed_poly_mesh(n, jitter, seed=seed + i, domain=domain)
        else:
            raise ValueError(f"unknown mesh kind {mesh_kind!r}")
        if report is None:
            report = ConvergenceReport(
                degree=degree,
                solution=solution_name or getattr(manufactured, "name", ""),
                alpha=alpha_name or manufactured.alpha.name,
                rho=rho,
                mesh_kind=mesh_kind,
                jitter=jitter if mesh_kind == "perturbed" else 0.0,
                domain_convex=domain_is_convex(mesh),
            )
        system = assemble_system(
            mesh, degree, manufactured.alpha, manufactured.f, manufactured.g,
            rho=rho, options=options,
        )
        sol = solve(system, solve_options)
        bundle = error_bundle(sol, manufactured, system)
        report.levels.append(
            LevelRecord(
                level=i,
                n=n,
                h=mesh.h,
                errors=bundle,
                n_flux=system.dofmap.n_flux,
                n_scalar=system.dofmap.n_scalar,
                solve_seconds=sol.wall_time,
            )
        )
    return report


# ---------------------------------------------------------------------------
# random discrete fields
# ---------------------------------------------------------------------------


def random_scalar_field(family: BasisFamily, rng) -> ScalarField:
    return ScalarField(family.dofmap, rng.standard_normal(family.dofmap.n_scalar))


def random_flux_field(family: BasisFamily, rng) -> FluxField:
    return FluxField(family.dofmap, rng.standard_normal(family.dofmap.n_flux))


# ---------------------------------------------------------------------------
# inf-sup witness
# ---------------------------------------------------------------------------


def build_infsup_witness(phi: ScalarField, family: BasisFamily) -> FluxField:
    """The flux-space witness with interior part -grad(phi) and edge part
    h_e^{-1} * (edge projection of the jump of phi)."""
    mesh = family.mesh
    dm = family.dofmap
    nk = dm.interior_dim // 2
    out = FluxField(dm)
    for c, eb in enumerate(family.cell_bases):
        coeffs = phi.coeffs[dm.scalar_slice(c)]
        gv = np.einsum("pid,i->pd", eb.grads_k1, coeffs)
        wv = eb.quad.weights[:, None] * eb.values_k
        moments = np.stack([wv.T @ gv[:, 0], wv.T @ gv[:, 1]], axis=1)
        local = -eb.mass_solve_k(moments)
        sl = dm.interior_slice(c)
        out.coeffs[sl.start : sl.start + nk] = local[:, 0]
        out.coeffs[sl.start + nk : sl.stop] = local[:, 1]

    side_index = _cell_side_index(mesh)
    for e in range(mesh.n_edges):
        left, right = mesh.edge_cells[e]
        t = family.traces[left][side_index[left][e]]
        jump = t.values_k1 @ phi.coeffs[dm.scalar_slice(int(left))]
        if right >= 0:
            tr = family.traces[right][side_index[right][e]]
            jump = jump - tr.values_k1 @ phi.coeffs[dm.scalar_slice(int(right))]
        out.coeffs[dm.edge_slice(e)] = (t.edge_values.T @ (t.weights * jump)) / t.length
    return out


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityResult:
    name: str
    residual: float
    tolerance: float
    passed: bool
    detail: dict

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{status}  {self.name:24s} residual {self.residual:.3e}  tol {self.tolerance:.3e}"


@dataclass
class IdentityCheckReport:
    results: list

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __iter__(self):
        return iter(self.results)

    def get(self, name: str) -> IdentityResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def _boosted_cell_rules(mesh, family):
    return [
        cell_quadrature(mesh, c, family.cell_exactness + BOOST)
        for c in range(mesh.n_cells)
    ]


def _boosted_edge_rules(mesh, family):
    return [
        edge_quadrature(mesh, e, family.edge_exactness + BOOST)
        for e in range(mesh.n_edges)
    ]


def _commuting_identity(mesh, family, weakdiv, q_field: SmoothVectorField):
    """Residual of: weak-div of projected flux tested against P_{k+1} equals
    (div q, w)_T - <q.n - (edge projection of q.n), w>_dT."""
    if q_field.divergence is None:
        raise ValueError("q_field needs a divergence callback for this identity")
    dm = family.dofmap
    q_proj = project_flux(q_field, family)
    edge_coeffs = [q_proj.coeffs[dm.edge_slice(e)] for e in range(mesh.n_edges)]
    boost_cell = _boosted_cell_rules(mesh, family)
    boost_edge = _boosted_edge_rules(mesh, family)

    def rhs_for(c, eb, boosted):
        if boosted:
            rule = boost_cell[c]
            vals_k1 = eb.evaluate(rule.points, order="k1")
        else:
            rule = eb.quad
            vals_k1 = eb.values_k1
        div = q_field.divergence(rule.points)
        rhs = vals_k1.T @ (rule.weights * div)
        for i, t in enumerate(family.traces[c]):
            if boosted:
                erule = boost_edge[t.edge_id]
                pts, wts = erule.points, erule.weights
                psi = family.edge_bases[t.edge_id].evaluate(pts)
                tv = eb.evaluate(pts, order="k1")
            else:
                pts, wts, psi, tv = t.points, t.weights, t.edge_values, t.values_k1
            qn = q_field.value(pts) @ t.normal
            defect = qn - t.sign * (psi @ edge_coeffs[t.edge_id])
            rhs -= tv.T @ (wts * defect)
        return rhs

    residual = 0.0
    quad_tol = 0.0
    scale = 0.0
    for c, eb in enumerate(family.cell_bases):
        local = q_proj.coeffs[family.cell_flux_dofs[c]]
        lhs = weakdiv.moments[c] @ local
        rhs_d = rhs_for(c, eb, boosted=False)
        rhs_b = rhs_for(c, eb, boosted=True)
        residual = max(residual, float(np.abs(lhs - rhs_d).max()))
        quad_tol = max(quad_tol, float(np.abs(rhs_d - rhs_b).max()))
        scale = max(scale, float(np.abs(lhs).max()))
    tolerance = max(50.0 * quad_tol, 1e-12 * (1.0 + scale))
    return IdentityResult(
        name="commuting_projection",
        residual=residual,
        tolerance=tolerance,
        passed=residual <= tolerance,
        detail={"quad_tol": quad_tol},
    )


def _divergence_pairing_identity(
    mesh, family, weakdiv, w_field: SmoothScalarField, rng
):
    """Residual of: (weak-div v, P w)_T = -(v_0, grad w)_T
    + <(v_0-v_b).n, w - P w>_dT + <v_b.n, w>_dT for random discrete v."""
    if w_field.gradient is None:
        raise ValueError("w_field needs a gradient callback for this identity")
    dm = family.dofmap
    nk = dm.interior_dim // 2
    v = random_flux_field(family, rng)
    w_proj = project_scalar(w_field, family)
    boost_cell = _boosted_cell_rules(mesh, family)
    boost_edge = _boosted_edge_rules(mesh, family)

    def rhs_for(c, eb, boosted):
        sl = dm.interior_slice(c)
        cx = v.coeffs[sl.start : sl.start + nk]
        cy = v.coeffs[sl.start + nk : sl.stop]
        u_loc = w_proj.coeffs[dm.scalar_slice(c)]
        if boosted:
            rule = boost_cell[c]
            vals_k = eb.evaluate(rule.points, order="k")
        else:
            rule = eb.quad
            vals_k = eb.values_k
        gw = w_field.gradient(rule.points)
        v0 = np.stack([vals_k @ cx, vals_k @ cy], axis=1)
        total = -float(rule.weights @ np.einsum("pd,pd->p", v0, gw))
        for t in family.traces[c]:
            if boosted:
                erule = boost_edge[t.edge_id]
                pts, wts = erule.points, erule.weights
                psi = family.edge_bases[t.edge_id].evaluate(pts)
                tvk = eb.evaluate(pts, order="k")
                tvk1 = eb.evaluate(pts, order="k1")
            else:
                pts, wts, psi = t.points, t.weights, t.edge_values
                tvk, tvk1 = t.values_k, t.values_k1
            wv = w_field.value(pts)
            pw = tvk1 @ u_loc
            v0n = (tvk @ cx) * t.normal[0] + (tvk @ cy) * t.normal[1]
            vbn = t.sign * (psi @ v.coeffs[dm.edge_slice(t.edge_id)])
            total += float(wts @ ((v0n - vbn) * (wv - pw)))
            total += float(wts @ (vbn * wv))
        return total

    residual = 0.0
    quad_tol = 0.0
    scale = 0.0
    for c, eb in enumerate(family.cell_bases):
        local = v.coeffs[family.cell_flux_dofs[c]]
        lhs = float((weakdiv.moments[c] @ local) @ w_proj.coeffs[dm.scalar_slice(c)])
        rhs_d = rhs_for(c, eb, boosted=False)
        rhs_b = rhs_for(c, eb, boosted=True)
        residual = max(residual, abs(lhs - rhs_d))
        quad_tol = max(quad_tol, abs(rhs_d - rhs_b))
        scale = max(scale, abs(lhs))
    tolerance = max(50.0 * quad_tol, 1e-12 * (1.0 + scale))
    return IdentityResult(
        name="divergence_pairing",
        residual=residual,
        tolerance=tolerance,
        passed=residual <= tolerance,
        detail={"quad_tol": quad_tol},
    )


def _edge_dominance_identity(mesh, family, q_field: SmoothVectorField):
    """Edgewise inequality: the edge projection defect of q.n never exceeds the
    trace defect of the interior projection."""
    dm = family.dofmap
    q_int = project_flux(q_field, family)
    nk = dm.interior_dim // 2
    boost_edge = _boosted_edge_rules(mesh, family)
    worst = -np.inf
    quad_tol = 0.0
    scale = 0.0
    side_index = _cell_side_index(mesh)
    for c, eb in enumerate(family.cell_bases):
        sl = dm.interior_slice(c)
        cx = q_int.coeffs[sl.start : sl.start + nk]
        cy = q_int.coeffs[sl.start + nk : sl.stop]
        for t in family.traces[c]:
            ce = q_int.coeffs[dm.edge_slice(t.edge_id)]
            vals = {}
            for boosted in (False, True):
                if boosted:
                    erule = boost_edge[t.edge_id]
                    pts, wts = erule.points, erule.weights
                    psi = family.edge_bases[t.edge_id].evaluate(pts)
                    tvk = eb.evaluate(pts, order="k")
                else:
                    pts, wts, psi, tvk = t.points, t.weights, t.edge_values, t.values_k
                qn = q_field.value(pts) @ t.normal
                lhs = math.sqrt(float(wts @ (qn - t.sign * (psi @ ce)) ** 2))
                q0n = (tvk @ cx) * t.normal[0] + (tvk @ cy) * t.normal[1]
                rhs = math.sqrt(float(wts @ (qn - q0n) ** 2))
                vals[boosted] = (lhs, rhs)
            lhs_b, rhs_b = vals[True]
            lhs_d, rhs_d = vals[False]
            worst = max(worst, lhs_b - rhs_b)
            quad_tol = max(quad_tol, abs(lhs_b - lhs_d) + abs(rhs_b - rhs_d))
            scale = max(scale, rhs_b)
    tolerance = max(50.0 * quad_tol, 1e-12 * (1.0 + scale))
    return IdentityResult(
        name="edge_dominance",
        residual=max(worst, 0.0),
        tolerance=tolerance,
        passed=worst <= tolerance,
        detail={"quad_tol": quad_tol},
    )


def _witness_identity(family, B, A_s, n_witness, rng):
    """Exact equality b(v, phi) = |phi|_{1,h}^2 for the inf-sup witness, and the
    measured energy-to-broken-H1 ratio of the witness."""
    worst = 0.0
    ratio = 0.0
    for _ in range(n_witness):
        phi = random_scalar_field(family, rng)
        v = build_infsup_witness(phi, family)
        b_val = float(phi.coeffs @ (B @ v.coeffs))
        norm_sq = h1h_norm(phi, family) ** 2
        worst = max(worst, abs(b_val - norm_sq) / norm_sq)
        energy = math.sqrt(max(float(v.coeffs @ (A_s @ v.coeffs)), 0.0))
        ratio = max(ratio, energy / math.sqrt(norm_sq))
    tolerance = 1e-11
    return IdentityResult(
        name="infsup_witness",
        residual=worst,
        tolerance=tolerance,
        passed=worst <= tolerance,
        detail={"witness_ratio": ratio, "n_witness": n_witness},
    )


def local_conservation_residuals(
    solution: Solution, f, family: BasisFamily
) -> np.ndarray:
    """Per-cell |boundary flux - load integral| normalized by 1 + ||f||_L1(T)."""
    dm = family.dofmap
    out = np.empty(family.n_cells)
    for c, eb in enumerate(family.cell_bases):
        fv = f.value(eb.quad.points)
        load = float(eb.quad.weights @ fv)
        f_l1 = float(eb.quad.weights @ np.abs(fv))
        outflux = 0.0
        for t in family.traces[c]:
            ce = solution.flux.coeffs[dm.edge_slice(t.edge_id)]
            outflux += t.sign * float(t.weights @ (t.edge_values @ ce))
        out[c] = abs(outflux - load) / (1.0 + f_l1)
    return out


def _conservation_identity(mesh, family, weakdiv, manufactured, rho, solve_options):
    system = assemble_system(
        mesh,
        family.degree,
        manufactured.alpha,
        manufactured.f,
        manufactured.g,
        rho=rho,
        family=family,
        weakdiv=weakdiv,
    )
    sol = solve(system, solve_options)
    res = local_conservation_residuals(sol, manufactured.f, family)
    tolerance = 1e-11
    worst = float(res.max())
    return IdentityResult(
        name="local_conservation",
        residual=worst,
        tolerance=tolerance,
        passed=worst <= tolerance,
        detail={"n_cells": mesh.n_cells},
    )


def check_identities(
    mesh: PolyMesh,
    degree: int,
    q_field: Optional[SmoothVectorField] = None,
    w_field: Optional[SmoothScalarField] = None,
    manufactured=None,
    alpha: Optional[CoefficientField] = None,
    rho: float = 1.0,
    options: BasisOptions = BasisOptions(),
    n_witness: int = 20,
    seed: int = 0,
    solve_options: SolveOptions = SolveOptions(),
) -> IdentityCheckReport:
    """Evaluate the scheme's exact identities on one mesh; always returns.

    Defaults: q = (e^x, sin y) and w = cos(pi x) y as smooth test fields, the
    identity coefficient for the witness energy norm.  The conservation check
    runs only when a manufactured solution is supplied (it needs a solve).
    """
    from .solutions import smooth_scalar_from_expr, smooth_vector_from_expr

    if q_field is None:
        q_field = smooth_vector_from_expr(("exp(x)", "sin(y)"), name="exp-sin")
    if w_field is None:
        w_field = smooth_scalar_from_expr("cos(pi*x)*y", name="cos-linear")
    if alpha is None:
        alpha = manufactured.alpha if manufactured is not None else identity_coefficient()

    family = build_basis_family(mesh, degree, options)
    weakdiv = build_weakdiv(family)
    B = assemble_b(family, weakdiv)
    A_s = (assemble_a(family, alpha) + assemble_s(family, rho)).tocsr()
    rng = np.random.default_rng(seed)

    results = [
        _commuting_identity(mesh, family, weakdiv, q_field),
        _divergence_pairing_identity(mesh, family, weakdiv, w_field, rng),
        _edge_dominance_identity(mesh, family, q_field),
        _witness_identity(family, B, A_s, n_witness, rng),
    ]
    if manufactured is not None:
        results.append(
            _conservation_identity(mesh, family, weakdiv, manufactured, rho, solve_options)
        )
    return IdentityCheckReport(results=results)


# ---------------------------------------------------------------------------
# empirical trace / inverse inequality constants
# ---------------------------------------------------------------------------


def measure_inverse_constant(mesh: PolyMesh, degree: int) -> float:
    """Sharp constant sup over P_{k+1}(T) of h_T ||grad phi|| / ||phi||, maxed
    over cells.

    The supremum over the random-field ensemble is the top generalized
    eigenvalue of the gradient Gram matrix against the mass matrix, computed
    here exactly so the diagnostic is deterministic.
    """
    family = build_basis_family(mesh, degree, BasisOptions(orthonormalize=True))
    worst = 0.0
    for eb in family.cell_bases:
        gram = np.einsum("p,pid,pjd->ij", eb.quad.weights, eb.grads_k1, eb.grads_k1)
        lam = float(np.linalg.eigvalsh(gram).max())  # mass matrix is identity
        worst = max(worst, eb.h * math.sqrt(max(lam, 0.0)))
    return worst


def measure_trace_constant(mesh: PolyMesh, degree: int) -> float:
    """Sharp constant sup of ||phi||_e^2 / (h_T^{-1}||phi||_T^2 + h_T||grad phi||_T^2)
    over phi in P_{k+1}(T), maxed over cells and their edges."""
    from scipy.linalg import eigh

    family = build_basis_family(mesh, degree, BasisOptions(orthonormalize=True))
    worst = 0.0
    for eb in family.cell_bases:
        gram = np.einsum("p,pid,pjd->ij", eb.quad.weights, eb.grads_k1, eb.grads_k1)
        denom = np.eye(eb.dim_k1) / eb.h + eb.h * gram
        for t in family.traces[eb.cell_id]:
            edge_gram = t.values_k1.T @ (t.weights[:, None] * t.values_k1)
            lam = float(eigh(edge_gram, denom, eigvals_only=True).max())
            worst = max(worst, lam)
    return worst

"""Weak Galerkin mixed finite elements for elliptic problems on polygonal meshes.

The package discretizes the first-order system  alpha q + grad u = 0,
div q = f  with u = -g on the boundary, using discontinuous vector
polynomials plus edge-normal traces for the flux and one-degree-higher
discontinuous scalars, coupled through a discrete weak divergence.  A
verification harness measures the scheme's exact algebraic identities and its
convergence orders against manufactured solutions.

Submodules are imported lazily so that lightweight entry points can configure
the process (e.g. thread caps) before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # mesh
    "PolyMesh": ".mesh",
    "ElementGeometry": ".mesh",
    "RegularityReport": ".mesh",
    "MeshError": ".mesh",
    "MeshFormatError": ".mesh",
    "MeshGeometryError": ".mesh",
    "generate_uniform_quad_mesh": ".mesh",
    "generate_perturbed_poly_mesh": ".mesh",
    "check_regularity": ".mesh",
    "read_mesh": ".mesh",
    "write_mesh": ".mesh",
    "meshes_equal": ".mesh",
    "flip_edge_orientation": ".mesh",
    "euler_characteristic": ".mesh",
    # quadrature
    "QuadratureRule": ".quadrature",
    "QuadratureError": ".quadrature",
    "cell_quadrature": ".quadrature",
    "edge_quadrature": ".quadrature",
    # bases
    "BasisOptions": ".basis",
    "ElementBasis": ".basis",
    "EdgeBasis": ".basis",
    "BasisFamily": ".basis",
    "build_element_basis": ".basis",
    "build_edge_basis": ".basis",
    "build_basis_family": ".basis",
    # dofs and fields
    "DofMap": ".fields",
    "FluxField": ".fields",
    "ScalarField": ".fields",
    "poly_dim": ".fields",
    # projections
    "SmoothScalarField": ".projection",
    "SmoothVectorField": ".projection",
    "project_interior": ".projection",
    "project_edge_normal": ".projection",
    "project_flux": ".projection",
    "project_scalar": ".projection",
    # weak divergence
    "WeakDivOperator": ".weakdiv",
    "build_weakdiv": ".weakdiv",
    "apply_weakdiv": ".weakdiv",
    # forms
    "CoefficientField": ".forms",
    "CoefficientError": ".forms",
    "SaddleSystem": ".forms",
    "identity_coefficient": ".forms",
    "constant_coefficient": ".forms",
    "assemble_a": ".forms",
    "assemble_s": ".forms",
    "assemble_b": ".forms",
    "assemble_rhs": ".forms",
    "assemble_system": ".forms",
    "dump_system": ".forms",
    # solver
    "SolveOptions": ".solver",
    "Solution": ".solver",
    "SolverError": ".solver",
    "NonConvergenceError": ".solver",
    "solve": ".solver",
    # manufactured solutions
    "ManufacturedSolution": ".solutions",
    "get_manufactured": ".solutions",
    "manufactured_from_expr": ".solutions",
    "smooth_scalar_from_expr": ".solutions",
    "smooth_vector_from_expr": ".solutions",
    # analysis
    "ErrorBundle": ".analysis",
    "ConvergenceReport": ".analysis",
    "IdentityCheckReport": ".analysis",
    "triple_bar_norm": ".analysis",
    "h1h_norm": ".analysis",
    "l2_norm_scalar": ".analysis",
    "l2_norm_flux_interior": ".analysis",
    "defect_energy_norm": ".analysis",
    "error_bundle": ".analysis",
    "estimate_rates": ".analysis",
    "run_convergence_study": ".analysis",
    "check_identities": ".analysis",
    "build_infsup_witness": ".analysis",
    "local_conservation_residuals": ".analysis",
    "measure_inverse_constant": ".analysis",
    "measure_trace_constant": ".analysis",
    "domain_is_convex": ".analysis",
    # report
    "save_convergence_figure": ".report",
    "save_mesh_figure": ".report",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    return getattr(importlib.import_module(module, __name__), name)


def __dir__():
    return __all__ + ["__version__"]

"""Command-line driver for solves, convergence studies, mesh and identity checks.

Exit codes: 0 success, 2 usage error, 3 solver non-convergence, 4 a checked
threshold failed (rate window, identity residual, or mesh regularity).

Configuration can come from a JSON file (--config) whose keys mirror the flag
names one-to-one; explicit flags override file values.  The environment
variable WGMFEM_NUM_THREADS caps the BLAS thread pools for reproducible
single-threaded runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NONCONVERGENCE = 3
EXIT_CHECK_FAILED = 4

_SOLVER_ALIASES = {
    "direct": "direct-factorization",
    "schur-cg": "schur-complement-cg",
}


def _apply_thread_cap() -> None:
    cap = os.environ.get("WGMFEM_NUM_THREADS")
    if cap:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, cap)


@dataclass
class RunConfig:
    """Resolved run configuration; JSON config files mirror these field names."""

    command: str = ""
    gen: str = "uniform"
    mesh: Optional[str] = None
    n: int = 8
    n0: int = 4
    levels: int = 4
    jitter: float = 0.2
    seed: int = 0
    k: int = 0
    rho: float = 1.0
    solution: str = "sinsin"
    alpha: str = "identity"
    solver: Optional[str] = None
    tol: float = 1e-10
    max_iter: Optional[int] = None
    out: str = "."
    plot: bool = True
    rate_tol: Optional[float] = None
    dump_system: bool = False
    projection_only: bool = False


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wgmfem",
        description="Weak Galerkin mixed finite elements on polygonal meshes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_solution=True):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--gen", choices=["uniform", "perturbed"],
                       help="mesh generator (default uniform)")
        p.add_argument("--mesh", help="mesh file path (overrides --gen)")
        p.add_argument("--jitter", type=float, help="perturbation fraction in [0, 0.3]")
        p.add_argument("--seed", type=int, help="generator seed")
        p.add_argument("--out", help="output directory (default .)")
        if with_solution:
            p.add_argument("--k", type=int, choices=[0, 1, 2, 3], help="flux degree")
            p.add_argument("--rho", type=float, help="stabilization parameter (> 0)")
            p.add_argument("--solution", choices=["affine", "sinsin", "polycos"],
                           help="manufactured solution")
            p.add_argument("--alpha", choices=["identity", "variable"],
                           help="diffusion coefficient")
            p.add_argument("--solver",
                           choices=["direct-factorization", "schur-complement-cg",
                                    "minres", "direct", "schur-cg"],
                           help="solver method (default: by system size)")
            p.add_argument("--tol", type=float, help="solver residual tolerance")
            p.add_argument("--max-iter", dest="max_iter", type=int,
                           help="iteration cap for iterative solvers")

    p_solve = sub.add_parser("solve", help="single solve against a manufactured solution")
    add_common(p_solve)
    p_solve.add_argument("--n", type=int, help="cells per side for generated meshes")
    p_solve.add_argument("--dump-system", dest="dump_system", action="store_true",
                         default=None, help="write the assembled blocks as triplet text")

    p_conv = sub.add_parser("converge", help="refinement study with rate checks")
    add_common(p_conv)
    p_conv.add_argument("--n0", type=int, help="coarsest cells per side")
    p_conv.add_argument("--levels", type=int, help="number of refinement levels (>= 2)")
    p_conv.add_argument("--rate-tol", dest="rate_tol", type=float,
                        help="rate tolerance (default 0.15 uniform, 0.2 perturbed)")
    p_conv.add_argument("--projection-only", dest="projection_only",
                        action="store_true", default=None,
                        help="measure projection-error rates without solving")
    p_conv.add_argument("--plot", dest="plot", action="store_true", default=None,
                        help="write a log-log error figure (default)")
    p_conv.add_argument("--no-plot", dest="plot", action="store_false", default=None)

    p_mesh = sub.add_parser("check-mesh", help="shape-regularity diagnostics")
    add_common(p_mesh, with_solution=False)
    p_mesh.add_argument("--n", type=int, help="cells per side for generated meshes")
    p_mesh.add_argument("--k", type=int, choices=[0, 1, 2, 3],
                        help="also report trace/inverse inequality constants "
                             "for degree k+1 fields")
    p_mesh.add_argument("--plot", dest="plot", action="store_true", default=None)
    p_mesh.add_argument("--no-plot", dest="plot", action="store_false", default=None)

    p_id = sub.add_parser("check-identities", help="exact-identity residual checks")
    add_common(p_id)
    p_id.add_argument("--n", type=int, help="cells per side for generated meshes")

    return parser


def _resolve_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> RunConfig:
    merged = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config file {config_path}: {exc}")
        unknown = set(file_cfg) - _CONFIG_KEYS
        if unknown:
            parser.error(f"unknown config keys {sorted(unknown)}")
        merged.update(file_cfg)
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    cfg = RunConfig(**{k: v for k, v in merged.items() if k in _CONFIG_KEYS})
    if cfg.solver in _SOLVER_ALIASES:
        cfg.solver = _SOLVER_ALIASES[cfg.solver]

    if cfg.command == "converge" and cfg.levels < 2:
        parser.error("converge needs at least 2 levels")
    if not 0.0 <= cfg.jitter <= 0.3:
        parser.error("jitter must lie in [0, 0.3]")
    if cfg.rho <= 0:
        parser.error("rho must be positive")
    return cfg


def _load_mesh(cfg: RunConfig, n: int):
    from . import mesh as mesh_mod

    if cfg.mesh:
        return mesh_mod.read_mesh(cfg.mesh)
    if cfg.gen == "perturbed":
        return mesh_mod.generate_perturbed_poly_mesh(n, cfg.jitter, seed=cfg.seed)
    return mesh_mod.generate_uniform_quad_mesh(n)


def _solve_options(cfg: RunConfig):
    from .solver import SolveOptions

    return SolveOptions(method=cfg.solver, tol=cfg.tol, max_iter=cfg.max_iter)


def _cmd_solve(cfg: RunConfig) -> int:
    import numpy as np

    from .analysis import error_bundle
    from .forms import assemble_system, dump_system
    from .solutions import get_manufactured
    from .solver import solve

    mesh = _load_mesh(cfg, cfg.n)
    man = get_manufactured(cfg.solution, cfg.alpha)
    system = assemble_system(mesh, cfg.k, man.alpha, man.f, man.g, rho=cfg.rho)
    sol = solve(system, _solve_options(cfg))
    bundle = error_bundle(sol, man, system)

    os.makedirs(cfg.out, exist_ok=True)
    np.savetxt(os.path.join(cfg.out, "flux_coeffs.txt"), sol.flux.coeffs, fmt="%.17g")
    np.savetxt(os.path.join(cfg.out, "scalar_coeffs.txt"), sol.scalar.coeffs, fmt="%.17g")
    with open(os.path.join(cfg.out, "errors.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "solution": cfg.solution,
                "alpha": cfg.alpha,
                "k": cfg.k,
                "rho": cfg.rho,
                "method": sol.method,
                "iterations": sol.iterations,
                "wall_time": sol.wall_time,
                **bundle.as_dict(),
            },
            fh,
            indent=1,
        )
        fh.write("\n")
    if cfg.dump_system:
        dump_system(system, os.path.join(cfg.out, "system.txt"))

    print(f"solved {cfg.solution}/{cfg.alpha} k={cfg.k} on {mesh.n_cells} cells "
          f"({sol.method}, {sol.wall_time:.3f}s)")
    for name, value in bundle.as_dict().items():
        print(f"  {name:14s} {value:.6e}")
    return EXIT_OK


def _cmd_projection_rates(cfg: RunConfig, levels) -> int:
    from .analysis import run_projection_study
    from .solutions import get_manufactured

    man = get_manufactured(cfg.solution, cfg.alpha)
    study = run_projection_study(man, cfg.k, levels)
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "projection.csv"), "w", encoding="utf-8") as fh:
        fh.write("level,h,proj_q,proj_u,rate_q,rate_u\n")
        for i, n in enumerate(study["levels"]):
            rq = "" if i == 0 else f"{study['rate_q'][i - 1]:.17g}"
            ru = "" if i == 0 else f"{study['rate_u'][i - 1]:.17g}"
            fh.write(
                f"{i},{study['h'][i]:.17g},{study['proj_q'][i]:.17g},"
                f"{study['proj_u'][i]:.17g},{rq},{ru}\n"
            )
    tol = cfg.rate_tol if cfg.rate_tol is not None else 0.15
    rate_q, rate_u = study["rate_q"][-1], study["rate_u"][-1]
    ok_q = rate_q is not None and abs(rate_q - (cfg.k + 1)) <= tol
    ok_u = rate_u is not None and abs(rate_u - (cfg.k + 2)) <= tol
    print(f"projection rates {cfg.solution}/{cfg.alpha} k={cfg.k}: "
          f"flux {rate_q:.3f} (target {cfg.k + 1}) {'ok' if ok_q else 'FAIL'}, "
          f"scalar {rate_u:.3f} (target {cfg.k + 2}) {'ok' if ok_u else 'FAIL'}")
    return EXIT_OK if (ok_q and ok_u) else EXIT_CHECK_FAILED


def _cmd_converge(cfg: RunConfig) -> int:
    from .analysis import run_convergence_study
    from .solutions import get_manufactured

    levels = [cfg.n0 * 2**i for i in range(cfg.levels)]
    if cfg.projection_only:
        return _cmd_projection_rates(cfg, levels)
    man = get_manufactured(cfg.solution, cfg.alpha)
    mesh_kind = "perturbed" if (cfg.gen == "perturbed" and not cfg.mesh) else "uniform"
    report = run_convergence_study(
        man,
        cfg.k,
        levels,
        mesh_kind=mesh_kind,
        jitter=cfg.jitter if mesh_kind == "perturbed" else 0.0,
        seed=cfg.seed,
        rho=cfg.rho,
        solve_options=_solve_options(cfg),
        solution_name=cfg.solution,
        alpha_name=cfg.alpha,
    )

    os.makedirs(cfg.out, exist_ok=True)
    report.to_csv(os.path.join(cfg.out, "convergence.csv"))
    report.write_summary(os.path.join(cfg.out, "summary.json"))
    if cfg.plot:
        from .report import save_convergence_figure

        save_convergence_figure(report, os.path.join(cfg.out, "convergence.png"))

    targets = report.targets
    tol = cfg.rate_tol if cfg.rate_tol is not None else (
        0.2 if mesh_kind == "perturbed" else 0.15
    )
    print(f"{cfg.solution}/{cfg.alpha} k={cfg.k} rho={cfg.rho:g} {mesh_kind}: "
          f"levels n={levels}")
    print(f"{'norm':14s} {'observed':>9s} {'target':>7s}")
    checks = []
    for name, label in (("triple_bar_q", "triple_bar_q"), ("h1h_u", "h1h_u"),
                        ("l2_u", "l2_u")):
        rate = report.final_rate(name)
        target = targets[name]
        # upper-bound theory: flux and broken-H1 rates may exceed the target on
        # structured meshes, so only the L2 rate is checked two-sided
        if name == "l2_u":
            ok = rate is not None and abs(rate - target) <= tol
        else:
            ok = rate is not None and rate >= target - tol
        checks.append(ok)
        print(f"{label:14s} {rate:9.3f} {target:7d}  {'ok' if ok else 'FAIL'}")
    if report.domain_convex:
        all_ok = all(checks)
    else:
        # the L2 order needs dual regularity; flag and skip that assertion
        print("domain not convex: L2 rate reported but not asserted")
        all_ok = all(checks[:2])
    return EXIT_OK if all_ok else EXIT_CHECK_FAILED


def _cmd_check_mesh(cfg: RunConfig) -> int:
    from .analysis import measure_inverse_constant, measure_trace_constant
    from .mesh import check_regularity

    mesh = _load_mesh(cfg, cfg.n)
    report = check_regularity(mesh)
    summary = report.summary()
    if report.all_star_shaped:
        summary["inverse_constant"] = measure_inverse_constant(mesh, cfg.k)
        summary["trace_constant"] = measure_trace_constant(mesh, cfg.k)
        summary["inequality_degree"] = cfg.k + 1
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "regularity.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    if cfg.plot:
        from .report import save_mesh_figure

        save_mesh_figure(mesh, os.path.join(cfg.out, "mesh.png"))
    print(f"mesh: {mesh.n_cells} cells, {mesh.n_edges} edges, h = {mesh.h:.6g}")
    for key, value in summary.items():
        print(f"  {key:20s} {value}")
    return EXIT_OK if report.all_star_shaped else EXIT_CHECK_FAILED


def _cmd_check_identities(cfg: RunConfig) -> int:
    from .analysis import check_identities
    from .solutions import get_manufactured

    mesh = _load_mesh(cfg, cfg.n)
    man = get_manufactured(cfg.solution, cfg.alpha)
    report = check_identities(
        mesh, cfg.k, manufactured=man, rho=cfg.rho,
        solve_options=_solve_options(cfg), seed=cfg.seed,
    )
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "identities.json"), "w", encoding="utf-8") as fh:
        json.dump(
            [
                {"name": r.name, "residual": r.residual, "tolerance": r.tolerance,
                 "passed": r.passed, **r.detail}
                for r in report
            ],
            fh,
            indent=1,
        )
        fh.write("\n")
    for r in report:
        print(r.line())
    return EXIT_OK if report.all_passed else EXIT_CHECK_FAILED


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = _build_parser()
    args = parser.parse_args(argv)
    cfg = _resolve_config(args, parser)
    cfg.command = args.command

    from .solver import NonConvergenceError

    handler = {
        "solve": _cmd_solve,
        "converge": _cmd_converge,
        "check-mesh": _cmd_check_mesh,
        "check-identities": _cmd_check_identities,
    }[cfg.command]
    try:
        return handler(cfg)
    except NonConvergenceError as exc:
        print(f"solver failed to converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
